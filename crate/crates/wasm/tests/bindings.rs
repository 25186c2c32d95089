use oni_wasm::{convergence_values, group_values, spectrum_values, VARIANTS};

#[test]
fn convergence_has_one_block_per_variant() {
    let t = 6;
    let v = convergence_values(16, 48, 3.0, t, 0).unwrap();
    assert_eq!(v.len(), VARIANTS.len() * (t + 1));
    let block = |k: usize| &v[k * (t + 1)..(k + 1) * (t + 1)];
    for k in 0..VARIANTS.len() {
        assert!(block(k).windows(2).all(|w| w[1] < w[0]), "variant {k}: {:?}", block(k));
    }
    // Centering removes the large common mean, so it starts far closer.
    assert!(block(1)[1] < block(0)[1]);
}

#[test]
fn spectrum_rises_to_one() {
    let (rows, cols, t) = (6, 10, 30);
    let v = spectrum_values(rows, cols, t, true, 2).unwrap();
    assert_eq!(v.len(), (t + 1) * rows);
    let last = &v[t * rows..];
    assert!(last.iter().all(|s| (s - 1.0).abs() <= 1e-9), "{last:?}");
    for j in 0..rows {
        assert!((0..t).all(|i| v[(i + 1) * rows + j] >= v[i * rows + j] - 1e-12));
    }
}

#[test]
fn smaller_groups_leave_more_row_error() {
    let full = group_values(32, 32, 32, 0).unwrap();
    let half = group_values(32, 32, 16, 0).unwrap();
    assert!(full[0] <= 1e-6 && full[1] <= 1e-6);
    assert!(half[0] > 1.0);
}

#[test]
fn bad_requests_are_rejected() {
    assert!(convergence_values(0, 4, 0.0, 3, 0).is_err());
    assert!(convergence_values(4, 4, 0.0, 500, 0).is_err());
    assert!(spectrum_values(4, 300, 3, false, 0).is_err());
    assert!(group_values(8, 4, 9, 0).is_err());
}
