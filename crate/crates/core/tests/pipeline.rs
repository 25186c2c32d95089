//! End-to-end checks through the public API: orthogonalization against the
//! eigen baseline, gradients against finite differences, training, and IDX
//! parsing from disk.

use oni_core::baselines::{olm_orthogonalize, spectral_normalize, weight_normalize, SnState};
use oni_core::data::{load_idx, synth_dataset};
use oni_core::nn::{train_mlp, Method, MlpConfig};
use oni_core::oni::{compact_spectral_bound, delta_col, delta_row, group_oni_forward};
use oni_core::rng::{gaussian_matrix, seeded};
use oni_core::spectral::singular_values;
use oni_core::{grad_check, oni_forward, orthogonality_error, DenseMatrix, OniConfig};

#[test]
fn oni_matches_eigen_baseline_on_well_conditioned_input() {
    let z = gaussian_matrix(&mut seeded(11, 0), 16, 48, 0.0, 1.0);
    let cfg = OniConfig::basic(30).with_flags(false, true);
    let (w, _) = oni_forward(&z, &cfg).unwrap();
    let (v, _) = compact_spectral_bound(&z, cfg.zero_norm_eps).unwrap();
    let olm = olm_orthogonalize(&v).unwrap();
    assert!(w.sub(&olm).frobenius_norm() / olm.frobenius_norm() <= 1e-9);
    assert!(delta_row(&w) <= 1e-9);
}

#[test]
fn tall_input_gets_orthonormal_columns() {
    let z = gaussian_matrix(&mut seeded(12, 0), 40, 10, 0.0, 1.0);
    let (w, _) = oni_forward(&z, &OniConfig::basic(30).with_flags(false, true)).unwrap();
    let diag = orthogonality_error(&w).unwrap();
    assert!(diag.delta_col <= 1e-8, "{diag:?}");
    assert!(diag.sigmas.iter().all(|s| (s - 1.0).abs() <= 1e-8));
}

#[test]
fn baselines_differ_as_expected() {
    let w = gaussian_matrix(&mut seeded(13, 0), 8, 12, 0.0, 1.0);
    let mut state = SnState::new(13);
    let sn = spectral_normalize(&w, &mut state, 50).unwrap();
    let sv = singular_values(&sn).unwrap();
    assert!((sv[0] - 1.0).abs() <= 1e-6);
    // Spectral normalization divides uniformly, so the spread survives.
    assert!(sv[sv.len() - 1] < 0.5);

    let wn = weight_normalize(&w).unwrap();
    for r in 0..wn.rows() {
        let n: f64 = wn.row(r).iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn every_flag_combination_has_exact_gradients() {
    let mut rng = seeded(14, 0);
    for (r, c) in [(4, 6), (6, 4)] {
        let z = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
        let dw = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
        for (centering, compact) in [(false, false), (true, false), (false, true), (true, true)] {
            for cfg in [OniConfig::basic(4), OniConfig::accelerated(4)] {
                let cfg = cfg.with_flags(centering, compact).with_scale(1.5);
                let rep = grad_check(&z, &cfg, &dw, 1e-5).unwrap();
                assert!(rep.max_rel_error <= 1e-5, "{r}x{c} {cfg:?}: {}", rep.max_rel_error);
            }
        }
    }
}

#[test]
fn groups_orthogonalize_independently() {
    let z = gaussian_matrix(&mut seeded(15, 0), 12, 8, 0.0, 1.0);
    let w = group_oni_forward(&z, 4, &OniConfig::basic(30).with_flags(false, true)).unwrap();
    for g in 0..3 {
        assert!(delta_row(&w.row_block(4 * g, 4 * g + 4)) <= 1e-8);
    }
    // Rows across groups are not mutually orthogonal, and 12 rows cannot
    // be orthonormal in 8 dimensions anyway.
    assert!(delta_row(&w) > 1.0);
    assert!(delta_col(&w) > 1e-3);
}

#[test]
fn oni_network_learns_separable_data() {
    let train = synth_dataset(1, 40, 4, 16, 3.0).unwrap();
    let test = synth_dataset(2, 20, 4, 16, 3.0).unwrap();
    let cfg = MlpConfig {
        depth: 2,
        width: 16,
        input_dim: 16,
        output_dim: 4,
        iterations: 5,
        batch_size: 16,
        epochs: 5,
        method: Method::Oni,
        seed: 3,
        ..MlpConfig::default()
    };
    let metrics = train_mlp(&cfg, &train, &test).unwrap();
    assert_eq!(metrics.len(), 5);
    assert!(metrics[4].train_loss < metrics[0].train_loss);
    assert!(metrics[4].test_error <= 0.1, "{metrics:?}");
    assert_eq!(metrics, train_mlp(&cfg, &train, &test).unwrap());
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

#[test]
fn idx_files_load_from_disk() {
    let dir = std::env::temp_dir().join(format!("oni-idx-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let images = dir.join("images");
    let labels = dir.join("labels");
    std::fs::write(&images, idx_bytes(0x803, &[3, 1, 2], &[0, 255, 51, 102, 255, 0])).unwrap();
    std::fs::write(&labels, idx_bytes(0x801, &[3], &[7, 0, 9])).unwrap();

    let ds = load_idx(&images, &labels).unwrap();
    assert_eq!(ds.labels, vec![7, 0, 9]);
    let want = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.2, 0.4], vec![1.0, 0.0]]).unwrap();
    assert!(ds.features.sub(&want).max_abs() <= 1e-15);

    std::fs::write(&labels, idx_bytes(0x801, &[2], &[7, 0])).unwrap();
    assert!(load_idx(&images, &labels).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
