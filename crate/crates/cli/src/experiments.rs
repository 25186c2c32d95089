use std::time::Instant;

use oni_core::data::{load_idx, synth_dataset, Dataset};
use oni_core::grad::grad_check;
use oni_core::nn::{probe_magnitudes, theorem1_check, theorem2_check, train_mlp, Method, Mlp, MlpConfig};
use oni_core::oni::{delta_attainable, delta_col, delta_row, group_oni_forward, oni_forward, OniConfig};
use oni_core::rng::{gaussian_matrix, seeded};
use oni_core::spectral::singular_values;
use oni_core::DenseMatrix;

use crate::record;
use crate::spec::{Experiment, ExperimentSpec};
use crate::table::{emit_csv, Value};
use crate::CliError;

pub const CONVERGE_SCHEMA: [&str; 7] = [
    "variant",
    "seed",
    "iter",
    "delta_row",
    "delta_col",
    "sigma_min",
    "sigma_max",
];
pub const TABLE_A2_SCHEMA: [&str; 4] = ["method", "seed", "delta_row", "delta_col"];
pub const TABLE_A2_SUMMARY_SCHEMA: [&str; 4] = ["method", "seeds", "delta_row_mean", "delta_col_mean"];
pub const GRADCHECK_SCHEMA: [&str; 8] = [
    "shape",
    "T",
    "centering",
    "compact_bound",
    "seed",
    "max_rel_error",
    "worst_row",
    "worst_col",
];
pub const THEOREMS_SCHEMA: [&str; 7] = ["property", "n", "d", "scale", "deviation", "tolerance", "pass"];
pub const TRAIN_SCHEMA: [&str; 4] = ["epoch", "train_loss", "train_error", "test_error"];
pub const PROBE_SCHEMA: [&str; 3] = ["layer", "activation", "gradient"];
pub const BENCH_SCHEMA: [&str; 5] = ["rows", "cols", "T", "repeats", "seconds_per_call"];

/// Files written and validation checks that failed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<String>,
    pub failures: Vec<String>,
}

impl Outcome {
    fn write(
        &mut self,
        spec: &ExperimentSpec,
        name: &str,
        schema: &[&str],
        records: &[Vec<Value>],
    ) -> Result<(), CliError> {
        emit_csv(records, schema, &spec.out_dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn check(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(message());
        }
    }
}

pub fn run(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    match spec.experiment {
        Experiment::Converge => converge(spec),
        Experiment::TableA2 => table_a2(spec),
        Experiment::GradCheck => gradcheck(spec),
        Experiment::Theorems => theorems(spec),
        Experiment::TrainMlp => train(spec),
        Experiment::Bench => bench(spec),
    }
}

/// Convergence variants: name and (centering, compact bounding).
pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("basic", false, false),
    ("centered", true, false),
    ("compact", false, true),
    ("accelerated", true, true),
];

fn variant_flags(name: &str) -> Result<(bool, bool), CliError> {
    VARIANTS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, c, b)| (c, b))
        .ok_or_else(|| CliError::BadSpec(format!("unknown variant {name:?}")))
}

/// Orthogonality of `σ·B_t V` for `t = 0..=T_max`, for each variant on the
/// same Gaussian proxies. Seed index `i` draws from stream `i` of the run seed.
fn converge(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let rows: usize = spec.parse("rows")?;
    let cols: usize = spec.parse("cols")?;
    let (mean, std) = spec.normal("dist")?;
    let t_max: usize = spec.parse("T_max")?;
    let seeds: u64 = spec.parse("seeds")?;
    let variants: Vec<String> = spec.list("variants")?;
    let flags = variants
        .iter()
        .map(|v| variant_flags(v))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut out = Outcome::default();
    for (name, &(centering, compact)) in variants.iter().zip(&flags) {
        for s in 0..seeds {
            let z = gaussian_matrix(&mut seeded(spec.seed, s), rows, cols, mean, std);
            let cfg = OniConfig::basic(t_max).with_flags(centering, compact);
            let (_, cache) = oni_forward(&z, &cfg)?;
            let mut prev = f64::INFINITY;
            for (t, w) in cache.outputs().iter().enumerate() {
                let sv = singular_values(w)?;
                let dr = delta_row(w);
                if name == "accelerated" {
                    out.check(dr <= prev, || {
                        format!("accelerated delta_row increased at seed {s}, iter {t}: {dr} > {prev}")
                    });
                }
                prev = dr;
                records.push(record![
                    name.as_str(),
                    s,
                    t,
                    dr,
                    delta_col(w),
                    *sv.last().unwrap(),
                    sv[0]
                ]);
            }
        }
    }
    out.write(spec, "converge.csv", &CONVERGE_SCHEMA, &records)?;
    Ok(out)
}

/// Full-matrix and grouped ONI on `rows × cols` Gaussian proxies. Centering
/// is off: it would lower the rank of a tall proxy.
fn table_a2(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let rows: usize = spec.parse("rows")?;
    let cols: usize = spec.parse("cols")?;
    let (mean, std) = spec.normal("dist")?;
    let t: usize = spec.parse("T")?;
    let seeds: u64 = spec.parse("seeds")?;
    let groups: Vec<usize> = spec.list("groups")?;
    let cfg = OniConfig::basic(t).with_flags(false, true);

    let mut methods = vec![("ONI-Full".to_string(), None)];
    methods.extend(groups.iter().map(|&g| (format!("ONI-G{g}"), Some(g))));
    let mut records = Vec::new();
    let mut summary = Vec::new();
    let mut out = Outcome::default();
    for (name, group) in &methods {
        let (mut sum_row, mut sum_col) = (0.0, 0.0);
        for s in 0..seeds {
            let z = gaussian_matrix(&mut seeded(spec.seed, s), rows, cols, mean, std);
            let w = match group {
                None => oni_forward(&z, &cfg)?.0,
                Some(g) => group_oni_forward(&z, *g, &cfg)?,
            };
            let (dr, dc) = (delta_row(&w), delta_col(&w));
            sum_row += dr;
            sum_col += dc;
            records.push(record![name.as_str(), s, dr, dc]);
        }
        let n = seeds.max(1) as f64;
        let (mr, mc) = (sum_row / n, sum_col / n);
        if group.is_none() {
            // An exactly orthogonal W has error sqrt(|rows − cols|) on the
            // unattainable side.
            let (attained, other) = if rows <= cols { (mr, mc) } else { (mc, mr) };
            let analytic = (rows.abs_diff(cols) as f64).sqrt();
            out.check(attained <= 0.05, || {
                format!("ONI-Full attainable delta {attained} > 0.05")
            });
            out.check((other - analytic).abs() <= 0.05, || {
                format!("ONI-Full complementary delta {other} not within 0.05 of {analytic}")
            });
        }
        summary.push(record![name.as_str(), seeds, mr, mc]);
    }
    out.write(spec, "table_a2.csv", &TABLE_A2_SCHEMA, &records)?;
    out.write(spec, "table_a2_summary.csv", &TABLE_A2_SUMMARY_SCHEMA, &summary)?;
    Ok(out)
}

fn parse_flag_pair(s: &str) -> Result<(bool, bool), CliError> {
    let bad = || CliError::BadSpec(format!("flags entries look like on-off, got {s:?}"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let one = |x: &str| match x {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(bad()),
    };
    Ok((one(a)?, one(b)?))
}

/// Analytic backward pass against central differences.
fn gradcheck(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let shapes = spec.shapes("shapes")?;
    let ts: Vec<usize> = spec.list("T")?;
    let flags = spec
        .list::<String>("flags")?
        .iter()
        .map(|s| parse_flag_pair(s))
        .collect::<Result<Vec<_>, _>>()?;
    let h = spec.real("h")?;
    let tol = spec.real("tol")?;
    let seeds: u64 = spec.parse("seeds")?;

    let mut records = Vec::new();
    let mut out = Outcome::default();
    for &(r, c) in &shapes {
        for s in 0..seeds {
            let mut rng = seeded(spec.seed, s);
            let z = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
            let dw = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
            for &t in &ts {
                for &(centering, compact) in &flags {
                    let cfg = OniConfig::basic(t).with_flags(centering, compact);
                    let rep = grad_check(&z, &cfg, &dw, h)?;
                    out.check(rep.max_rel_error <= tol, || {
                        format!(
                            "{r}x{c} T={t} centering={centering} compact={compact}: max_rel_error {} > {tol}",
                            rep.max_rel_error
                        )
                    });
                    records.push(record![
                        format!("{r}x{c}"),
                        t,
                        centering,
                        compact,
                        s,
                        rep.max_rel_error,
                        rep.worst_entry.0,
                        rep.worst_entry.1
                    ]);
                }
            }
        }
    }
    out.write(spec, "gradcheck.csv", &GRADCHECK_SCHEMA, &records)?;
    Ok(out)
}

/// Monte-Carlo checks of norm/moment preservation and of `E[J Jᵀ]`.
fn theorems(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let n: usize = spec.parse("n")?;
    let d: usize = spec.parse("d")?;
    let samples: usize = spec.parse("samples")?;
    let norm_tol = spec.real("norm_tol")?;
    let moment_tol = spec.real("moment_tol")?;

    let mut records = Vec::new();
    let mut out = Outcome::default();
    let mut add = |out: &mut Outcome, name: &str, scale: f64, dev: Option<f64>, tol: f64| {
        if let Some(dev) = dev {
            let pass = dev <= tol;
            out.check(pass, || format!("{name}: deviation {dev} > {tol}"));
            records.push(record![name, n, d, scale, dev, tol, pass]);
        }
    };

    let t1 = theorem1_check(n, d, samples, spec.seed)?;
    add(&mut out, "t1_norm", 1.0, t1.norm_dev, norm_tol);
    add(&mut out, "t1_mean", 1.0, t1.mean_dev, moment_tol);
    add(&mut out, "t1_cov", 1.0, t1.cov_dev, moment_tol);
    add(&mut out, "t1_grad_norm", 1.0, t1.grad_norm_dev, norm_tol);
    add(&mut out, "t1_grad_mean", 1.0, t1.grad_mean_dev, moment_tol);
    add(&mut out, "t1_grad_cov", 1.0, t1.grad_cov_dev, moment_tol);

    if n <= d {
        let sqrt2 = std::f64::consts::SQRT_2;
        let t2 = theorem2_check(n, d, samples, spec.seed, sqrt2)?;
        add(&mut out, "t2_max_dev", sqrt2, Some(t2.max_dev), moment_tol);
        let t2_unit = theorem2_check(n, d, samples, spec.seed, 1.0)?;
        // Unit scale halves the expected Jacobian; measure against 1/2.
        let mut diag_dev: f64 = 0.0;
        for i in 0..n {
            diag_dev = diag_dev.max((t2_unit.expected_jjt[(i, i)] - 0.5).abs());
        }
        add(&mut out, "t2_unit_diag_half", 1.0, Some(diag_dev), moment_tol);
        add(&mut out, "t2_unit_offdiag", 1.0, Some(t2_unit.offdiag_max), moment_tol);
    }
    out.write(spec, "theorems.csv", &THEOREMS_SCHEMA, &records)?;
    Ok(out)
}

fn datasets(spec: &ExperimentSpec) -> Result<(Dataset, Dataset), CliError> {
    match spec.get("data") {
        "synth" => {
            let classes: usize = spec.parse("classes")?;
            let dim: usize = spec.parse("dim")?;
            let sep = spec.real("separation")?;
            let train = synth_dataset(spec.seed, spec.parse("n_per_class")?, classes, dim, sep)?;
            let test = synth_dataset(!spec.seed, spec.parse("test_per_class")?, classes, dim, sep)?;
            Ok((train, test))
        }
        "idx" => {
            let need = |k: &str| {
                let v = spec.get(k);
                if v.is_empty() {
                    Err(CliError::BadSpec(format!("data=idx needs {k}")))
                } else {
                    Ok(v)
                }
            };
            let train = load_idx(need("train_images")?, need("train_labels")?)?;
            let test = load_idx(need("test_images")?, need("test_labels")?)?;
            Ok((train, test))
        }
        other => Err(CliError::BadSpec(format!("data must be synth or idx, got {other:?}"))),
    }
}

pub fn mlp_config(spec: &ExperimentSpec, input_dim: usize, output_dim: usize) -> Result<MlpConfig, CliError> {
    let group_size: usize = spec.parse("group_size")?;
    let method: Method = spec
        .get("method")
        .parse()
        .map_err(|e: oni_core::Error| CliError::BadSpec(e.to_string()))?;
    let cfg = MlpConfig {
        depth: spec.parse("depth")?,
        width: spec.parse("width")?,
        input_dim,
        output_dim,
        scale: spec.real("scale")?,
        iterations: spec.parse("T")?,
        centering: spec.flag("centering")?,
        compact_bound: spec.flag("compact_bound")?,
        group_size: (group_size > 0).then_some(group_size),
        learnable_gains: spec.flag("gains")?,
        lr: spec.real("lr")?,
        momentum: spec.real("momentum")?,
        weight_decay: spec.real("weight_decay")?,
        batch_size: spec.parse("batch_size")?,
        epochs: spec.parse("epochs")?,
        seed: spec.seed,
        method,
    };
    cfg.validate().map_err(|e| CliError::BadSpec(e.to_string()))?;
    Ok(cfg)
}

/// Learning curves plus per-layer magnitudes at initialization.
fn train(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let (train, test) = datasets(spec)?;
    let cfg = mlp_config(spec, train.dim(), train.classes.max(test.classes))?;
    let probe_n: usize = spec.parse("probe_batch")?;

    let mut out = Outcome::default();
    let mut net = Mlp::new(&cfg)?;
    let idx: Vec<usize> = (0..probe_n.min(train.len())).collect();
    let (x, y) = train.select(&idx);
    let probe = probe_magnitudes(&mut net, &x, &y)?;
    let probe_records: Vec<_> = (0..net.depth())
        .map(|l| record![l + 1, probe.activation[l], probe.gradient[l]])
        .collect();
    out.write(spec, "probe.csv", &PROBE_SCHEMA, &probe_records)?;

    let curve = train_mlp(&cfg, &train, &test)?;
    let records: Vec<_> = curve
        .iter()
        .map(|m| record![m.epoch, m.train_loss, m.train_error, m.test_error])
        .collect();
    out.check(curve.iter().all(|m| m.train_loss.is_finite()), || {
        "training loss is not finite".into()
    });
    out.write(spec, "train_mlp.csv", &TRAIN_SCHEMA, &records)?;
    Ok(out)
}

/// Wall time of one accelerated forward pass. Informational only.
fn bench(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let shapes = spec.shapes("shapes")?;
    let ts: Vec<usize> = spec.list("T")?;
    let repeats: usize = spec.parse("repeats")?;
    if repeats == 0 {
        return Err(CliError::BadSpec("repeats must be positive".into()));
    }
    let mut records = Vec::new();
    for &(r, c) in &shapes {
        let z = gaussian_matrix(&mut seeded(spec.seed, 0), r, c, 0.0, 1.0);
        for &t in &ts {
            let cfg = OniConfig::accelerated(t);
            let start = Instant::now();
            for _ in 0..repeats {
                std::hint::black_box(oni_forward(&z, &cfg)?);
            }
            let per_call = start.elapsed().as_secs_f64() / repeats as f64;
            records.push(record![r, c, t, repeats, per_call]);
        }
    }
    let mut out = Outcome::default();
    out.write(spec, "bench.csv", &BENCH_SCHEMA, &records)?;
    Ok(out)
}

/// Largest orthogonality error over the layers of a network, measured on
/// the side each layer can make exact.
pub fn max_layer_delta(net: &Mlp) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for layer in &net.layers {
        let w: DenseMatrix = layer.weight()?;
        worst = worst.max(delta_attainable(&w));
    }
    Ok(worst)
}
