//! Desk-scale experiment runners.
//!
//! Each `run_*` function is deterministic per seed: rerunning the same spec
//! byte-reproduces every CSV it writes. Artifacts (metrics logs, coefficient
//! tables, checkpoints) land in the spec's output directory; the returned
//! structs carry the same numbers in memory for callers that want them.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use qnn_core::analysis::{amplification_estimate, variety_bound, BoundReport, Realization};
use qnn_core::network::{build, save};
use qnn_core::relinear::{eval_metric, train};
use qnn_core::spline::extract_piecewise;
use qnn_core::tensor::Rng;
use qnn_core::{
    Activation, Architecture, BuildInit, Dataset, DenseMatrix, DenseVector, InitMode, Layer, Loss,
    MetricsLog, Network, NeuronKind, Optimizer, PiecewisePolyReport, QuadraticParams, TrainConfig,
    Variant,
};

use crate::error::{Error, Result};

/// The experiments this crate knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Runge,
    Stability,
    Xor,
    Toy2d,
    BoundsTable,
}

impl Experiment {
    pub fn label(&self) -> &'static str {
        match self {
            Experiment::Runge => "runge",
            Experiment::Stability => "stability",
            Experiment::Xor => "xor",
            Experiment::Toy2d => "toy2d",
            Experiment::BoundsTable => "bounds-table",
        }
    }
}

/// What to run, how to train, and where to put the artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn new(
        experiment: Experiment,
        train: TrainConfig,
        out_dir: impl Into<PathBuf>,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Setup("at least one seed is required".into()));
        }
        Ok(Self {
            experiment,
            train,
            out_dir: out_dir.into(),
            seeds,
        })
    }

    /// Creates the output directory if needed; failure here is the earliest
    /// signal that the directory is not writable.
    fn ensure_out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

/// Reads a [`TrainConfig`] from a TOML file and validates it.
pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: TrainConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn build_init(mode: &InitMode) -> BuildInit<'static> {
    match *mode {
        InitMode::RelinearRandom { sigma } => BuildInit::RelinearRandom(sigma),
        InitMode::PlainRandom { sigma } => BuildInit::PlainRandom(sigma),
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + 32 * rows.len());
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// R(x) = 1 / (1 + 16 x^2), the classic interpolation stress case.
pub fn runge(x: f64) -> f64 {
    1.0 / (1.0 + 16.0 * x * x)
}

/// Five hidden layers of width 8 on a univariate input.
pub const RUNGE_WIDTHS: [usize; 7] = [1, 8, 8, 8, 8, 8, 1];

/// 33 equidistant samples of the Runge function on [-5, 5] for training and
/// 100 evenly spaced interior points (disjoint from the samples) held out
/// for evaluation.
pub fn runge_dataset() -> Dataset {
    let point = |x: f64| DenseVector::new(vec![x]);
    let value = |x: &DenseVector| DenseVector::new(vec![runge(x.data[0])]);
    let inputs: Vec<DenseVector> = (0..33)
        .map(|i| point(-5.0 + 10.0 * i as f64 / 32.0))
        .collect();
    let targets = inputs.iter().map(value).collect();
    let eval_inputs: Vec<DenseVector> = (1..=100)
        .map(|i| point(-5.0 + 10.0 * i as f64 / 101.0))
        .collect();
    let eval_targets = eval_inputs.iter().map(value).collect();
    Dataset::with_eval(inputs, targets, eval_inputs, eval_targets)
        .expect("static dataset is well formed")
}

/// Training configuration for the Runge fit: 30,000 full-batch iterations at
/// the published per-variant rates, constant learning rate throughout.
pub fn runge_config(variant: Variant, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        variant,
        gamma_r: 3e-4,
        gamma_g: 1.5e-4,
        gamma_b: 1.5e-4,
        schedule: qnn_core::Schedule::Milestones {
            epochs: vec![],
            factor: 0.1,
        },
        optimizer: Optimizer::adam(),
        batch_size: None,
        epochs: 30_000,
        init: InitMode::RelinearRandom { sigma: 0.3 },
        seed,
        ..TrainConfig::default()
    };
    match variant {
        Variant::Sg => {}
        Variant::SwL1 => {
            cfg.gamma_g = 3e-4;
            cfg.gamma_b = 3e-4;
            cfg.alpha_g = 1e-4;
            cfg.alpha_b = 1e-4;
        }
        Variant::SwL2 => {
            cfg.gamma_g = 3e-4;
            cfg.gamma_b = 3e-4;
            cfg.beta_g = 1e-4;
            cfg.beta_b = 1e-4;
        }
        Variant::Plain => {
            cfg.gamma_g = 3e-4;
            cfg.gamma_b = 3e-4;
        }
    }
    cfg
}

/// One Runge training run.
#[derive(Debug)]
pub struct RungeRun {
    pub seed: u64,
    pub variant: Variant,
    pub rmse: f64,
    pub net: Network,
    pub log: MetricsLog,
    pub report: PiecewisePolyReport,
}

/// Trains the width-8, depth-5 quadratic net on the 33 Runge samples once
/// per seed, reporting held-out RMSE and the piecewise polynomial each
/// trained net computes.
pub fn run_runge(spec: &ExperimentSpec) -> Result<Vec<RungeRun>> {
    let out = spec.ensure_out_dir()?;
    let data = runge_dataset();
    let arch = Architecture::uniform(
        RUNGE_WIDTHS.to_vec(),
        NeuronKind::Quadratic,
        Activation::Relu,
    )?;
    let mut runs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let mut cfg = spec.train.clone();
        cfg.seed = seed;
        let mut rng = Rng::new(seed);
        let net = build(&arch, build_init(&cfg.init), &mut rng)?;
        let (net, _, log) = train(net, &data, Loss::Mse, &cfg)?;
        let rmse = eval_metric(Loss::Mse, &net, &data.eval_inputs, &data.eval_targets)?;
        let report = extract_piecewise(&net, -5.0, 5.0)?;
        let label = cfg.variant.label();
        log.write_csv(out.join(format!("runge_metrics_{label}_{seed}.csv")))?;
        report.write_csv(out.join(format!("runge_coeffs_{label}_{seed}.csv")))?;
        save(&net, out.join(format!("runge_net_{label}_{seed}.json")))?;
        runs.push(RungeRun {
            seed,
            variant: cfg.variant,
            rmse,
            net,
            log,
            report,
        });
    }
    Ok(runs)
}

pub const STABILITY_WIDTHS: [usize; 6] = [1, 10, 10, 10, 10, 1];
pub const STABILITY_CSV_HEADER: &str = "sigma,seed,realization,max_abs";

/// One (sigma, seed, realization) measurement.
#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub sigma: f64,
    pub seed: u64,
    pub realization: &'static str,
    pub max_abs: f64,
}

impl StabilityRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.sigma, self.seed, self.realization, self.max_abs
        )
    }
}

/// Weight-only gaussian init: every weight matrix the kind owns is drawn
/// from N(0, sigma^2) while biases stay at zero (the product bias included).
/// Random biases at these tiny sigmas would dominate every layer and mask
/// the multiplicative cascade this experiment demonstrates, flattening the
/// quadratic/conventional contrast to nothing.
fn weight_random_net(
    widths: &[usize],
    kind: NeuronKind,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Network> {
    let mut layers = Vec::with_capacity(widths.len().saturating_sub(1));
    for h in 0..widths.len().saturating_sub(1) {
        let (i, o) = (widths[h], widths[h + 1]);
        let mut p = QuadraticParams::degenerate(kind, o, i);
        if kind.has_bg() {
            p.bg = DenseVector::zeros(o);
        }
        let mut fill = |m: &mut DenseMatrix| {
            for v in &mut m.data {
                *v = rng.gaussian(sigma);
            }
        };
        if kind.has_wr() {
            fill(&mut p.wr);
        }
        if kind.has_wg() {
            fill(&mut p.wg);
        }
        if kind.has_wb() {
            fill(&mut p.wb);
        }
        let act = if h + 2 == widths.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(kind, p, act));
    }
    Ok(Network::feedforward(layers)?)
}

/// Max |f(x)| over an evenly spaced grid. Non-finite outputs (overflow to
/// inf, or NaN from inf arithmetic inside the net) are recorded as +inf
/// rather than treated as errors.
fn grid_max_abs(net: &Network, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let mut max = 0.0f64;
    for k in 0..points {
        let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let out = net.eval(&DenseVector::new(vec![x]))?;
        let v = out.data[0].abs();
        if !v.is_finite() {
            return Ok(f64::INFINITY);
        }
        if v > max {
            max = v;
        }
    }
    Ok(max)
}

/// Builds random 1-10-10-10-10-1 quadratic and conventional nets at each
/// sigma and records the max output magnitude over a 1001-point grid on
/// [lo, hi]. The same seed reuses the same underlying gaussian draws across
/// sigmas, so per-seed growth ratios compare like with like.
pub fn run_stability(
    spec: &ExperimentSpec,
    sigmas: &[f64],
    lo: f64,
    hi: f64,
) -> Result<Vec<StabilityRow>> {
    if sigmas.is_empty() {
        return Err(Error::Setup("at least one sigma is required".into()));
    }
    if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Setup("sigmas must be finite and nonnegative".into()));
    }
    if !(lo < hi) {
        return Err(Error::Setup(format!("empty grid range [{lo}, {hi}]")));
    }
    let out = spec.ensure_out_dir()?;
    let mut rows = Vec::new();
    for &sigma in sigmas {
        for &seed in &spec.seeds {
            let quad = weight_random_net(
                &STABILITY_WIDTHS,
                NeuronKind::Quadratic,
                sigma,
                &mut Rng::new(seed).derive(0),
            )?;
            let conv = weight_random_net(
                &STABILITY_WIDTHS,
                NeuronKind::Conventional,
                sigma,
                &mut Rng::new(seed).derive(1),
            )?;
            rows.push(StabilityRow {
                sigma,
                seed,
                realization: "quadratic",
                max_abs: grid_max_abs(&quad, lo, hi, 1001)?,
            });
            rows.push(StabilityRow {
                sigma,
                seed,
                realization: "conventional",
                max_abs: grid_max_abs(&conv, lo, hi, 1001)?,
            });
        }
    }
    let lines: Vec<String> = rows.iter().map(StabilityRow::csv_row).collect();
    write_csv(&out.join("stability.csv"), STABILITY_CSV_HEADER, &lines)?;
    Ok(rows)
}

pub const XOR_CSV_HEADER: &str = "run,seed,correct";

/// The four XOR corners; `true` marks the odd-parity inputs.
pub fn xor_corners() -> [(DenseVector, bool); 4] {
    [
        (DenseVector::new(vec![0.0, 0.0]), false),
        (DenseVector::new(vec![0.0, 1.0]), true),
        (DenseVector::new(vec![1.0, 0.0]), true),
        (DenseVector::new(vec![1.0, 1.0]), false),
    ]
}

/// The corners with +-1 regression targets for training.
pub fn xor_dataset() -> Dataset {
    let (inputs, targets): (Vec<_>, Vec<_>) = xor_corners()
        .into_iter()
        .map(|(x, odd)| (x, DenseVector::new(vec![if odd { 1.0 } else { -1.0 }])))
        .unzip();
    Dataset::new(inputs, targets).expect("static dataset is well formed")
}

/// Single quadratic neuron computing (x1 - x2)^2 exactly.
pub fn xor_analytic() -> Network {
    let mut params = QuadraticParams::degenerate(NeuronKind::Quadratic, 1, 2);
    params.wr = DenseMatrix::new(1, 2, vec![1.0, -1.0]).expect("static shape");
    params.wg = params.wr.clone();
    params.bg = DenseVector::zeros(1);
    let layer = Layer::new(NeuronKind::Quadratic, params, Activation::Linear);
    Network::feedforward(vec![layer]).expect("single layer chains trivially")
}

/// Corners the analytic neuron classifies correctly with the 1/2 threshold.
pub fn xor_analytic_correct() -> Result<usize> {
    let net = xor_analytic();
    let mut correct = 0;
    for (x, odd) in xor_corners() {
        let out = net.eval(&x)?;
        if (out.data[0] > 0.5) == odd {
            correct += 1;
        }
    }
    Ok(correct)
}

/// Training configuration for the XOR fit: single neuron, a few thousand
/// full-batch steps.
pub fn xor_config(seed: u64) -> TrainConfig {
    TrainConfig {
        variant: Variant::Sg,
        gamma_r: 0.1,
        gamma_g: 0.05,
        gamma_b: 0.05,
        schedule: qnn_core::Schedule::Milestones {
            epochs: vec![],
            factor: 0.1,
        },
        batch_size: None,
        epochs: 5_000,
        init: InitMode::RelinearRandom { sigma: 0.5 },
        seed,
        ..TrainConfig::default()
    }
}

/// One trained-neuron outcome.
#[derive(Debug, Clone)]
pub struct XorRun {
    pub seed: u64,
    pub quadratic_correct: usize,
    pub conventional_correct: usize,
}

/// Outcome of the XOR experiment: the analytic construction plus one
/// trained quadratic neuron (and a conventional control) per seed.
#[derive(Debug)]
pub struct XorOutcome {
    pub analytic_correct: usize,
    pub runs: Vec<XorRun>,
}

fn xor_trained_correct(net: &Network) -> Result<usize> {
    let mut correct = 0;
    for (x, odd) in xor_corners() {
        let out = net.eval(&x)?;
        let target = if odd { 1.0 } else { -1.0 };
        if out.data[0] * target > 0.0 {
            correct += 1;
        }
    }
    Ok(correct)
}

/// Verifies the analytic single-neuron XOR solution, then trains a single
/// quadratic neuron (MSE on +-1 targets) per seed, with a conventional
/// neuron trained the same way as a control.
pub fn run_xor(spec: &ExperimentSpec) -> Result<XorOutcome> {
    let out = spec.ensure_out_dir()?;
    let analytic_correct = xor_analytic_correct()?;
    let data = xor_dataset();
    let quad_arch = Architecture::uniform(vec![2, 1], NeuronKind::Quadratic, Activation::Linear)?;
    let conv_arch =
        Architecture::uniform(vec![2, 1], NeuronKind::Conventional, Activation::Linear)?;
    let mut runs = Vec::with_capacity(spec.seeds.len());
    let mut lines = vec![format!("analytic,,{analytic_correct}")];
    for &seed in &spec.seeds {
        let mut cfg = spec.train.clone();
        cfg.seed = seed;
        let quad = build(&quad_arch, build_init(&cfg.init), &mut Rng::new(seed).derive(0))?;
        let (quad, _, _) = train(quad, &data, Loss::Mse, &cfg)?;
        let quadratic_correct = xor_trained_correct(&quad)?;
        let conv = build(&conv_arch, build_init(&cfg.init), &mut Rng::new(seed).derive(1))?;
        let (conv, _, _) = train(conv, &data, Loss::Mse, &cfg)?;
        let conventional_correct = xor_trained_correct(&conv)?;
        lines.push(format!("quadratic,{seed},{quadratic_correct}"));
        lines.push(format!("conventional,{seed},{conventional_correct}"));
        runs.push(XorRun {
            seed,
            quadratic_correct,
            conventional_correct,
        });
    }
    write_csv(&out.join("xor.csv"), XOR_CSV_HEADER, &lines)?;
    Ok(XorOutcome {
        analytic_correct,
        runs,
    })
}

pub const TOY2D_CSV_HEADER: &str = "seed,realization,accuracy";

/// Two concentric circles with one-hot labels: radius 1 is class 0, radius 2
/// is class 1, radial gaussian jitter of the given width. The last fifth of
/// the points is held out for evaluation.
pub fn circles_dataset(n: usize, noise: f64, rng: &mut Rng) -> Result<Dataset> {
    if n < 5 {
        return Err(Error::Setup("need at least 5 points to split off a test set".into()));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let radius = if class == 0 { 1.0 } else { 2.0 };
        let theta = 2.0 * PI * rng.uniform();
        let r = radius + rng.gaussian(noise);
        inputs.push(DenseVector::new(vec![r * theta.cos(), r * theta.sin()]));
        let mut one_hot = vec![0.0; 2];
        one_hot[class] = 1.0;
        targets.push(DenseVector::new(one_hot));
    }
    let split = n - n / 5;
    let eval_inputs = inputs.split_off(split);
    let eval_targets = targets.split_off(split);
    Ok(Dataset::with_eval(inputs, targets, eval_inputs, eval_targets)?)
}

/// Training configuration for the circles task.
/// A width-2 hidden layer suffices to separate the circles by hand: one
/// quadratic neuron computes the squared radius, and the output layer
/// thresholds it halfway between the two circles.
pub fn circles_analytic() -> Network {
    let mut hidden = QuadraticParams::degenerate(NeuronKind::Quadratic, 2, 2);
    hidden.wb.set(0, 0, 1.0);
    hidden.wb.set(0, 1, 1.0);
    let mut out = QuadraticParams::degenerate(NeuronKind::Quadratic, 2, 2);
    out.wr.set(0, 0, -1.0);
    out.br.data[0] = 2.25;
    out.wr.set(1, 0, 1.0);
    out.br.data[1] = -2.25;
    Network::feedforward(vec![
        Layer::new(NeuronKind::Quadratic, hidden, Activation::Relu),
        Layer::new(NeuronKind::Quadratic, out, Activation::Linear),
    ])
    .expect("dimensions chain")
}

pub fn toy2d_config(seed: u64) -> TrainConfig {
    TrainConfig {
        variant: Variant::Sg,
        gamma_r: 0.01,
        gamma_g: 0.005,
        gamma_b: 0.005,
        schedule: qnn_core::Schedule::Milestones {
            epochs: vec![],
            factor: 0.1,
        },
        optimizer: Optimizer::adam(),
        batch_size: None,
        epochs: 2_000,
        init: InitMode::RelinearRandom { sigma: 0.5 },
        seed,
        ..TrainConfig::default()
    }
}

/// One paired training outcome on the circles data.
#[derive(Debug, Clone)]
pub struct Toy2dRun {
    pub seed: u64,
    pub quad_accuracy: f64,
    pub conv_accuracy: f64,
}

/// Trains matched-width quadratic and conventional nets on the concentric
/// circles and reports held-out accuracies.
pub fn run_toy2d(spec: &ExperimentSpec, noise: f64) -> Result<Vec<Toy2dRun>> {
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::Setup("noise must be finite and nonnegative".into()));
    }
    let out = spec.ensure_out_dir()?;
    let widths = vec![2, 4, 2];
    let quad_arch =
        Architecture::uniform(widths.clone(), NeuronKind::Quadratic, Activation::Relu)?;
    let conv_arch = Architecture::uniform(widths, NeuronKind::Conventional, Activation::Relu)?;
    let mut runs = Vec::with_capacity(spec.seeds.len());
    let mut lines = Vec::with_capacity(2 * spec.seeds.len());
    for &seed in &spec.seeds {
        let mut cfg = spec.train.clone();
        cfg.seed = seed;
        let data = circles_dataset(1000, noise, &mut Rng::new(seed).derive(0))?;
        let quad = build(&quad_arch, build_init(&cfg.init), &mut Rng::new(seed).derive(1))?;
        let (quad, _, _) = train(quad, &data, Loss::CrossEntropy, &cfg)?;
        let quad_accuracy =
            eval_metric(Loss::CrossEntropy, &quad, &data.eval_inputs, &data.eval_targets)?;
        let conv = build(&conv_arch, build_init(&cfg.init), &mut Rng::new(seed).derive(2))?;
        let (conv, _, _) = train(conv, &data, Loss::CrossEntropy, &cfg)?;
        let conv_accuracy =
            eval_metric(Loss::CrossEntropy, &conv, &data.eval_inputs, &data.eval_targets)?;
        lines.push(format!("{seed},quadratic,{quad_accuracy}"));
        lines.push(format!("{seed},conventional,{conv_accuracy}"));
        runs.push(Toy2dRun {
            seed,
            quad_accuracy,
            conv_accuracy,
        });
    }
    write_csv(&out.join("toy2d.csv"), TOY2D_CSV_HEADER, &lines)?;
    Ok(runs)
}

pub const BOUNDS_CSV_HEADER: &str = "arch,qn_bound,qa_bound,conv_amp,quad_amp,amp_ratio";

/// Variety bounds and amplification estimates for one architecture.
#[derive(Debug, Clone)]
pub struct CapacityRow {
    pub arch: String,
    pub quad_neuron: BoundReport,
    pub quad_activation: BoundReport,
    pub conv_amp: f64,
    pub quad_amp: f64,
}

impl CapacityRow {
    pub fn amp_ratio(&self) -> f64 {
        self.quad_amp / self.conv_amp
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.arch,
            self.quad_neuron.bound,
            self.quad_activation.bound,
            self.conv_amp,
            self.quad_amp,
            self.amp_ratio()
        )
    }
}

/// Architectures tabulated when the caller does not pass a list.
pub fn default_bound_archs() -> Vec<Vec<usize>> {
    vec![
        vec![2, 2, 1],
        vec![1, 8, 8, 8, 8, 8, 1],
        vec![1, 10, 10, 10, 10, 1],
        vec![10, 10, 10, 10, 10, 10],
    ]
}

/// Tabulates the two variety bounds and the amplification estimates for each
/// architecture, one CSV row per architecture.
pub fn run_bounds_table(spec: &ExperimentSpec, archs: &[Vec<usize>]) -> Result<Vec<CapacityRow>> {
    if archs.is_empty() {
        return Err(Error::Setup("at least one architecture is required".into()));
    }
    let out = spec.ensure_out_dir()?;
    let mut rows = Vec::with_capacity(archs.len());
    for widths in archs {
        let quad_neuron = variety_bound(widths, Realization::QuadraticNeuron)?;
        let quad_activation = variety_bound(widths, Realization::QuadraticActivation)?;
        let (conv_amp, quad_amp) = amplification_estimate(widths)?;
        rows.push(CapacityRow {
            arch: quad_neuron.arch.clone(),
            quad_neuron,
            quad_activation,
            conv_amp,
            quad_amp,
        });
    }
    let lines: Vec<String> = rows.iter().map(CapacityRow::csv_row).collect();
    write_csv(&out.join("bounds.csv"), BOUNDS_CSV_HEADER, &lines)?;
    Ok(rows)
}

/// Parses a dash-separated width list like "1-8-8-1".
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    s.split('-')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::Setup(format!("bad width {tok:?} in architecture {s:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn runge_values() {
        assert_eq!(runge(0.0), 1.0);
        assert_eq!(runge(5.0), 1.0 / 401.0);
        assert_eq!(runge(-5.0), 1.0 / 401.0);
    }

    #[test]
    fn runge_dataset_shape() {
        let d = runge_dataset();
        assert_eq!(d.inputs.len(), 33);
        assert_eq!(d.eval_inputs.len(), 100);
        assert_eq!(d.inputs[0].data[0], -5.0);
        assert_eq!(d.inputs[32].data[0], 5.0);
        let step = d.inputs[1].data[0] - d.inputs[0].data[0];
        for w in d.inputs.windows(2) {
            assert!((w[1].data[0] - w[0].data[0] - step).abs() <= 1e-12);
        }
        for (x, y) in d.inputs.iter().zip(&d.targets) {
            assert_eq!(y.data[0], runge(x.data[0]));
        }
        let train: BTreeSet<u64> = d.inputs.iter().map(|x| x.data[0].to_bits()).collect();
        for x in &d.eval_inputs {
            assert!(!train.contains(&x.data[0].to_bits()), "{} is a train point", x.data[0]);
            assert!(x.data[0] > -5.0 && x.data[0] < 5.0);
        }
    }

    #[test]
    fn runge_configs_validate() {
        for v in [Variant::Sg, Variant::SwL1, Variant::SwL2, Variant::Plain] {
            runge_config(v, 7).validate().unwrap();
        }
    }

    #[test]
    fn spec_needs_a_seed() {
        let err = ExperimentSpec::new(
            Experiment::Runge,
            TrainConfig::default(),
            "/tmp/anywhere",
            vec![],
        );
        assert!(err.is_err());
    }

    #[test]
    fn analytic_xor_is_exact() {
        let net = xor_analytic();
        let values: Vec<f64> = xor_corners()
            .iter()
            .map(|(x, _)| net.eval(x).unwrap().data[0])
            .collect();
        assert_eq!(values, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(xor_analytic_correct().unwrap(), 4);
    }

    #[test]
    fn circles_are_balanced_and_labeled() {
        let mut rng = Rng::new(3);
        let d = circles_dataset(1000, 0.05, &mut rng).unwrap();
        assert_eq!(d.inputs.len(), 800);
        assert_eq!(d.eval_inputs.len(), 200);
        let all: Vec<(&DenseVector, &DenseVector)> = d
            .inputs
            .iter()
            .zip(&d.targets)
            .chain(d.eval_inputs.iter().zip(&d.eval_targets))
            .collect();
        let mut counts = [0usize; 2];
        for (x, y) in all {
            assert_eq!(y.data.iter().sum::<f64>(), 1.0);
            let class = if y.data[1] == 1.0 { 1 } else { 0 };
            counts[class] += 1;
            let r = (x.data[0] * x.data[0] + x.data[1] * x.data[1]).sqrt();
            let center = if class == 0 { 1.0 } else { 2.0 };
            assert!((r - center).abs() < 0.5, "radius {r} for class {class}");
        }
        assert_eq!(counts, [500, 500]);
    }

    #[test]
    fn circles_with_zero_noise_sit_on_the_circles() {
        let mut rng = Rng::new(4);
        let d = circles_dataset(10, 0.0, &mut rng).unwrap();
        for (x, y) in d.inputs.iter().zip(&d.targets) {
            let r = (x.data[0] * x.data[0] + x.data[1] * x.data[1]).sqrt();
            let center = if y.data[1] == 1.0 { 2.0 } else { 1.0 };
            assert!((r - center).abs() <= 1e-12);
        }
    }

    #[test]
    fn analytic_circles_classifier_is_exact() {
        let net = circles_analytic();
        let mut rng = Rng::new(12);
        let d = circles_dataset(200, 0.0, &mut rng).unwrap();
        let acc = eval_metric(Loss::CrossEntropy, &net, &d.inputs, &d.targets).unwrap();
        assert_eq!(acc, 1.0);
        let held = eval_metric(Loss::CrossEntropy, &net, &d.eval_inputs, &d.eval_targets).unwrap();
        assert_eq!(held, 1.0);
    }

    #[test]
    fn parse_arch_roundtrip() {
        assert_eq!(parse_arch("1-8-8-1").unwrap(), vec![1, 8, 8, 1]);
        assert_eq!(parse_arch("2-2-1").unwrap(), vec![2, 2, 1]);
        assert!(parse_arch("1-x-1").is_err());
        assert!(parse_arch("").is_err());
    }

    #[test]
    fn bounds_table_matches_worked_example() {
        let spec = ExperimentSpec::new(
            Experiment::BoundsTable,
            TrainConfig::default(),
            tempfile::tempdir().unwrap().path(),
            vec![0],
        )
        .unwrap();
        let rows = run_bounds_table(&spec, &[vec![2, 2, 1], vec![1, 8, 8, 1]]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].arch, "2-2-1");
        assert_eq!(rows[0].quad_neuron.bound.to_string(), "3");
        assert_eq!(rows[0].quad_activation.bound.to_string(), "3");
        // two hidden transitions double the Jacobian estimate twice
        assert_eq!(rows[0].amp_ratio(), 4.0);
    }

    #[test]
    fn stability_zero_sigma_is_silent() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::new(
            Experiment::Stability,
            TrainConfig::default(),
            dir.path(),
            vec![1, 2],
        )
        .unwrap();
        let rows = run_stability(&spec, &[0.0], -1.0, 1.0).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.max_abs, 0.0);
        }
    }

    #[test]
    fn stability_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::new(
            Experiment::Stability,
            TrainConfig::default(),
            dir.path(),
            vec![5],
        )
        .unwrap();
        run_stability(&spec, &[0.01, 0.03], -1.0, 1.0).unwrap();
        let first = fs::read(dir.path().join("stability.csv")).unwrap();
        run_stability(&spec, &[0.01, 0.03], -1.0, 1.0).unwrap();
        let second = fs::read(dir.path().join("stability.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn train_config_toml_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        let text = r#"
variant = "sg"
gamma_r = 0.0003
gamma_g = 0.00015
gamma_b = 0.00015
epochs = 10

[init]
mode = "relinear_random"
sigma = 0.3
"#;
        fs::write(&path, text).unwrap();
        let cfg = load_train_config(&path).unwrap();
        assert_eq!(cfg.variant, Variant::Sg);
        assert_eq!(cfg.gamma_r, 3e-4);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.batch_size, None);
        assert!(matches!(cfg.init, InitMode::RelinearRandom { sigma } if sigma == 0.3));
    }

    #[test]
    fn bad_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        // sw_l1 requires one shared rate for all three groups
        let text = r#"
variant = "sw_l1"
gamma_r = 0.0003
gamma_g = 0.001
gamma_b = 0.0003
alpha_g = 0.0001
alpha_b = 0.0001
epochs = 10

[init]
mode = "relinear_random"
sigma = 0.3
"#;
        fs::write(&path, text).unwrap();
        assert!(load_train_config(&path).is_err());
    }
}
