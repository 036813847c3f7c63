//! Staged training for quadratic networks: the shrinking-gradient and
//! shrinking-weight update rules, milestone and adaptive learning-rate
//! schedules, weight transfer from conventional sources, the SGD loop, and
//! convergence-rate fitting.
//!
//! The linear part of every neuron (Wr, br, and the block scalars) always
//! follows plain SGD at the linear rate. What varies between variants is the
//! treatment of the quadratic part (Wg, bg, Wb, c): separate smaller rates
//! (`sg`), L1 shrinkage (`sw_l1`), L2 decay (`sw_l2`), or no special
//! treatment at all (`plain`). Shrinkage is applied before the gradient
//! term, matching the order the update equations are written in.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    build, net_backward, net_forward, Architecture, BuildInit, Network, NetworkGrads, Segment,
};
use crate::tensor::{DenseVector, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sg,
    SwL1,
    SwL2,
    Plain,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Sg => "sg",
            Variant::SwL1 => "sw_l1",
            Variant::SwL2 => "sw_l2",
            Variant::Plain => "plain",
        }
    }
}

/// Diagonal learning-rate schedule beta/(alpha+t) with the second parameter
/// group discounted by gamma. K1 and K2 are the group sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: usize,
    pub k2: usize,
}

/// Per-step learning rates under the adaptive schedule: K1 entries at
/// beta/(alpha+t) followed by K2 entries at gamma times that.
pub fn adaptive_lr(s: &AdaptiveSchedule, t: usize) -> Result<Vec<f64>> {
    if !(s.alpha > 0.0) || !(s.beta > 0.0) {
        return Err(Error::Config(format!(
            "adaptive schedule needs positive alpha and beta, got {} and {}",
            s.alpha, s.beta
        )));
    }
    if !(s.gamma > 0.0 && s.gamma <= 1.0) {
        return Err(Error::Config(format!(
            "adaptive gamma must lie in (0, 1], got {}",
            s.gamma
        )));
    }
    if t < 1 {
        return Err(Error::Config("adaptive schedule starts at t = 1".into()));
    }
    let base = s.beta / (s.alpha + t as f64);
    let mut rates = vec![base; s.k1];
    rates.extend(std::iter::repeat(s.gamma * base).take(s.k2));
    Ok(rates)
}

/// Scales every base rate by factor^k where k counts the milestones at or
/// before `epoch`.
pub fn milestone_lr(base: &[f64], epoch: usize, milestones: &[usize], factor: f64) -> Vec<f64> {
    let crossed = milestones.iter().filter(|&&m| m <= epoch).count() as i32;
    let scale = factor.powi(crossed);
    base.iter().map(|r| r * scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Milestones { epochs: Vec<usize>, factor: f64 },
    Adaptive { alpha: f64, beta: f64, gamma: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Milestones {
            epochs: vec![100, 150],
            factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    RelinearRandom { sigma: f64 },
    PlainRandom { sigma: f64 },
}

/// Update rule applied to the (already group-scaled) gradients. Plain SGD is
/// the default; Adam rescales each coordinate by its running moment estimates
/// before the group learning rates are applied, so shrinkage and rate
/// grouping behave identically under either choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd
    }
}

impl Optimizer {
    /// Adam with the customary moment constants.
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub gamma_r: f64,
    pub gamma_g: f64,
    pub gamma_b: f64,
    #[serde(default)]
    pub alpha_g: f64,
    #[serde(default)]
    pub alpha_b: f64,
    #[serde(default)]
    pub beta_g: f64,
    #[serde(default)]
    pub beta_b: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// None trains full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub init: InitMode,
    /// Defaulted so config files can leave seeding to the runner.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Sg,
            gamma_r: 3e-4,
            gamma_g: 1.5e-4,
            gamma_b: 1.5e-4,
            alpha_g: 0.0,
            alpha_b: 0.0,
            beta_g: 0.0,
            beta_b: 0.0,
            schedule: Schedule::default(),
            optimizer: Optimizer::Sgd,
            batch_size: None,
            epochs: 200,
            init: InitMode::RelinearRandom { sigma: 0.3 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.gamma_r, self.gamma_g, self.gamma_b];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rates must be finite and nonnegative".into()));
        }
        match self.variant {
            Variant::Sg | Variant::Plain => {}
            Variant::SwL1 => {
                if self.gamma_g != self.gamma_r || self.gamma_b != self.gamma_r {
                    return Err(Error::Config(
                        "sw_l1 uses a single rate: gamma_g and gamma_b must equal gamma_r".into(),
                    ));
                }
                if self.alpha_g < 0.0 || self.alpha_b < 0.0 {
                    return Err(Error::Config("l1 shrink factors must be nonnegative".into()));
                }
            }
            Variant::SwL2 => {
                if self.gamma_g != self.gamma_r || self.gamma_b != self.gamma_r {
                    return Err(Error::Config(
                        "sw_l2 uses a single rate: gamma_g and gamma_b must equal gamma_r".into(),
                    ));
                }
                if !(0.0..1.0).contains(&self.beta_g) || !(0.0..1.0).contains(&self.beta_b) {
                    return Err(Error::Config("l2 decay rates must lie in [0, 1)".into()));
                }
            }
        }
        match &self.schedule {
            Schedule::Milestones { epochs, factor } => {
                if epochs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("milestones must be strictly increasing".into()));
                }
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(Error::Config("milestone factor must be positive".into()));
                }
            }
            Schedule::Adaptive { alpha, beta, gamma } => {
                if !(*alpha > 0.0) || !(*beta > 0.0) {
                    return Err(Error::Config(
                        "adaptive schedule needs positive alpha and beta".into(),
                    ));
                }
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::Config("adaptive gamma must lie in (0, 1]".into()));
                }
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::Config("adam moment constants must lie in [0, 1)".into()));
            }
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Config("adam epsilon must be positive".into()));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        match self.init {
            InitMode::RelinearRandom { sigma } | InitMode::PlainRandom { sigma } => {
                if !sigma.is_finite() || sigma < 0.0 {
                    return Err(Error::Config("init sigma must be finite and nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    /// The (linear, product, power) rates in effect at step `t` of `epoch`.
    pub fn rates_at(&self, t: usize, epoch: usize) -> Result<(f64, f64, f64)> {
        match &self.schedule {
            Schedule::Milestones { epochs, factor } => {
                let r = milestone_lr(&[self.gamma_r, self.gamma_g, self.gamma_b], epoch, epochs, *factor);
                Ok((r[0], r[1], r[2]))
            }
            Schedule::Adaptive { alpha, beta, gamma } => {
                if t < 1 {
                    return Err(Error::Config("adaptive schedule starts at t = 1".into()));
                }
                let base = beta / (alpha + t as f64);
                Ok((base, gamma * base, gamma * base))
            }
        }
    }
}

fn sgn(w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w.signum()
    }
}

fn sgd_update(w: &mut [f64], g: &[f64], lr: f64) {
    for (w, g) in w.iter_mut().zip(g) {
        *w -= lr * g;
    }
}

fn l1_update(w: &mut [f64], g: &[f64], alpha: f64, lr: f64) {
    for (w, g) in w.iter_mut().zip(g) {
        *w = *w - alpha * sgn(*w) - lr * g;
    }
}

fn l2_update(w: &mut [f64], g: &[f64], beta: f64, lr: f64) {
    for (w, g) in w.iter_mut().zip(g) {
        *w = *w * (1.0 - beta) - lr * g;
    }
}

fn update_layer(
    layer: &mut crate::neurons::Layer,
    g: &crate::neurons::LayerGrads,
    cfg: &TrainConfig,
    lr_r: f64,
    lr_g: f64,
    lr_b: f64,
) {
    let kind = layer.kind;
    let p = &mut layer.params;
    if kind.has_wr() {
        sgd_update(&mut p.wr.data, &g.wr.data, lr_r);
    }
    if kind.has_br() {
        sgd_update(&mut p.br.data, &g.br.data, lr_r);
    }
    match cfg.variant {
        Variant::Sg => {
            if kind.has_wg() {
                sgd_update(&mut p.wg.data, &g.wg.data, lr_g);
            }
            if kind.has_bg() {
                sgd_update(&mut p.bg.data, &g.bg.data, lr_g);
            }
            if kind.has_wb() {
                sgd_update(&mut p.wb.data, &g.wb.data, lr_b);
            }
            if kind.has_c() {
                sgd_update(&mut p.c.data, &g.c.data, lr_b);
            }
        }
        Variant::Plain => {
            if kind.has_wg() {
                sgd_update(&mut p.wg.data, &g.wg.data, lr_r);
            }
            if kind.has_bg() {
                sgd_update(&mut p.bg.data, &g.bg.data, lr_r);
            }
            if kind.has_wb() {
                sgd_update(&mut p.wb.data, &g.wb.data, lr_r);
            }
            if kind.has_c() {
                sgd_update(&mut p.c.data, &g.c.data, lr_r);
            }
        }
        Variant::SwL1 => {
            if kind.has_wg() {
                l1_update(&mut p.wg.data, &g.wg.data, cfg.alpha_g, lr_r);
            }
            if kind.has_bg() {
                l1_update(&mut p.bg.data, &g.bg.data, cfg.alpha_g, lr_r);
            }
            if kind.has_wb() {
                l1_update(&mut p.wb.data, &g.wb.data, cfg.alpha_b, lr_r);
            }
            if kind.has_c() {
                l1_update(&mut p.c.data, &g.c.data, cfg.alpha_b, lr_r);
            }
        }
        Variant::SwL2 => {
            if kind.has_wg() {
                l2_update(&mut p.wg.data, &g.wg.data, cfg.beta_g, lr_r);
            }
            if kind.has_bg() {
                l2_update(&mut p.bg.data, &g.bg.data, cfg.beta_g, lr_r);
            }
            if kind.has_wb() {
                l2_update(&mut p.wb.data, &g.wb.data, cfg.beta_b, lr_r);
            }
            if kind.has_c() {
                l2_update(&mut p.c.data, &g.c.data, cfg.beta_b, lr_r);
            }
        }
    }
}

/// Applies one update to every parameter the layer's neuron kind owns.
/// Pinned groups (a conventional neuron's bg, say) are never touched, which
/// matters for the shrinking-weight variants: decay acts on values, not
/// gradients, and would otherwise corrupt the pins.
pub fn step(
    net: &mut Network,
    grads: &NetworkGrads,
    cfg: &TrainConfig,
    t: usize,
    epoch: usize,
) -> Result<()> {
    cfg.validate()?;
    if grads.layers.len() != net.layer_count() {
        return Err(Error::State(format!(
            "gradients cover {} layers, network has {}",
            grads.layers.len(),
            net.layer_count()
        )));
    }
    let (lr_r, lr_g, lr_b) = cfg.rates_at(t, epoch)?;
    let mut li = 0;
    let mut zi = 0;
    for seg in &mut net.segments {
        match seg {
            Segment::Layer(l) => {
                update_layer(l, &grads.layers[li], cfg, lr_r, lr_g, lr_b);
                li += 1;
            }
            Segment::Residual { layers, zeta } => {
                for l in layers {
                    update_layer(l, &grads.layers[li], cfg, lr_r, lr_g, lr_b);
                    li += 1;
                }
                let gz = grads.zetas.get(zi).copied().ok_or_else(|| {
                    Error::State("gradients missing a block scalar".into())
                })?;
                *zeta -= lr_r * gz;
                zi += 1;
            }
        }
    }
    Ok(())
}

/// Re-expresses a trained conventional network as a quadratic one of the
/// given architecture, layer by layer, leaving the function unchanged.
pub fn weight_transfer(src: &Network, dst_arch: &Architecture) -> Result<Network> {
    let mut unused = Rng::new(0);
    build(dst_arch, BuildInit::RelinearTransfer(src), &mut unused)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

fn sample_loss_grad(loss: Loss, out: &DenseVector, target: &DenseVector) -> Result<(f64, DenseVector)> {
    if out.len() != target.len() {
        return Err(Error::Dimension(format!(
            "output width {} vs target width {}",
            out.len(),
            target.len()
        )));
    }
    match loss {
        Loss::Mse => {
            let diff = out.sub(target)?;
            let l = diff.norm_sq();
            Ok((l, diff.scale(2.0)))
        }
        Loss::CrossEntropy => {
            let m = out.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = out.data.iter().map(|z| (z - m).exp()).collect();
            let z_sum: f64 = exps.iter().sum();
            let mut l = 0.0;
            let mut grad = DenseVector::zeros(out.len());
            for i in 0..out.len() {
                let p = exps[i] / z_sum;
                grad.data[i] = p - target.data[i];
                if target.data[i] != 0.0 {
                    l -= target.data[i] * p.max(1e-300).ln();
                }
            }
            Ok((l, grad))
        }
    }
}

/// Epoch-level quality measure: root-mean-square error for regression,
/// argmax accuracy for classification.
pub fn eval_metric(
    loss: Loss,
    net: &Network,
    inputs: &[DenseVector],
    targets: &[DenseVector],
) -> Result<f64> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Config("evaluation needs matching nonempty sets".into()));
    }
    match loss {
        Loss::Mse => {
            let mut sq = 0.0;
            let mut count = 0usize;
            for (x, y) in inputs.iter().zip(targets) {
                let out = net.eval(x)?;
                let diff = out.sub(y)?;
                sq += diff.norm_sq();
                count += y.len();
            }
            Ok((sq / count as f64).sqrt())
        }
        Loss::CrossEntropy => {
            let mut hits = 0usize;
            for (x, y) in inputs.iter().zip(targets) {
                let out = net.eval(x)?;
                let pred = argmax(&out.data);
                if pred == argmax(&y.data) {
                    hits += 1;
                }
            }
            Ok(hits as f64 / inputs.len() as f64)
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Training data plus an optional held-out evaluation set. When the eval set
/// is empty, epoch metrics are computed on the training set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<DenseVector>,
    pub targets: Vec<DenseVector>,
    pub eval_inputs: Vec<DenseVector>,
    pub eval_targets: Vec<DenseVector>,
}

impl Dataset {
    pub fn new(inputs: Vec<DenseVector>, targets: Vec<DenseVector>) -> Result<Self> {
        Self::with_eval(inputs, targets, Vec::new(), Vec::new())
    }

    pub fn with_eval(
        inputs: Vec<DenseVector>,
        targets: Vec<DenseVector>,
        eval_inputs: Vec<DenseVector>,
        eval_targets: Vec<DenseVector>,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Config(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if eval_inputs.len() != eval_targets.len() {
            return Err(Error::Config(format!(
                "{} eval inputs vs {} eval targets",
                eval_inputs.len(),
                eval_targets.len()
            )));
        }
        let dx = inputs[0].len();
        let dy = targets[0].len();
        let same = inputs.iter().all(|x| x.len() == dx)
            && targets.iter().all(|y| y.len() == dy)
            && eval_inputs.iter().all(|x| x.len() == dx)
            && eval_targets.iter().all(|y| y.len() == dy);
        if !same {
            return Err(Error::Config("ragged dataset".into()));
        }
        Ok(Dataset {
            inputs,
            targets,
            eval_inputs,
            eval_targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Per-step gradient norms with their running minimum, the quantity the
/// convergence-rate bound speaks about.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub grad_norms: Vec<f64>,
    pub running_min: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, grad_norm: f64) {
        let m = match self.running_min.last() {
            Some(prev) => prev.min(grad_norm),
            None => grad_norm,
        };
        self.grad_norms.push(grad_norm);
        self.running_min.push(m);
    }

    pub fn len(&self) -> usize {
        self.grad_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_norms.is_empty()
    }
}

/// Least-squares slope of log running-min gradient norm against log step
/// count; an exponent near -1/2 matches the SGD rate bound.
pub fn rate_fit(trace: &ConvergenceTrace) -> Result<f64> {
    let n = trace.running_min.len();
    if n < 100 {
        return Err(Error::Config(format!(
            "rate fit needs at least 100 steps, got {n}"
        )));
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for (i, m) in trace.running_min.iter().enumerate() {
        xs.push(((i + 1) as f64).ln());
        ys.push(m.max(1e-300).ln());
    }
    let xm = xs.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xm) * (y - ym);
        den += (x - xm) * (x - xm);
    }
    Ok(num / den)
}

pub const METRICS_CSV_HEADER: &str = "step,epoch,loss,grad_norm,eval_metric,lr_r,lr_g,lr_b";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Filled on the last step of each epoch.
    pub eval_metric: Option<f64>,
    pub lr_r: f64,
    pub lr_g: f64,
    pub lr_b: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let metric = r.eval_metric.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.epoch, r.loss, r.grad_norm, metric, r.lr_r, r.lr_g, r.lr_b
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

const DIVERGENCE_LIMIT: f64 = 1e12;

struct AdamState {
    m: NetworkGrads,
    v: NetworkGrads,
}

fn grad_slots(g: &mut crate::neurons::LayerGrads) -> [&mut Vec<f64>; 6] {
    [
        &mut g.wr.data,
        &mut g.wg.data,
        &mut g.wb.data,
        &mut g.br.data,
        &mut g.bg.data,
        &mut g.c.data,
    ]
}

/// Replaces each gradient entry with the Adam direction m̂/(√v̂ + eps),
/// updating the moment buffers in place. Pinned groups carry zero gradients
/// forever, so their moments stay zero and the direction stays zero.
fn adam_precondition(
    grads: &mut NetworkGrads,
    state: &mut AdamState,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    let dir = |g: &mut f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * *g;
        *v = beta2 * *v + (1.0 - beta2) * *g * *g;
        *g = (*m / bc1) / ((*v / bc2).sqrt() + eps);
    };
    for ((gl, ml), vl) in grads
        .layers
        .iter_mut()
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        for ((gs, ms), vs) in grad_slots(gl)
            .into_iter()
            .zip(grad_slots(ml))
            .zip(grad_slots(vl))
        {
            for ((g, m), v) in gs.iter_mut().zip(ms.iter_mut()).zip(vs.iter_mut()) {
                dir(g, m, v);
            }
        }
    }
    for ((g, m), v) in grads
        .zetas
        .iter_mut()
        .zip(&mut state.m.zetas)
        .zip(&mut state.v.zetas)
    {
        dir(g, m, v);
    }
}

/// Mini-batch SGD over the dataset. Full batch when no batch size is set;
/// otherwise each epoch reshuffles with the config seed, so a run is a pure
/// function of (initial network, dataset, config). Aborts with
/// [`Error::Diverged`] the first time the batch loss is non-finite or leaves
/// [-1e12, 1e12].
pub fn train(
    net: Network,
    data: &Dataset,
    loss: Loss,
    cfg: &TrainConfig,
) -> Result<(Network, ConvergenceTrace, MetricsLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.inputs[0].len() != net.in_dim() || data.targets[0].len() != net.out_dim() {
        return Err(Error::Dimension(format!(
            "network is {}->{} but data is {}->{}",
            net.in_dim(),
            net.out_dim(),
            data.inputs[0].len(),
            data.targets[0].len()
        )));
    }
    let mut net = net;
    let n = data.len();
    let bs = cfg.batch_size.unwrap_or(n).min(n);
    let batches_per_epoch = n.div_ceil(bs);
    let mut rng = Rng::new(cfg.seed).derive(1);
    let mut trace = ConvergenceTrace::default();
    let mut log = MetricsLog::default();
    let mut t = 0usize;
    let mut adam = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam { .. } => Some(AdamState {
            m: NetworkGrads::zeros_like(&net),
            v: NetworkGrads::zeros_like(&net),
        }),
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if bs < n {
            rng.shuffle(&mut order);
        }
        for (bi, chunk) in order.chunks(bs).enumerate() {
            t += 1;
            let mut grads = NetworkGrads::zeros_like(&net);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (out, caches) = net_forward(&net, &data.inputs[i])?;
                let (l, g) = sample_loss_grad(loss, &out, &data.targets[i])?;
                batch_loss += l;
                let (sample_grads, _) = net_backward(&net, &caches, &g)?;
                grads.accumulate(&sample_grads)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            batch_loss *= scale;
            grads.scale_in_place(scale);
            if !batch_loss.is_finite() || batch_loss.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    step: t,
                    loss: batch_loss,
                });
            }
            let grad_norm = grads.norm();
            trace.push(grad_norm);
            if let (Optimizer::Adam { beta1, beta2, eps }, Some(state)) =
                (cfg.optimizer, adam.as_mut())
            {
                adam_precondition(&mut grads, state, beta1, beta2, eps, t);
            }
            let (lr_r, lr_g, lr_b) = cfg.rates_at(t, epoch)?;
            let mut li = 0;
            let mut zi = 0;
            for seg in &mut net.segments {
                match seg {
                    Segment::Layer(l) => {
                        update_layer(l, &grads.layers[li], cfg, lr_r, lr_g, lr_b);
                        li += 1;
                    }
                    Segment::Residual { layers, zeta } => {
                        for l in layers {
                            update_layer(l, &grads.layers[li], cfg, lr_r, lr_g, lr_b);
                            li += 1;
                        }
                        *zeta -= lr_r * grads.zetas[zi];
                        zi += 1;
                    }
                }
            }
            let eval = if bi + 1 == batches_per_epoch {
                let metric = if data.eval_inputs.is_empty() {
                    eval_metric(loss, &net, &data.inputs, &data.targets)?
                } else {
                    eval_metric(loss, &net, &data.eval_inputs, &data.eval_targets)?
                };
                Some(metric)
            } else {
                None
            };
            log.rows.push(MetricsRow {
                step: t,
                epoch,
                loss: batch_loss,
                grad_norm,
                eval_metric: eval,
                lr_r,
                lr_g,
                lr_b,
            });
        }
    }
    Ok((net, trace, log))
}
