//! One layer of quadratic neurons: parameters, forward pass, and
//! hand-derived gradients.
//!
//! The full neuron computes
//!
//! ```text
//! q(x) = sigma( (Wr x + br) . (Wg x + bg) + Wb (x.x) + c )
//! ```
//!
//! where `.` is the element-wise product. Every other kind in
//! [`NeuronKind`] is a restriction of this formula: the groups a kind does
//! not own are pinned to the values that make them disappear (zero weights,
//! and a one/zero multiplicative bias), so a single forward/backward
//! implementation serves all kinds. Gradients for pinned groups are reported
//! as zero, which keeps them pinned under any optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, DenseVector, Rng};

/// Which parameter groups a layer owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    /// `sigma(Wr x + br)`.
    Conventional,
    /// The full six-group neuron.
    Quadratic,
    /// No interaction term: `sigma(Wr x + br + Wb (x.x) + c)`.
    Compact,
    /// Product term only: `sigma((Wr x + br)(Wg x + bg))`.
    Parabolic,
    /// Product and square terms without biases: `sigma((Wr x)(Wg x) + Wb (x.x))`.
    Bu,
    /// Square term only: `sigma(Wb (x.x) + c)`.
    Goyal,
}

impl NeuronKind {
    pub const ALL: [NeuronKind; 6] = [
        NeuronKind::Conventional,
        NeuronKind::Quadratic,
        NeuronKind::Compact,
        NeuronKind::Parabolic,
        NeuronKind::Bu,
        NeuronKind::Goyal,
    ];

    pub fn has_wr(self) -> bool {
        !matches!(self, NeuronKind::Goyal)
    }

    pub fn has_br(self) -> bool {
        matches!(
            self,
            NeuronKind::Conventional
                | NeuronKind::Quadratic
                | NeuronKind::Compact
                | NeuronKind::Parabolic
        )
    }

    pub fn has_wg(self) -> bool {
        matches!(
            self,
            NeuronKind::Quadratic | NeuronKind::Parabolic | NeuronKind::Bu
        )
    }

    pub fn has_bg(self) -> bool {
        matches!(self, NeuronKind::Quadratic | NeuronKind::Parabolic)
    }

    pub fn has_wb(self) -> bool {
        matches!(
            self,
            NeuronKind::Quadratic | NeuronKind::Compact | NeuronKind::Bu | NeuronKind::Goyal
        )
    }

    pub fn has_c(self) -> bool {
        matches!(
            self,
            NeuronKind::Quadratic | NeuronKind::Compact | NeuronKind::Goyal
        )
    }

    /// Value `bg` is held at when the kind does not own it. One for every
    /// kind whose product term must collapse to the `Wr` branch; zero for
    /// `bu`, which owns the product but has no biases at all.
    pub fn bg_pin(self) -> f64 {
        if matches!(self, NeuronKind::Bu) {
            0.0
        } else {
            1.0
        }
    }

    /// Whether the degenerate state `Wg=0, bg=1, Wb=0, c=0` (over the groups
    /// the kind owns or pins) reduces the neuron to `sigma(Wr x + br)`.
    /// `bu` lacks biases and `goyal` lacks the linear branch, so neither can
    /// degenerate to a conventional neuron.
    pub fn degenerates_to_conventional(self) -> bool {
        !matches!(self, NeuronKind::Bu | NeuronKind::Goyal)
    }

    /// Number of trainable parameters of one layer of this kind.
    pub fn param_count(self, out_dim: usize, in_dim: usize) -> usize {
        let m = out_dim * in_dim;
        let mut n = 0;
        if self.has_wr() {
            n += m;
        }
        if self.has_wg() {
            n += m;
        }
        if self.has_wb() {
            n += m;
        }
        if self.has_br() {
            n += out_dim;
        }
        if self.has_bg() {
            n += out_dim;
        }
        if self.has_c() {
            n += out_dim;
        }
        n
    }
}

/// Activation applied to the pre-activation `z`.
///
/// `Linear` is the identity; it equals `relu(z) - relu(-z)` exactly in IEEE
/// arithmetic, so no separate realization is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative of the activation; the ReLU derivative at exactly 0 is
    /// defined as 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// The six parameter groups of one layer. Groups a kind does not own are
/// stored anyway, pinned at their degenerate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticParams {
    pub wr: DenseMatrix,
    pub wg: DenseMatrix,
    pub wb: DenseMatrix,
    pub br: DenseVector,
    pub bg: DenseVector,
    pub c: DenseVector,
}

impl QuadraticParams {
    /// All groups at the kind's pinned/degenerate values: zero weights and
    /// biases, `bg` at its pin value.
    pub fn degenerate(kind: NeuronKind, out_dim: usize, in_dim: usize) -> Self {
        Self {
            wr: DenseMatrix::zeros(out_dim, in_dim),
            wg: DenseMatrix::zeros(out_dim, in_dim),
            wb: DenseMatrix::zeros(out_dim, in_dim),
            br: DenseVector::zeros(out_dim),
            bg: DenseVector::new(vec![kind.bg_pin(); out_dim]),
            c: DenseVector::zeros(out_dim),
        }
    }

    /// Draws every group the kind owns from N(0, sigma^2); pinned groups keep
    /// their degenerate values.
    pub fn plain_random(
        kind: NeuronKind,
        out_dim: usize,
        in_dim: usize,
        sigma: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut p = Self::degenerate(kind, out_dim, in_dim);
        let fill_mat = |m: &mut DenseMatrix, rng: &mut Rng| {
            for v in &mut m.data {
                *v = rng.gaussian(sigma);
            }
        };
        if kind.has_wr() {
            fill_mat(&mut p.wr, rng);
        }
        if kind.has_wg() {
            fill_mat(&mut p.wg, rng);
        }
        if kind.has_wb() {
            fill_mat(&mut p.wb, rng);
        }
        if kind.has_br() {
            for v in &mut p.br.data {
                *v = rng.gaussian(sigma);
            }
        }
        if kind.has_bg() {
            for v in &mut p.bg.data {
                *v = rng.gaussian(sigma);
            }
        }
        if kind.has_c() {
            for v in &mut p.c.data {
                *v = rng.gaussian(sigma);
            }
        }
        p
    }

    pub fn out_dim(&self) -> usize {
        self.wr.rows
    }

    pub fn in_dim(&self) -> usize {
        self.wr.cols
    }

    /// Checks that the six shapes agree with each other.
    pub fn validate(&self) -> Result<()> {
        let (o, i) = (self.wr.rows, self.wr.cols);
        let mats_ok = self.wg.rows == o
            && self.wg.cols == i
            && self.wb.rows == o
            && self.wb.cols == i;
        let vecs_ok = self.br.len() == o && self.bg.len() == o && self.c.len() == o;
        if !mats_ok || !vecs_ok {
            return Err(Error::Dimension(
                "parameter group shapes are inconsistent".into(),
            ));
        }
        Ok(())
    }
}

/// Linear-part source for [`relinear_init`].
pub enum LinearInit<'a> {
    /// Copy `(weights, bias)` from a conventional layer of the same shape.
    Transfer {
        weights: &'a DenseMatrix,
        bias: &'a DenseVector,
    },
    /// Draw `(Wr, br)` from N(0, sigma^2).
    Random {
        out_dim: usize,
        in_dim: usize,
        sigma: f64,
        rng: &'a mut Rng,
    },
}

/// ReLinear initialization: the linear part `(Wr, br)` is transferred or
/// randomly drawn, and every quadratic-part group is set to the value that
/// makes the layer act as the plain linear layer (`Wg=0, bg=1, Wb=0, c=0`).
///
/// `bu` and `goyal` have no such degenerate state (`bu` owns no biases,
/// `goyal` no linear branch), so they are rejected.
pub fn relinear_init(kind: NeuronKind, source: LinearInit) -> Result<QuadraticParams> {
    if !kind.degenerates_to_conventional() {
        return Err(Error::Config(format!(
            "{kind:?} has no conventional degenerate state to initialize into"
        )));
    }
    match source {
        LinearInit::Transfer { weights, bias } => {
            if bias.len() != weights.rows {
                return Err(Error::Dimension(format!(
                    "transfer source: {}x{} weights with bias of length {}",
                    weights.rows,
                    weights.cols,
                    bias.len()
                )));
            }
            let mut p = QuadraticParams::degenerate(kind, weights.rows, weights.cols);
            p.wr = weights.clone();
            p.br = bias.clone();
            Ok(p)
        }
        LinearInit::Random {
            out_dim,
            in_dim,
            sigma,
            rng,
        } => {
            let mut p = QuadraticParams::degenerate(kind, out_dim, in_dim);
            for v in &mut p.wr.data {
                *v = rng.gaussian(sigma);
            }
            for v in &mut p.br.data {
                *v = rng.gaussian(sigma);
            }
            Ok(p)
        }
    }
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Layer input `x`.
    pub input: DenseVector,
    /// `Wr x + br`.
    pub lin_r: DenseVector,
    /// `Wg x + bg`.
    pub lin_g: DenseVector,
    /// `x . x`.
    pub squared: DenseVector,
    /// Pre-activation `z`.
    pub pre: DenseVector,
    /// Activation derivative at `z`.
    pub mask: DenseVector,
}

/// Forward pass of one layer. Returns the activated output and the cache
/// required for [`backward`].
pub fn forward(
    p: &QuadraticParams,
    x: &DenseVector,
    activation: Activation,
) -> Result<(DenseVector, LayerCache)> {
    p.validate()?;
    let lin_r = p.wr.matvec(x)?.add(&p.br)?;
    let lin_g = p.wg.matvec(x)?.add(&p.bg)?;
    let squared = x.hadamard(x)?;
    let pre = lin_r.hadamard(&lin_g)?.add(&p.wb.matvec(&squared)?)?.add(&p.c)?;
    let out = DenseVector::new(pre.data.iter().map(|&z| activation.apply(z)).collect());
    let mask = DenseVector::new(pre.data.iter().map(|&z| activation.derivative(z)).collect());
    let cache = LayerCache {
        input: x.clone(),
        lin_r,
        lin_g,
        squared,
        pre,
        mask,
    };
    Ok((out, cache))
}

/// Gradients of one layer's parameters. Pinned groups are identically zero.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub wr: DenseMatrix,
    pub wg: DenseMatrix,
    pub wb: DenseMatrix,
    pub br: DenseVector,
    pub bg: DenseVector,
    pub c: DenseVector,
}

impl LayerGrads {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            wr: DenseMatrix::zeros(out_dim, in_dim),
            wg: DenseMatrix::zeros(out_dim, in_dim),
            wb: DenseMatrix::zeros(out_dim, in_dim),
            br: DenseVector::zeros(out_dim),
            bg: DenseVector::zeros(out_dim),
            c: DenseVector::zeros(out_dim),
        }
    }

    pub fn accumulate(&mut self, other: &LayerGrads) -> Result<()> {
        self.wr.axpy(1.0, &other.wr)?;
        self.wg.axpy(1.0, &other.wg)?;
        self.wb.axpy(1.0, &other.wb)?;
        self.br = self.br.add(&other.br)?;
        self.bg = self.bg.add(&other.bg)?;
        self.c = self.c.add(&other.c)?;
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for m in [&mut self.wr, &mut self.wg, &mut self.wb] {
            for v in &mut m.data {
                *v *= s;
            }
        }
        for vec in [&mut self.br, &mut self.bg, &mut self.c] {
            for v in &mut vec.data {
                *v *= s;
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.wr.norm_sq()
            + self.wg.norm_sq()
            + self.wb.norm_sq()
            + self.br.norm_sq()
            + self.bg.norm_sq()
            + self.c.norm_sq()
    }
}

/// Backward pass of one layer.
///
/// `upstream` is dL/d(output). Returns the parameter gradients and dL/dx.
/// The input gradient is
///
/// ```text
/// dL/dx = Wr'(gz . lin_g) + Wg'(gz . lin_r) + 2 x . (Wb' gz)
/// ```
///
/// with `gz = upstream . mask`; groups the kind does not own get zero
/// gradients.
pub fn backward(
    kind: NeuronKind,
    p: &QuadraticParams,
    cache: &LayerCache,
    upstream: &DenseVector,
) -> Result<(LayerGrads, DenseVector)> {
    let (o, i) = (p.out_dim(), p.in_dim());
    if cache.input.len() != i || cache.pre.len() != o || cache.lin_r.len() != o {
        return Err(Error::State(
            "layer cache does not match parameter shapes".into(),
        ));
    }
    if upstream.len() != o {
        return Err(Error::Dimension(format!(
            "upstream of length {} for layer with {} outputs",
            upstream.len(),
            o
        )));
    }

    let gz = upstream.hadamard(&cache.mask)?;
    let ga = gz.hadamard(&cache.lin_g)?;
    let gb = gz.hadamard(&cache.lin_r)?;

    let mut grads = LayerGrads::zeros(o, i);
    if kind.has_wr() {
        grads.wr = DenseMatrix::outer(&ga, &cache.input);
    }
    if kind.has_br() {
        grads.br = ga.clone();
    }
    if kind.has_wg() {
        grads.wg = DenseMatrix::outer(&gb, &cache.input);
    }
    if kind.has_bg() {
        grads.bg = gb.clone();
    }
    if kind.has_wb() {
        grads.wb = DenseMatrix::outer(&gz, &cache.squared);
    }
    if kind.has_c() {
        grads.c = gz.clone();
    }

    let mut gx = p.wr.matvec_t(&ga)?.add(&p.wg.matvec_t(&gb)?)?;
    let wb_gz = p.wb.matvec_t(&gz)?;
    for j in 0..i {
        gx.data[j] += 2.0 * cache.input.data[j] * wb_gz.data[j];
    }
    Ok((grads, gx))
}

/// One layer: kind tag, parameters, activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: NeuronKind,
    pub params: QuadraticParams,
    pub activation: Activation,
}

impl Layer {
    pub fn new(kind: NeuronKind, params: QuadraticParams, activation: Activation) -> Self {
        Self {
            kind,
            params,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.params.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.params.out_dim()
    }

    pub fn forward(&self, x: &DenseVector) -> Result<(DenseVector, LayerCache)> {
        forward(&self.params, x, self.activation)
    }

    pub fn backward(
        &self,
        cache: &LayerCache,
        upstream: &DenseVector,
    ) -> Result<(LayerGrads, DenseVector)> {
        backward(self.kind, &self.params, cache, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(v: &[f64]) -> DenseVector {
        DenseVector::new(v.to_vec())
    }

    #[test]
    fn forward_direct_substitution() {
        // (1*1 + 0*2 + 1) * (0*1 + 1*2 + 0) + (1*1 + 1*4) + 0 = 2*2 + 5 = 9
        let p = QuadraticParams {
            wr: DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            wg: DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
            wb: DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            br: vec_of(&[1.0]),
            bg: vec_of(&[0.0]),
            c: vec_of(&[0.0]),
        };
        let (y, _) = forward(&p, &vec_of(&[1.0, 2.0]), Activation::Linear).unwrap();
        assert_eq!(y.data, vec![9.0]);
    }

    #[test]
    fn univariate_forward_hand_value() {
        // q(x) = (2x+1)(x-3) + x^2 + 5 at x=2: 5*(-1) + 4 + 5 = 4
        let p = QuadraticParams {
            wr: DenseMatrix::from_rows(&[vec![2.0]]).unwrap(),
            wg: DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
            wb: DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
            br: vec_of(&[1.0]),
            bg: vec_of(&[-3.0]),
            c: vec_of(&[5.0]),
        };
        let (y, _) = forward(&p, &vec_of(&[2.0]), Activation::Linear).unwrap();
        assert_eq!(y.data, vec![4.0]);
    }

    #[test]
    fn xor_single_neuron() {
        let p = QuadraticParams {
            wr: DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            wg: DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            wb: DenseMatrix::zeros(1, 2),
            br: vec_of(&[0.0]),
            bg: vec_of(&[0.0]),
            c: vec_of(&[0.0]),
        };
        let cases = [
            ([0.0, 0.0], 0.0),
            ([0.0, 1.0], 1.0),
            ([1.0, 0.0], 1.0),
            ([1.0, 1.0], 0.0),
        ];
        for (x, want) in cases {
            let (y, _) = forward(&p, &vec_of(&x), Activation::Linear).unwrap();
            assert_eq!(y.data[0], want, "xor({x:?})");
        }
    }

    #[test]
    fn degenerate_state_equals_conventional_for_carrier_kinds() {
        let mut rng = Rng::new(11);
        for kind in NeuronKind::ALL {
            if !kind.degenerates_to_conventional() {
                continue;
            }
            let w = DenseMatrix::new(3, 4, (0..12).map(|_| rng.gaussian(1.0)).collect()).unwrap();
            let b = DenseVector::new((0..3).map(|_| rng.gaussian(1.0)).collect());
            let quad = relinear_init(
                kind,
                LinearInit::Transfer {
                    weights: &w,
                    bias: &b,
                },
            )
            .unwrap();
            for _ in 0..100 {
                let x = DenseVector::new((0..4).map(|_| rng.gaussian(2.0)).collect());
                let conv = w.matvec(&x).unwrap().add(&b).unwrap().relu();
                let (y, _) = forward(&quad, &x, Activation::Relu).unwrap();
                for (a, q) in conv.data.iter().zip(&y.data) {
                    assert!((a - q).abs() <= 1e-15, "{kind:?}: {a} vs {q}");
                }
            }
        }
    }

    #[test]
    fn relinear_random_pins_quadratic_groups() {
        let mut rng = Rng::new(3);
        let p = relinear_init(
            NeuronKind::Quadratic,
            LinearInit::Random {
                out_dim: 4,
                in_dim: 5,
                sigma: 0.01,
                rng: &mut rng,
            },
        )
        .unwrap();
        assert!(p.wg.data.iter().all(|&v| v == 0.0));
        assert!(p.wb.data.iter().all(|&v| v == 0.0));
        assert!(p.c.data.iter().all(|&v| v == 0.0));
        assert!(p.bg.data.iter().all(|&v| v == 1.0));
        assert!(p.wr.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn relinear_init_rejects_biasless_kinds() {
        let w = DenseMatrix::zeros(2, 2);
        let b = DenseVector::zeros(2);
        for kind in [NeuronKind::Bu, NeuronKind::Goyal] {
            let r = relinear_init(
                kind,
                LinearInit::Transfer {
                    weights: &w,
                    bias: &b,
                },
            );
            assert!(matches!(r, Err(Error::Config(_))), "{kind:?}");
        }
    }

    #[test]
    fn param_counts_per_kind() {
        let (o, i) = (3, 4);
        assert_eq!(NeuronKind::Conventional.param_count(o, i), 12 + 3);
        assert_eq!(NeuronKind::Quadratic.param_count(o, i), 3 * 12 + 3 * 3);
        assert_eq!(NeuronKind::Compact.param_count(o, i), 2 * 12 + 2 * 3);
        assert_eq!(NeuronKind::Parabolic.param_count(o, i), 2 * 12 + 2 * 3);
        assert_eq!(NeuronKind::Bu.param_count(o, i), 3 * 12);
        assert_eq!(NeuronKind::Goyal.param_count(o, i), 12 + 3);
    }

    #[test]
    fn homogeneity_of_pure_quadratic_part() {
        let mut rng = Rng::new(5);
        let mut p = QuadraticParams::plain_random(NeuronKind::Quadratic, 3, 3, 1.0, &mut rng);
        p.br = DenseVector::zeros(3);
        p.bg = DenseVector::zeros(3);
        p.c = DenseVector::zeros(3);
        let x = DenseVector::new(vec![0.3, -0.7, 1.1]);
        let t = 1.7;
        let (z1, _) = forward(&p, &x, Activation::Linear).unwrap();
        let (zt, _) = forward(&p, &x.scale(t), Activation::Linear).unwrap();
        for (a, b) in z1.data.iter().zip(&zt.data) {
            assert!((b - t * t * a).abs() <= 1e-12 * (1.0 + a.abs()), "{a} {b}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(9);
        let p = QuadraticParams::plain_random(NeuronKind::Quadratic, 2, 3, 0.5, &mut rng);
        let x = DenseVector::new(vec![0.1, 0.2, 0.3]);
        let (_, cache) = forward(&p, &x, Activation::Relu).unwrap();
        let (g, gx) = backward(NeuronKind::Quadratic, &p, &cache, &DenseVector::zeros(2)).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
        assert_eq!(gx.norm_sq(), 0.0);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut rng = Rng::new(9);
        let p = QuadraticParams::plain_random(NeuronKind::Quadratic, 2, 3, 0.5, &mut rng);
        let p_big = QuadraticParams::plain_random(NeuronKind::Quadratic, 4, 5, 0.5, &mut rng);
        let x = DenseVector::new(vec![0.1, 0.2, 0.3]);
        let (_, cache) = forward(&p, &x, Activation::Relu).unwrap();
        let r = backward(NeuronKind::Quadratic, &p_big, &cache, &DenseVector::zeros(4));
        assert!(matches!(r, Err(Error::State(_))));
    }

    /// Central-difference check of every owned parameter group, all kinds and
    /// both activations. The scalar objective is dot(u, layer(x)) for a fixed
    /// random u.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(2024);
        let eps = 1e-5;
        for kind in NeuronKind::ALL {
            for activation in [Activation::Linear, Activation::Relu] {
                for trial in 0..20 {
                    let (o, i) = (1 + trial % 3, 1 + (trial / 3) % 4);
                    let p = QuadraticParams::plain_random(kind, o, i, 0.8, &mut rng);
                    let x = DenseVector::new((0..i).map(|_| rng.gaussian(1.0)).collect());
                    let (_, cache) = forward(&p, &x, activation).unwrap();
                    // Keep the probe away from the ReLU kink where finite
                    // differences are meaningless.
                    if activation == Activation::Relu
                        && cache.pre.data.iter().any(|z| z.abs() < 1e-3)
                    {
                        continue;
                    }
                    let u = DenseVector::new((0..o).map(|_| rng.gaussian(1.0)).collect());
                    let (grads, gx) = backward(kind, &p, &cache, &u).unwrap();

                    let objective = |p: &QuadraticParams, x: &DenseVector| -> f64 {
                        let (y, _) = forward(p, x, activation).unwrap();
                        y.dot(&u).unwrap()
                    };

                    let check = |analytic: f64, fd: f64, what: &str| {
                        let denom = analytic.abs().max(fd.abs()).max(1.0);
                        assert!(
                            (analytic - fd).abs() <= 1e-6 * denom,
                            "{kind:?}/{activation:?} {what}: analytic {analytic} vs fd {fd}"
                        );
                    };

                    let mut p_mut = p.clone();
                    for idx in 0..o * i {
                        for (grad_m, which) in [(&grads.wr, 0), (&grads.wg, 1), (&grads.wb, 2)] {
                            let m = match which {
                                0 => &mut p_mut.wr,
                                1 => &mut p_mut.wg,
                                _ => &mut p_mut.wb,
                            };
                            let orig = m.data[idx];
                            m.data[idx] = orig + eps;
                            let up = objective(&p_mut, &x);
                            match which {
                                0 => p_mut.wr.data[idx] = orig - eps,
                                1 => p_mut.wg.data[idx] = orig - eps,
                                _ => p_mut.wb.data[idx] = orig - eps,
                            }
                            let down = objective(&p_mut, &x);
                            match which {
                                0 => p_mut.wr.data[idx] = orig,
                                1 => p_mut.wg.data[idx] = orig,
                                _ => p_mut.wb.data[idx] = orig,
                            }
                            let fd = (up - down) / (2.0 * eps);
                            // Pinned groups must report zero gradient and are
                            // not perturbed in real training; we only check
                            // groups the kind owns.
                            let owned = match which {
                                0 => kind.has_wr(),
                                1 => kind.has_wg(),
                                _ => kind.has_wb(),
                            };
                            if owned {
                                check(grad_m.data[idx], fd, "weight");
                            } else {
                                assert_eq!(grad_m.data[idx], 0.0);
                            }
                        }
                    }
                    for idx in 0..o {
                        for which in 0..3 {
                            let v = match which {
                                0 => &mut p_mut.br,
                                1 => &mut p_mut.bg,
                                _ => &mut p_mut.c,
                            };
                            let orig = v.data[idx];
                            v.data[idx] = orig + eps;
                            let up = objective(&p_mut, &x);
                            match which {
                                0 => p_mut.br.data[idx] = orig - eps,
                                1 => p_mut.bg.data[idx] = orig - eps,
                                _ => p_mut.c.data[idx] = orig - eps,
                            }
                            let down = objective(&p_mut, &x);
                            match which {
                                0 => p_mut.br.data[idx] = orig,
                                1 => p_mut.bg.data[idx] = orig,
                                _ => p_mut.c.data[idx] = orig,
                            }
                            let fd = (up - down) / (2.0 * eps);
                            let (grad_v, owned) = match which {
                                0 => (&grads.br, kind.has_br()),
                                1 => (&grads.bg, kind.has_bg()),
                                _ => (&grads.c, kind.has_c()),
                            };
                            if owned {
                                check(grad_v.data[idx], fd, "bias");
                            } else {
                                assert_eq!(grad_v.data[idx], 0.0);
                            }
                        }
                    }
                    // Input gradient.
                    let mut x_mut = x.clone();
                    for idx in 0..i {
                        let orig = x_mut.data[idx];
                        x_mut.data[idx] = orig + eps;
                        let up = objective(&p, &x_mut);
                        x_mut.data[idx] = orig - eps;
                        let down = objective(&p, &x_mut);
                        x_mut.data[idx] = orig;
                        check(gx.data[idx], (up - down) / (2.0 * eps), "input");
                    }
                }
            }
        }
    }
}
