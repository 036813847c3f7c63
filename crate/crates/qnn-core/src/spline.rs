//! Polynomial splines and their exact compilation into quadratic networks,
//! plus the reverse direction: extracting the piecewise polynomial a trained
//! univariate network computes.
//!
//! The compiler rests on a telescoping identity. Writing the spline as
//! `S(x) = s_0(x_0) + sum_i P_i(relu(x - x_i))` with
//! `P_i(u) = Q_i(u + x_i) - Q_i(x_i)` and `Q_i = s_i - s_{i-1}`, every `P_i`
//! has zero constant term, so `P_i(u) = u * G_i(u)` and the contribution of
//! knot `i` is exactly zero (in floating point, not just in the limit) for
//! `x < x_i`. Each `u * G_i(u)` is evaluated through a real factorization of
//! `G_i` and a balanced product tree of quadratic neurons.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::network::{Network, Segment};
use crate::neurons::{Activation, Layer, NeuronKind, QuadraticParams};
use crate::poly::{real_factorization, Poly, RealFactor};

fn horner(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// A piecewise polynomial over a strictly increasing knot sequence.
///
/// `pieces[i]` holds ascending-power coefficients valid on
/// `[knots[i], knots[i+1]]`. Pieces must agree at interior knots to 1e-10
/// relative (C0 continuity); constructors and [`spline_to_qnn`] both check.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialSpline {
    pub knots: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
}

const C0_TOL: f64 = 1e-10;

impl PolynomialSpline {
    pub fn new(knots: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        let s = Self { knots, pieces };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::Config("a spline needs at least two knots".into()));
        }
        if self.pieces.len() + 1 != self.knots.len() {
            return Err(Error::Config(format!(
                "{} knots need {} pieces, got {}",
                self.knots.len(),
                self.knots.len() - 1,
                self.pieces.len()
            )));
        }
        if self.knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Config("knots must be finite".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Config(format!(
                    "knots must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, p) in self.pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Config(format!("piece {i} has no coefficients")));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!("piece {i} has non-finite coefficients")));
            }
        }
        for i in 1..self.pieces.len() {
            let x = self.knots[i];
            let left = horner(&self.pieces[i - 1], x);
            let right = horner(&self.pieces[i], x);
            let scale = left.abs().max(right.abs()).max(1.0);
            if (left - right).abs() > C0_TOL * scale {
                return Err(Error::Invariant(format!(
                    "pieces {} and {} disagree at knot {x}: {left} vs {right}",
                    i - 1,
                    i
                )));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Largest per-piece degree (trailing zero coefficients ignored).
    pub fn degree(&self) -> usize {
        self.pieces
            .iter()
            .map(|p| p.iter().rposition(|&c| c != 0.0).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Evaluates the piece containing `x`. Pieces are half-open on the right
    /// except the last, which is closed.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(Error::Domain(format!(
                "x = {x} outside the spline domain [{lo}, {hi}]"
            )));
        }
        let mut i = match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&x).unwrap())
        {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        i = i.min(self.pieces.len() - 1);
        Ok(horner(&self.pieces[i], x))
    }
}

/// Evaluates the spline at `x` (domain-checked).
pub fn eval_spline(s: &PolynomialSpline, x: f64) -> Result<f64> {
    s.eval(x)
}

/// Worst-case interpolation error of an order-2m-1 spline with mesh width
/// `h`: |E_2m| / (2^2m (2m)!) * sup|f^(2m)| * h^2m. Euler numbers are
/// tabulated for m in {1, 2, 6}.
pub fn spline_error_bound(m: usize, h: f64, sup_f2m: f64) -> Result<f64> {
    let e2m = match m {
        1 => 1.0,
        2 => 5.0,
        6 => 2_702_765.0,
        _ => {
            return Err(Error::Config(format!(
                "no tabulated Euler number for m = {m} (supported: 1, 2, 6)"
            )))
        }
    };
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("mesh width must be positive, got {h}")));
    }
    if !(sup_f2m >= 0.0) {
        return Err(Error::Config(format!(
            "derivative bound must be nonnegative, got {sup_f2m}"
        )));
    }
    let two_m = 2 * m as u32;
    let factorial: f64 = (1..=two_m as u64).product::<u64>() as f64;
    Ok(e2m / (2f64.powi(two_m as i32) * factorial) * sup_f2m * h.powi(two_m as i32))
}

/// Sparse description of one quadratic neuron used by the constructions:
/// output = (sum wr_j in_j + br)(sum wg_j in_j + bg) + c.
struct UnitSpec {
    wr: Vec<(usize, f64)>,
    br: f64,
    wg: Vec<(usize, f64)>,
    bg: f64,
    c: f64,
}

fn pass_unit(src: usize) -> UnitSpec {
    UnitSpec {
        wr: vec![(src, 1.0)],
        br: 0.0,
        wg: Vec::new(),
        bg: 1.0,
        c: 0.0,
    }
}

fn prod_unit(a: usize, b: usize) -> UnitSpec {
    UnitSpec {
        wr: vec![(a, 1.0)],
        br: 0.0,
        wg: vec![(b, 1.0)],
        bg: 0.0,
        c: 0.0,
    }
}

fn factor_unit(src: usize, f: &RealFactor) -> UnitSpec {
    match f {
        RealFactor::Linear { r } => UnitSpec {
            wr: vec![(src, 1.0)],
            br: -r,
            wg: Vec::new(),
            bg: 1.0,
            c: 0.0,
        },
        RealFactor::Quadratic { b, c } => UnitSpec {
            wr: vec![(src, 1.0)],
            br: 0.0,
            wg: vec![(src, 1.0)],
            bg: *b,
            c: *c,
        },
    }
}

fn quad_layer(in_dim: usize, units: Vec<UnitSpec>) -> Layer {
    let mut p = QuadraticParams::degenerate(NeuronKind::Quadratic, units.len(), in_dim);
    for (o, u) in units.iter().enumerate() {
        for &(j, w) in &u.wr {
            p.wr.set(o, j, w);
        }
        for &(j, w) in &u.wg {
            p.wg.set(o, j, w);
        }
        p.br.data[o] = u.br;
        p.bg.data[o] = u.bg;
        p.c.data[o] = u.c;
    }
    Layer::new(NeuronKind::Quadratic, p, Activation::Linear)
}

fn conv_layer(in_dim: usize, rows: Vec<(Vec<(usize, f64)>, f64)>, act: Activation) -> Layer {
    let mut p = QuadraticParams::degenerate(NeuronKind::Conventional, rows.len(), in_dim);
    for (o, (ws, b)) in rows.iter().enumerate() {
        for &(j, w) in ws {
            p.wr.set(o, j, w);
        }
        p.br.data[o] = *b;
    }
    Layer::new(NeuronKind::Conventional, p, act)
}

/// Divides an ascending-coefficient polynomial by the monic quadratic
/// x^2 + b x + c, returning (quotient, r1, r0) with remainder r1 x + r0.
fn divmod_monic_quadratic(p: &Poly, b: f64, c: f64) -> (Poly, f64, f64) {
    let n = p.degree();
    if n < 2 {
        let r1 = p.coeffs.get(1).copied().unwrap_or(0.0);
        return (Poly::zero(), r1, p.coeffs[0]);
    }
    let mut rem = p.coeffs[..=n].to_vec();
    let mut quot = vec![0.0; n - 1];
    for k in (2..=n).rev() {
        let q = rem[k];
        quot[k - 2] = q;
        rem[k - 1] -= b * q;
        rem[k - 2] -= c * q;
    }
    (Poly::new(quot), rem[1], rem[0])
}

/// Refines a quadratic factor x^2 + b x + c of `p` by driving the division
/// remainder to zero (Bairstow's iteration). The Newton system is singular
/// at a repeated factor, so the solve is Levenberg-damped: plain Newton
/// whenever it works, with increasing regularization when a step fails to
/// reduce the remainder.
fn bairstow_refine(p: &Poly, b0: f64, c0: f64) -> (f64, f64) {
    let res_at = |b: f64, c: f64| {
        let (_, r1, r0) = divmod_monic_quadratic(p, b, c);
        r1 * r1 + r0 * r0
    };
    let (mut b, mut c) = (b0, c0);
    let mut res = res_at(b, c);
    let (mut best_b, mut best_c, mut best) = (b, c, res);
    let mut lambda = 0.0f64;
    for _ in 0..80 {
        if res == 0.0 {
            break;
        }
        let (s, r1, r0) = divmod_monic_quadratic(p, b, c);
        let (_, s1, s0) = divmod_monic_quadratic(&s, b, c);
        // Jacobian of (r1, r0) with respect to (b, c):
        // [[b s1 - s0, -s1], [c s1, -s0]]
        let j11 = b * s1 - s0;
        let j12 = -s1;
        let j21 = c * s1;
        let j22 = -s0;
        let g1 = -(j11 * r1 + j21 * r0);
        let g2 = -(j12 * r1 + j22 * r0);
        let scale = j11 * j11 + j12 * j12 + j21 * j21 + j22 * j22;
        let mut accepted = false;
        for _ in 0..12 {
            let a11 = j11 * j11 + j21 * j21 + lambda;
            let a12 = j11 * j12 + j21 * j22;
            let a22 = j12 * j12 + j22 * j22 + lambda;
            let det = a11 * a22 - a12 * a12;
            if det != 0.0 && det.is_finite() {
                let db = (a22 * g1 - a12 * g2) / det;
                let dc = (a11 * g2 - a12 * g1) / det;
                let (nb, nc) = (b + db, c + dc);
                if nb.is_finite() && nc.is_finite() {
                    let nres = res_at(nb, nc);
                    if nres < res {
                        b = nb;
                        c = nc;
                        res = nres;
                        lambda *= 0.25;
                        if res < best {
                            best = res;
                            best_b = b;
                            best_c = c;
                        }
                        accepted = true;
                        break;
                    }
                }
            }
            lambda = if lambda == 0.0 {
                1e-10 * scale.max(1e-300)
            } else {
                lambda * 100.0
            };
        }
        if !accepted {
            break;
        }
    }
    (best_b, best_c)
}

/// Eigenvalue root-finding smears a root of multiplicity m over a radius of
/// about eps^(1/m), but the same point is a simple zero of the (m-1)th
/// derivative, where Newton pins it to full precision. Groups the root
/// multiset into clusters, re-polishes each cluster on the matching
/// derivative, and keeps the result only where it does not worsen the
/// residual on `p`, so genuinely distinct-but-close roots are left alone.
fn polish_root_clusters(p: &Poly, roots: &mut [Complex<f64>]) {
    let n = roots.len();
    if n < 2 {
        return;
    }
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mag = |z: Complex<f64>| z.norm_sqr().sqrt();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let scale = 1.0 + mag(roots[i]).max(mag(roots[j]));
            if mag(roots[i] - roots[j]) <= 1e-3 * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut clusters: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        clusters.entry(r).or_default().push(i);
    }
    for members in clusters.values() {
        let m = members.len();
        if m < 2 {
            continue;
        }
        let mut mean = Complex::new(0.0, 0.0);
        for &i in members {
            mean += roots[i];
        }
        mean /= m as f64;
        if mean.im.abs() <= 1e-6 * (1.0 + mean.re.abs()) {
            mean.im = 0.0;
        }
        let mut d = p.derivative();
        for _ in 2..m {
            d = d.derivative();
        }
        let dd = d.derivative();
        let mut z = mean;
        for _ in 0..60 {
            let f = d.eval_complex(z);
            let g = dd.eval_complex(z);
            if g.norm_sqr() == 0.0 {
                break;
            }
            let step = f / g;
            z -= step;
            if mag(step) <= 1e-16 * (1.0 + mag(z)) {
                break;
            }
        }
        if !z.re.is_finite() || !z.im.is_finite() {
            continue;
        }
        if z.im.abs() <= 1e-8 * (1.0 + z.re.abs()) {
            z.im = 0.0;
        }
        if z.im != 0.0 && m % 2 != 0 {
            continue;
        }
        let worst = members
            .iter()
            .map(|&i| mag(p.eval_complex(roots[i])))
            .fold(0.0f64, f64::max);
        let coeff_scale = p.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let noise = 1e-13 * coeff_scale * mag(z).max(1.0).powi(p.degree() as i32);
        if mag(p.eval_complex(z)) > 4.0 * worst.max(noise) {
            continue;
        }
        if z.im == 0.0 {
            for &i in members {
                roots[i] = z;
            }
        } else {
            let up = Complex::new(z.re, z.im.abs());
            for (k, &i) in members.iter().enumerate() {
                roots[i] = if k < m / 2 { up } else { up.conj() };
            }
        }
    }
}

/// Factors `g` into a leading coefficient times monic quadratic factors plus
/// at most one linear factor. Root clusters are re-polished on derivatives,
/// real roots are paired into quadratics (adjacent after sorting, so
/// duplicates stay together) and every quadratic is polished against the
/// monic polynomial.
fn refined_factorization(g: &Poly) -> Result<(f64, Vec<RealFactor>)> {
    let (lead, raw) = real_factorization(g)?;
    let monic = g.scale(1.0 / lead);
    let mut roots: Vec<Complex<f64>> = Vec::new();
    for f in &raw {
        match f {
            RealFactor::Linear { r } => roots.push(Complex::new(*r, 0.0)),
            RealFactor::Quadratic { b, c } => {
                let re = -b / 2.0;
                let im = (c - b * b / 4.0).max(0.0).sqrt();
                roots.push(Complex::new(re, im));
                roots.push(Complex::new(re, -im));
            }
        }
    }
    polish_root_clusters(&monic, &mut roots);
    let mut lins: Vec<f64> = roots
        .iter()
        .filter(|z| z.im == 0.0)
        .map(|z| z.re)
        .collect();
    lins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut quads: Vec<(f64, f64)> = roots
        .iter()
        .filter(|z| z.im > 0.0)
        .map(|z| (-2.0 * z.re, z.norm_sqr()))
        .collect();
    let mut i = 0;
    while i + 1 < lins.len() {
        quads.push((-(lins[i] + lins[i + 1]), lins[i] * lins[i + 1]));
        i += 2;
    }
    let mut factors = Vec::with_capacity(quads.len() + 1);
    for (b, c) in quads {
        let (b, c) = bairstow_refine(&monic, b, c);
        factors.push(RealFactor::Quadratic { b, c });
    }
    if i < lins.len() {
        factors.push(RealFactor::Linear { r: lins[i] });
    }
    Ok((lead, factors))
}

/// Extends `layers` with quadratic product-tree levels until every group in
/// `groups` is reduced to a single unit; returns the final unit index per
/// group.
fn build_product_tree(
    layers: &mut Vec<Layer>,
    mut width: usize,
    mut groups: Vec<Vec<usize>>,
) -> Vec<usize> {
    while groups.iter().any(|g| g.len() > 1) {
        let mut units: Vec<UnitSpec> = Vec::new();
        let mut next_groups = Vec::with_capacity(groups.len());
        for g in &groups {
            let mut ng = Vec::with_capacity((g.len() + 1) / 2);
            for pair in g.chunks(2) {
                let o = units.len();
                match *pair {
                    [a, b] => units.push(prod_unit(a, b)),
                    [a] => units.push(pass_unit(a)),
                    _ => unreachable!(),
                }
                ng.push(o);
            }
            next_groups.push(ng);
        }
        let next_width = units.len();
        layers.push(quad_layer(width, units));
        width = next_width;
        groups = next_groups;
    }
    groups.into_iter().map(|g| g[0]).collect()
}

/// Compiles a univariate polynomial (ascending coefficients) into a network
/// with linear activations computing it everywhere: a real factorization
/// feeds a leaf layer of one neuron per factor, a balanced product tree
/// multiplies the factors pairwise, and a final layer applies the leading
/// coefficient. Depth is ceil(log2 degree) + 2.
pub fn poly_to_qnn(coeffs: &[f64]) -> Result<Network> {
    if coeffs.is_empty() {
        return Err(Error::Config(
            "a polynomial needs at least one coefficient".into(),
        ));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("polynomial coefficients must be finite".into()));
    }
    let p = Poly::new(coeffs.to_vec());
    let deg = p.degree();
    if deg == 0 {
        return Network::feedforward(vec![conv_layer(
            1,
            vec![(Vec::new(), p.coeffs[0])],
            Activation::Linear,
        )]);
    }
    if deg == 1 {
        return Network::feedforward(vec![conv_layer(
            1,
            vec![(vec![(0, p.coeffs[1])], p.coeffs[0])],
            Activation::Linear,
        )]);
    }
    let (lead, factors) = refined_factorization(&p)?;
    let units: Vec<UnitSpec> = factors.iter().map(|f| factor_unit(0, f)).collect();
    let width = units.len();
    let mut layers = vec![quad_layer(1, units)];
    let roots = build_product_tree(&mut layers, width, vec![(0..width).collect()]);
    let final_width = layers.last().unwrap().out_dim();
    layers.push(conv_layer(
        final_width,
        vec![(vec![(roots[0], lead)], 0.0)],
        Activation::Linear,
    ));
    Network::feedforward(layers)
}

/// Compiles a C0 spline into a network that reproduces it over its domain:
/// one ReLU head per knot, one lane per knot evaluating u * G_i(u) through a
/// product tree, and a final affine layer summing the lanes with the constant
/// s_0(x_0).
pub fn spline_to_qnn(s: &PolynomialSpline) -> Result<Network> {
    s.validate()?;
    let bias = horner(&s.pieces[0], s.knots[0]);

    struct Lane {
        knot: f64,
        lead: f64,
        factors: Vec<RealFactor>,
    }
    let mut lanes: Vec<Lane> = Vec::new();
    for i in 0..s.pieces.len() {
        let q = if i == 0 {
            let mut q = Poly::new(s.pieces[0].clone());
            q.coeffs[0] -= bias;
            q
        } else {
            Poly::new(s.pieces[i].clone()).sub(&Poly::new(s.pieces[i - 1].clone()))
        };
        let mut shifted = q.taylor_shift(s.knots[i]);
        // The constant term is Q_i(x_i), which C0 continuity makes zero;
        // forcing it kills the last rounding residue and guarantees exact
        // truncation below the knot.
        shifted.coeffs[0] = 0.0;
        if shifted.coeffs.iter().all(|&c| c == 0.0) {
            continue;
        }
        let g = Poly::new(shifted.coeffs[1..].to_vec());
        let (lead, factors) = if g.degree() == 0 {
            (g.coeffs[0], Vec::new())
        } else {
            refined_factorization(&g)?
        };
        lanes.push(Lane {
            knot: s.knots[i],
            lead,
            factors,
        });
    }

    if lanes.is_empty() {
        return Network::feedforward(vec![conv_layer(
            1,
            vec![(Vec::new(), bias)],
            Activation::Linear,
        )]);
    }

    let head_rows: Vec<(Vec<(usize, f64)>, f64)> = lanes
        .iter()
        .map(|l| (vec![(0, 1.0)], -l.knot))
        .collect();
    let mut layers = vec![conv_layer(1, head_rows, Activation::Relu)];

    let mut units: Vec<UnitSpec> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(lanes.len());
    for (h, lane) in lanes.iter().enumerate() {
        let mut g = vec![units.len()];
        units.push(pass_unit(h));
        for f in &lane.factors {
            g.push(units.len());
            units.push(factor_unit(h, f));
        }
        groups.push(g);
    }
    let width = units.len();
    layers.push(quad_layer(lanes.len(), units));

    let roots = build_product_tree(&mut layers, width, groups);
    let final_width = layers.last().unwrap().out_dim();
    let row: Vec<(usize, f64)> = roots
        .iter()
        .zip(&lanes)
        .map(|(&root, lane)| (root, lane.lead))
        .collect();
    layers.push(conv_layer(final_width, vec![(row, bias)], Activation::Linear));
    Network::feedforward(layers)
}

/// One maximal interval on which the network is a single polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyRegion {
    pub lo: f64,
    pub hi: f64,
    pub degree: usize,
    /// Ascending-power coefficients in the input variable.
    pub coeffs: Vec<f64>,
}

/// The exact piecewise polynomial a univariate network computes on an
/// interval. Regions partition `[lo, hi]` in ascending order; adjacent
/// regions with identical polynomials have been merged.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolyReport {
    pub lo: f64,
    pub hi: f64,
    pub regions: Vec<PolyRegion>,
}

impl PiecewisePolyReport {
    pub fn eval(&self, x: f64) -> Result<f64> {
        let hi = self.regions.last().map(|r| r.hi).unwrap_or(self.lo);
        if self.regions.is_empty() || !(x >= self.lo && x <= hi) {
            return Err(Error::Domain(format!(
                "x = {x} outside the reported interval [{}, {hi}]",
                self.lo
            )));
        }
        let mut idx = self.regions.len() - 1;
        for (i, r) in self.regions.iter().enumerate() {
            if x < r.hi {
                idx = i;
                break;
            }
        }
        Ok(horner(&self.regions[idx].coeffs, x))
    }

    pub fn max_degree(&self) -> usize {
        self.regions.iter().map(|r| r.degree).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let maxd = self.max_degree();
        let mut out = String::from("region_lo,region_hi,degree");
        for k in 0..=maxd {
            out.push_str(&format!(",c{k}"));
        }
        out.push('\n');
        for r in &self.regions {
            out.push_str(&format!("{},{},{}", r.lo, r.hi, r.degree));
            for k in 0..=maxd {
                let c = r.coeffs.get(k).copied().unwrap_or(0.0);
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub const DEFAULT_REGION_CAP: usize = 10_000;

enum Step<'a> {
    Layer(&'a Layer),
    BlockStart,
    BlockEnd { zeta: f64 },
}

enum Abort {
    Cap,
    Fail(Error),
}

struct Extractor {
    cap: usize,
    region_count: usize,
    done: Vec<(f64, f64, Poly)>,
}

impl Extractor {
    fn walk(
        &mut self,
        steps: &[Step],
        lo: f64,
        hi: f64,
        polys: Vec<Poly>,
        saved: Vec<Vec<Poly>>,
    ) -> std::result::Result<(), Abort> {
        let Some((step, rest)) = steps.split_first() else {
            debug_assert_eq!(polys.len(), 1);
            let p = polys.into_iter().next().unwrap();
            self.done.push((lo, hi, p));
            return Ok(());
        };
        match step {
            Step::BlockStart => {
                let mut saved = saved;
                saved.push(polys.clone());
                self.walk(rest, lo, hi, polys, saved)
            }
            Step::BlockEnd { zeta } => {
                let mut saved = saved;
                let base = saved.pop().expect("block input polynomials");
                let polys = base
                    .iter()
                    .zip(&polys)
                    .map(|(b, f)| b.add(&f.scale(*zeta)))
                    .collect();
                self.walk(rest, lo, hi, polys, saved)
            }
            Step::Layer(l) => {
                let pre = symbolic_pre(l, &polys).map_err(Abort::Fail)?;
                match l.activation {
                    Activation::Linear => self.walk(rest, lo, hi, pre, saved),
                    Activation::Relu => {
                        let span = hi - lo;
                        let mut cuts: Vec<f64> = Vec::new();
                        for p in &pre {
                            for r in p.real_roots_in(lo, hi) {
                                if r > lo + 1e-12 * span && r < hi - 1e-12 * span {
                                    cuts.push(r);
                                }
                            }
                        }
                        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * span);
                        self.region_count += cuts.len();
                        if self.region_count > self.cap {
                            return Err(Abort::Cap);
                        }
                        let mut bounds = Vec::with_capacity(cuts.len() + 2);
                        bounds.push(lo);
                        bounds.extend(cuts);
                        bounds.push(hi);
                        for w in bounds.windows(2) {
                            let (a, b) = (w[0], w[1]);
                            let mid = 0.5 * (a + b);
                            let post: Vec<Poly> = pre
                                .iter()
                                .map(|p| {
                                    if p.eval(mid) > 0.0 {
                                        p.clone()
                                    } else {
                                        Poly::zero()
                                    }
                                })
                                .collect();
                            self.walk(rest, a, b, post, saved.clone())?;
                        }
                        Ok(())
                    }
                }
            }
        }
    }
}

fn symbolic_pre(l: &Layer, polys: &[Poly]) -> Result<Vec<Poly>> {
    let p = &l.params;
    if polys.len() != p.in_dim() {
        return Err(Error::Invariant(
            "symbolic state width does not match layer input".into(),
        ));
    }
    let n_in = p.in_dim();
    let n_out = p.out_dim();
    let squares: Vec<Option<Poly>> = (0..n_in)
        .map(|j| {
            let needed = (0..n_out).any(|o| p.wb.get(o, j) != 0.0);
            needed.then(|| polys[j].mul(&polys[j]))
        })
        .collect();
    let mut out = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let mut lin_r = Poly::constant(p.br.data[o]);
        for (j, poly) in polys.iter().enumerate() {
            let w = p.wr.get(o, j);
            if w != 0.0 {
                lin_r = lin_r.add(&poly.scale(w));
            }
        }
        let mut lin_g = Poly::constant(p.bg.data[o]);
        for (j, poly) in polys.iter().enumerate() {
            let w = p.wg.get(o, j);
            if w != 0.0 {
                lin_g = lin_g.add(&poly.scale(w));
            }
        }
        let mut acc = lin_r.mul(&lin_g);
        for (j, sq) in squares.iter().enumerate() {
            let w = p.wb.get(o, j);
            if w != 0.0 {
                acc = acc.add(&sq.as_ref().expect("square cached").scale(w));
            }
        }
        acc.coeffs[0] += p.c.data[o];
        out.push(acc);
    }
    Ok(out)
}

/// Computes the exact piecewise polynomial of a 1-in, 1-out network over
/// `[lo, hi]` with the default region cap.
pub fn extract_piecewise(net: &Network, lo: f64, hi: f64) -> Result<PiecewisePolyReport> {
    extract_piecewise_with_cap(net, lo, hi, DEFAULT_REGION_CAP)
}

/// As [`extract_piecewise`] with an explicit cap on the number of regions.
/// Exceeding the cap aborts with [`Error::RegionCap`] carrying the regions
/// completed so far.
pub fn extract_piecewise_with_cap(
    net: &Network,
    lo: f64,
    hi: f64,
    cap: usize,
) -> Result<PiecewisePolyReport> {
    if net.in_dim() != 1 || net.out_dim() != 1 {
        return Err(Error::Config(format!(
            "extraction needs a univariate scalar network, got {} in / {} out",
            net.in_dim(),
            net.out_dim()
        )));
    }
    if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
        return Err(Error::Domain(format!("bad interval [{lo}, {hi}]")));
    }
    if cap == 0 {
        return Err(Error::Config("region cap must be positive".into()));
    }

    let mut steps = Vec::new();
    for seg in &net.segments {
        match seg {
            Segment::Layer(l) => steps.push(Step::Layer(l)),
            Segment::Residual { layers, zeta } => {
                steps.push(Step::BlockStart);
                for l in layers {
                    steps.push(Step::Layer(l));
                }
                steps.push(Step::BlockEnd { zeta: *zeta });
            }
        }
    }

    // Internal arithmetic runs in the scaled variable t = x / s, keeping the
    // interval inside [-1, 1] where root finding is well conditioned.
    let s = {
        let m = lo.abs().max(hi.abs());
        if m == 0.0 {
            1.0
        } else {
            m
        }
    };
    let mut ex = Extractor {
        cap,
        region_count: 1,
        done: Vec::new(),
    };
    let walked = ex.walk(
        &steps,
        lo / s,
        hi / s,
        vec![Poly::new(vec![0.0, s])],
        Vec::new(),
    );
    let report = assemble_report(ex.done, s, lo, hi, matches!(walked, Ok(())));
    match walked {
        Ok(()) => Ok(report),
        Err(Abort::Cap) => Err(Error::RegionCap {
            cap,
            partial: Box::new(report),
        }),
        Err(Abort::Fail(e)) => Err(e),
    }
}

fn assemble_report(
    done: Vec<(f64, f64, Poly)>,
    s: f64,
    lo: f64,
    hi: f64,
    complete: bool,
) -> PiecewisePolyReport {
    let mut regions: Vec<PolyRegion> = done
        .into_iter()
        .map(|(a, b, p)| {
            let deg = p.degree();
            let coeffs: Vec<f64> = p.coeffs[..=deg]
                .iter()
                .enumerate()
                .map(|(k, c)| c / s.powi(k as i32))
                .collect();
            let degree = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
            PolyRegion {
                lo: a * s,
                hi: b * s,
                degree,
                coeffs,
            }
        })
        .collect();
    if let Some(first) = regions.first_mut() {
        first.lo = lo;
    }
    if complete {
        if let Some(last) = regions.last_mut() {
            last.hi = hi;
        }
    }
    let regions = merge_regions(regions);
    PiecewisePolyReport { lo, hi, regions }
}

fn merge_regions(regions: Vec<PolyRegion>) -> Vec<PolyRegion> {
    let mut out: Vec<PolyRegion> = Vec::with_capacity(regions.len());
    for r in regions {
        if let Some(last) = out.last_mut() {
            if coeffs_match(&last.coeffs, &r.coeffs) {
                last.hi = r.hi;
                continue;
            }
        }
        out.push(r);
    }
    out
}

fn coeffs_match(a: &[f64], b: &[f64]) -> bool {
    let n = a.len().max(b.len());
    let mut scale = 0.0f64;
    for k in 0..n {
        scale = scale
            .max(a.get(k).copied().unwrap_or(0.0).abs())
            .max(b.get(k).copied().unwrap_or(0.0).abs());
    }
    if scale == 0.0 {
        return true;
    }
    (0..n).all(|k| {
        let u = a.get(k).copied().unwrap_or(0.0);
        let v = b.get(k).copied().unwrap_or(0.0);
        (u - v).abs() <= 1e-12 * scale
    })
}
