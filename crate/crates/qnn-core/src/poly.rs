//! Dense univariate polynomials: arithmetic, Taylor shifts, and root finding
//! via companion-matrix eigenvalues with Newton polish. Crate-internal; the
//! public spline API trades in plain coefficient vectors.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Coefficients in increasing degree order. Never empty; trailing zeros are
/// allowed and ignored by [`Poly::degree`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Poly {
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            return Self { coeffs: vec![0.0] };
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    /// Highest index with a nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn eval_complex(&self, z: Complex<f64>) -> Complex<f64> {
        let mut acc = Complex::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.coeffs.get(i).copied().unwrap_or(0.0)
                + other.coeffs.get(i).copied().unwrap_or(0.0);
        }
        Poly::new(out)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| (i as f64 + 1.0) * c)
                .collect(),
        )
    }

    /// Coefficients of `P(x + a)` by repeated synthetic division.
    pub fn taylor_shift(&self, a: f64) -> Poly {
        let mut c = self.coeffs.clone();
        let n = c.len();
        for k in 0..n.saturating_sub(1) {
            for j in (k..n - 1).rev() {
                c[j] += a * c[j + 1];
            }
        }
        Poly::new(c)
    }

    /// Drops trailing coefficients below `tol` relative to the largest one.
    pub fn truncate_small(&self, tol: f64) -> Poly {
        let scale = self
            .coeffs
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
            .max(1e-300);
        let cut = self
            .coeffs
            .iter()
            .rposition(|c| c.abs() > tol * scale)
            .map(|i| i + 1)
            .unwrap_or(1);
        Poly::new(self.coeffs[..cut].to_vec())
    }

    /// All complex roots: companion-matrix eigenvalues followed by a few
    /// Newton steps each.
    pub fn complex_roots(&self) -> Vec<Complex<f64>> {
        let p = self.truncate_small(1e-13);
        let n = p.degree();
        if n == 0 {
            return Vec::new();
        }
        let lead = p.coeffs[n];
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            companion[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            companion[(i, n - 1)] = -p.coeffs[i] / lead;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|&z| p.polish_complex(z))
            .collect()
    }

    fn polish_complex(&self, start: Complex<f64>) -> Complex<f64> {
        let d = self.derivative();
        let mut z = start;
        for _ in 0..40 {
            let f = self.eval_complex(z);
            let df = d.eval_complex(z);
            if df.norm_sqr() == 0.0 || !f.is_finite() {
                break;
            }
            let step = f / df;
            let next = z - step;
            if !next.is_finite() {
                break;
            }
            z = next;
            if step.norm_sqr().sqrt() <= 1e-15 * (1.0 + z.norm_sqr().sqrt()) {
                break;
            }
        }
        // Keep the polished point only if it did not drift off.
        if self.eval_complex(z).norm_sqr() <= self.eval_complex(start).norm_sqr() {
            z
        } else {
            start
        }
    }

    fn polish_real(&self, start: f64) -> f64 {
        let d = self.derivative();
        let mut x = start;
        for _ in 0..40 {
            let f = self.eval(x);
            let df = d.eval(x);
            if df == 0.0 || !f.is_finite() {
                break;
            }
            let step = f / df;
            let next = x - step;
            if !next.is_finite() {
                break;
            }
            x = next;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if self.eval(x).abs() <= self.eval(start).abs() {
            x
        } else {
            start
        }
    }

    /// Real roots inside `[lo, hi]`, ascending, deduplicated. Eigenvalue
    /// candidates are polished and then a sign-scan over a fine grid picks up
    /// any crossing the eigensolver missed.
    pub fn real_roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        debug_assert!(lo < hi);
        let p = self.truncate_small(1e-13);
        if p.degree() == 0 {
            return Vec::new();
        }
        let span = hi - lo;
        let mut roots: Vec<f64> = p
            .complex_roots()
            .into_iter()
            .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
            .map(|z| p.polish_real(z.re))
            .filter(|r| r.is_finite() && *r >= lo - 1e-12 * span && *r <= hi + 1e-12 * span)
            .map(|r| r.clamp(lo, hi))
            .collect();

        // Sign scan: any bracket with a sign change and no recorded root gets
        // a bisection root appended.
        let grid = 512;
        let mut prev_x = lo;
        let mut prev_v = p.eval(lo);
        for k in 1..=grid {
            let x = lo + span * k as f64 / grid as f64;
            let v = p.eval(x);
            if prev_v == 0.0 {
                roots.push(prev_x);
            } else if prev_v * v < 0.0 {
                let covered = roots
                    .iter()
                    .any(|r| *r >= prev_x - 1e-12 * span && *r <= x + 1e-12 * span);
                if !covered {
                    roots.push(p.bisect(prev_x, x));
                }
            }
            prev_x = x;
            prev_v = v;
        }
        if prev_v == 0.0 {
            roots.push(hi);
        }

        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // A double root is only locatable to about sqrt(eps), so candidates
        // for one can stall that far apart; merge anything closer.
        let mut out: Vec<f64> = Vec::with_capacity(roots.len());
        for r in roots {
            if out
                .last()
                .map(|p| (r - p).abs() > 1e-7 * (1.0 + span))
                .unwrap_or(true)
            {
                out.push(r);
            }
        }
        out
    }

    fn bisect(&self, mut a: f64, mut b: f64) -> f64 {
        let mut fa = self.eval(a);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            let fm = self.eval(m);
            if fm == 0.0 {
                return m;
            }
            if fa * fm < 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
            if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
                break;
            }
        }
        0.5 * (a + b)
    }
}

/// One factor of a real polynomial.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RealFactor {
    /// `x - r`
    Linear { r: f64 },
    /// `x^2 + b x + c` with no real roots (or a conjugate pair's product)
    Quadratic { b: f64, c: f64 },
}

/// Factors a real polynomial into a leading coefficient times monic linear
/// and quadratic factors. Conjugate eigenvalue pairs become quadratics.
pub(crate) fn real_factorization(p: &Poly) -> Result<(f64, Vec<RealFactor>)> {
    let p = p.truncate_small(1e-13);
    let n = p.degree();
    let lead = p.coeffs[n];
    if n == 0 {
        if lead == 0.0 {
            return Err(Error::Domain("cannot factor the zero polynomial".into()));
        }
        return Ok((lead, Vec::new()));
    }
    let roots = p.complex_roots();
    let mut factors = Vec::new();
    let mut paired = 2 * roots.iter().filter(|z| z.im > 1e-8 * (1.0 + z.re.abs())).count();
    for z in &roots {
        if z.im.abs() <= 1e-8 * (1.0 + z.re.abs()) {
            factors.push(RealFactor::Linear {
                r: p.polish_real(z.re),
            });
            paired += 1;
        } else if z.im > 0.0 {
            factors.push(RealFactor::Quadratic {
                b: -2.0 * z.re,
                c: z.norm_sqr(),
            });
        }
    }
    if paired != n {
        return Err(Error::Invariant(format!(
            "root pairing accounts for degree {paired}, polynomial has degree {n}"
        )));
    }
    Ok((lead, factors))
}

/// Rebuilds the polynomial `lead * prod(factors)`; used to sanity-check a
/// factorization.
#[cfg(test)]
pub(crate) fn from_factors(lead: f64, factors: &[RealFactor]) -> Poly {
    let mut p = Poly::constant(lead);
    for f in factors {
        let q = match f {
            RealFactor::Linear { r } => Poly::new(vec![-r, 1.0]),
            RealFactor::Quadratic { b, c } => Poly::new(vec![*c, *b, 1.0]),
        };
        p = p.mul(&q);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn taylor_shift_of_square() {
        let p = Poly::new(vec![0.0, 0.0, 1.0]);
        assert_eq!(p.taylor_shift(1.0).coeffs, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn taylor_shift_agrees_with_direct_evaluation() {
        let p = Poly::new(vec![2.0, -1.5, 0.25, 3.0, -0.5]);
        let a = 0.7;
        let q = p.taylor_shift(a);
        for k in -5..=5 {
            let x = k as f64 * 0.31;
            let direct = p.eval(x + a);
            assert!((q.eval(x) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn product_of_monomials() {
        let p = Poly::new(vec![-1.0, 1.0]); // x - 1
        let q = Poly::new(vec![-2.0, 1.0]); // x - 2
        assert_eq!(p.mul(&q).coeffs, vec![2.0, -3.0, 1.0]);
    }

    #[test]
    fn derivative_drops_degree() {
        let p = Poly::new(vec![1.0, 2.0, 3.0]); // 1 + 2x + 3x^2
        assert_eq!(p.derivative().coeffs, vec![2.0, 6.0]);
        assert_eq!(Poly::constant(4.0).derivative().coeffs, vec![0.0]);
    }

    #[test]
    fn cubic_roots_polish_to_high_accuracy() {
        // (x - 1)(x - 2)(x - 3) = x^3 - 6x^2 + 11x - 6
        let p = Poly::new(vec![-6.0, 11.0, -6.0, 1.0]);
        let mut roots: Vec<f64> = p.complex_roots().iter().map(|z| z.re).collect();
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (r, want) in roots.iter().zip([1.0, 2.0, 3.0]) {
            assert!((r - want).abs() <= 1e-12, "{r} vs {want}");
        }
        for z in p.complex_roots() {
            assert!(z.im.abs() <= 1e-12);
        }
    }

    #[test]
    fn factorization_splits_real_and_conjugate_parts() {
        // 2 (x^2 + 1)(x - 2)
        let p = Poly::new(vec![-2.0, 1.0]).mul(&Poly::new(vec![1.0, 0.0, 1.0])).scale(2.0);
        let (lead, factors) = real_factorization(&p).unwrap();
        assert!((lead - 2.0).abs() <= 1e-12);
        assert_eq!(factors.len(), 2);
        let rebuilt = from_factors(lead, &factors);
        for (a, b) in rebuilt.coeffs.iter().zip(&p.coeffs) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn factorization_rebuilds_random_polynomials() {
        let mut rng = crate::tensor::Rng::new(11);
        for _ in 0..20 {
            let deg = 1 + rng.below(6);
            let mut coeffs: Vec<f64> = (0..=deg).map(|_| rng.gaussian(1.0)).collect();
            if coeffs[deg].abs() < 0.3 {
                coeffs[deg] = 0.5;
            }
            let p = Poly::new(coeffs);
            let (lead, factors) = real_factorization(&p).unwrap();
            let rebuilt = from_factors(lead, &factors);
            let scale = p.coeffs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
            for (a, b) in rebuilt.coeffs.iter().zip(&p.coeffs) {
                assert!((a - b).abs() <= 1e-7 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn interval_roots_of_a_cubic() {
        // (x - 0.3)(x - 0.7)(x + 2)
        let p = Poly::new(vec![-0.3, 1.0])
            .mul(&Poly::new(vec![-0.7, 1.0]))
            .mul(&Poly::new(vec![2.0, 1.0]));
        let roots = p.real_roots_in(0.0, 1.0);
        assert_eq!(roots.len(), 2);
        assert!((roots[0] - 0.3).abs() <= 1e-10);
        assert!((roots[1] - 0.7).abs() <= 1e-10);
    }

    #[test]
    fn interval_roots_find_a_double_root() {
        // (x - 0.5)^2 touches zero without a sign change.
        let p = Poly::new(vec![0.25, -1.0, 1.0]);
        let roots = p.real_roots_in(0.0, 1.0);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn constant_has_no_roots() {
        assert!(Poly::constant(3.0).real_roots_in(-1.0, 1.0).is_empty());
    }

    proptest! {
        #[test]
        fn horner_matches_naive_evaluation(
            coeffs in proptest::collection::vec(-3.0f64..3.0, 1..6),
            x in -2.0f64..2.0,
        ) {
            let p = Poly::new(coeffs.clone());
            let naive: f64 = coeffs.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum();
            prop_assert!((p.eval(x) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }

        #[test]
        fn shift_then_unshift_is_identity(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 1..6),
            a in -1.5f64..1.5,
        ) {
            let p = Poly::new(coeffs);
            let back = p.taylor_shift(a).taylor_shift(-a);
            for (u, v) in back.coeffs.iter().zip(&p.coeffs) {
                prop_assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }
}
