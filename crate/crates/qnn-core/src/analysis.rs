//! Capacity and conditioning diagnostics: algebraic-variety parameter
//! bounds for the two quadratic realizations, the activation-substitution
//! containment construction, and Jacobian amplification at the origin.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::network::{net_backward, net_forward, Network};
use crate::neurons::{Activation, Layer, NeuronKind, QuadraticParams};
use crate::tensor::{DenseMatrix, DenseVector, Rng};

/// How the quadratic nonlinearity enters the model: neurons with inner
/// products of two affine forms, or plain affine layers whose outputs are
/// squared elementwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Realization {
    QuadraticNeuron,
    QuadraticActivation,
}

impl Realization {
    pub fn label(&self) -> &'static str {
        match self {
            Realization::QuadraticNeuron => "quadratic_neuron",
            Realization::QuadraticActivation => "quadratic_activation",
        }
    }
}

/// Dimension bound of the function variety cut out by one architecture:
/// the parameter-count term, the monomial-count term, and their minimum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundReport {
    pub arch: String,
    pub realization: Realization,
    pub term_params: BigUint,
    pub term_monomials: BigUint,
    pub bound: BigUint,
}

pub const BOUND_CSV_HEADER: &str = "arch,realization,term_params,term_monomials,bound";

impl BoundReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.arch,
            self.realization.label(),
            self.term_params,
            self.term_monomials,
            self.bound
        )
    }
}

fn arch_label(widths: &[usize]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Monomials of degree 2^(H-1) in d0 variables, times the output width:
/// d_H * C(d0 + 2^(H-1) - 1, 2^(H-1)), computed over the short side of the
/// binomial so deep architectures stay cheap.
fn monomial_term(d0: usize, depth: usize, d_out: usize) -> BigUint {
    let k = BigUint::from(1u32) << (depth - 1);
    let mut c = BigUint::from(1u32);
    for i in 1..d0 as u64 {
        c = c * (&k + BigUint::from(i)) / BigUint::from(i);
    }
    c * BigUint::from(d_out)
}

/// Upper bound on the dimension of the variety of functions the architecture
/// can realize, as min(parameter term, monomial term).
pub fn variety_bound(widths: &[usize], realization: Realization) -> Result<BoundReport> {
    if widths.len() < 2 {
        return Err(Error::Config(
            "a variety bound needs input and output widths".into(),
        ));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("widths must be positive".into()));
    }
    let depth = widths.len() - 1;
    let per_layer: u128 = match realization {
        Realization::QuadraticNeuron => widths
            .windows(2)
            .map(|w| 3 * w[0] as u128 * (w[1] as u128 + 1))
            .sum(),
        Realization::QuadraticActivation => widths
            .windows(2)
            .map(|w| w[0] as u128 * (w[1] as u128 + 1))
            .sum(),
    };
    let hidden: u128 = widths[1..depth].iter().map(|&w| w as u128).sum();
    let term_params = BigUint::from(per_layer - hidden);
    let term_monomials = monomial_term(widths[0], depth, widths[depth]);
    let bound = term_params.clone().min(term_monomials.clone());
    Ok(BoundReport {
        arch: arch_label(widths),
        realization,
        term_params,
        term_monomials,
        bound,
    })
}

/// Evaluates the quadratic-activation reference model: every layer, the last
/// included, applies (Wx + b) squared elementwise.
pub fn quadratic_activation_reference(
    params: &[(DenseMatrix, DenseVector)],
    x: &DenseVector,
) -> Result<DenseVector> {
    if params.is_empty() {
        return Err(Error::Config("no layers given".into()));
    }
    let mut state = x.clone();
    for (w, b) in params {
        let pre = w.matvec(&state)?.add(b)?;
        state = pre.hadamard(&pre)?;
    }
    Ok(state)
}

/// Builds the quadratic-neuron network that reproduces the
/// quadratic-activation model with the same weights: each layer takes
/// Wr = Wg = W and br = bg = b, so the neuron's product term computes the
/// square directly.
pub fn containment_substitute(params: &[(DenseMatrix, DenseVector)]) -> Result<Network> {
    if params.is_empty() {
        return Err(Error::Config("no layers given".into()));
    }
    let mut layers = Vec::with_capacity(params.len());
    for (w, b) in params {
        if b.len() != w.rows {
            return Err(Error::Dimension(format!(
                "bias length {} does not match {} rows",
                b.len(),
                w.rows
            )));
        }
        let mut p = QuadraticParams::degenerate(NeuronKind::Quadratic, w.rows, w.cols);
        p.wr = w.clone();
        p.wg = w.clone();
        p.br = b.clone();
        p.bg = b.clone();
        layers.push(Layer::new(NeuronKind::Quadratic, p, Activation::Linear));
    }
    Network::feedforward(layers)
}

/// Frobenius norm of the network's input Jacobian at the origin, assembled
/// one output at a time from backward passes.
pub fn jacobian_at_zero(net: &Network) -> Result<f64> {
    let x = DenseVector::zeros(net.in_dim());
    let (out, caches) = net_forward(net, &x)?;
    let mut frob_sq = 0.0;
    for o in 0..out.len() {
        let mut seed = DenseVector::zeros(out.len());
        seed.data[o] = 1.0;
        let (_, gx) = net_backward(net, &caches, &seed)?;
        frob_sq += gx.norm_sq();
    }
    Ok(frob_sq.sqrt())
}

/// Worst-case layerwise amplification of the Jacobian norm for conventional
/// and quadratic networks of the given widths: the conventional factor is
/// prod sqrt(d_h d_{h-1}) and the quadratic one carries an extra 2 per layer.
pub fn amplification_estimate(widths: &[usize]) -> Result<(f64, f64)> {
    if widths.len() < 2 {
        return Err(Error::Config(
            "amplification needs input and output widths".into(),
        ));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("widths must be positive".into()));
    }
    let depth = widths.len() - 1;
    let conv: f64 = widths
        .windows(2)
        .map(|w| ((w[0] * w[1]) as f64).sqrt())
        .product();
    let quad = 2f64.powi(depth as i32) * conv;
    Ok((conv, quad))
}

/// Draws a conventional network and a quadratic one sharing its Wr and br,
/// with all remaining quadratic parameters standard normal except c, which
/// is set to -br*bg so the forward trajectory from the origin stays exactly
/// zero and the Jacobian there is well defined at every depth. Both nets use
/// linear activations.
pub fn paired_gaussian_nets(widths: &[usize], rng: &mut Rng) -> Result<(Network, Network)> {
    if widths.len() < 2 {
        return Err(Error::Config("need input and output widths".into()));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("widths must be positive".into()));
    }
    let mut conv_layers = Vec::new();
    let mut quad_layers = Vec::new();
    for w in widths.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let mut q = QuadraticParams::degenerate(NeuronKind::Quadratic, n_out, n_in);
        for o in 0..n_out {
            for j in 0..n_in {
                q.wr.set(o, j, rng.gaussian(1.0));
                q.wg.set(o, j, rng.gaussian(1.0));
                q.wb.set(o, j, rng.gaussian(1.0));
            }
            q.br.data[o] = rng.gaussian(1.0);
            q.bg.data[o] = rng.gaussian(1.0);
            q.c.data[o] = -q.br.data[o] * q.bg.data[o];
        }
        let mut c = QuadraticParams::degenerate(NeuronKind::Conventional, n_out, n_in);
        c.wr = q.wr.clone();
        c.br = q.br.clone();
        conv_layers.push(Layer::new(NeuronKind::Conventional, c, Activation::Linear));
        quad_layers.push(Layer::new(NeuronKind::Quadratic, q, Activation::Linear));
    }
    Ok((
        Network::feedforward(conv_layers)?,
        Network::feedforward(quad_layers)?,
    ))
}

/// Convenience for sweeps: builds the bound table for every architecture and
/// both realizations.
pub fn bounds_table(archs: &[Vec<usize>]) -> Result<Vec<BoundReport>> {
    let mut out = Vec::with_capacity(archs.len() * 2);
    for widths in archs {
        out.push(variety_bound(widths, Realization::QuadraticNeuron)?);
        out.push(variety_bound(widths, Realization::QuadraticActivation)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build, Architecture, BuildInit};
    use crate::neurons::{Activation, NeuronKind};

    #[test]
    fn variety_bound_matches_worked_example() {
        let qn = variety_bound(&[2, 2, 1], Realization::QuadraticNeuron).unwrap();
        assert_eq!(qn.term_params, BigUint::from(28u32));
        assert_eq!(qn.term_monomials, BigUint::from(3u32));
        assert_eq!(qn.bound, BigUint::from(3u32));
        let qa = variety_bound(&[2, 2, 1], Realization::QuadraticActivation).unwrap();
        assert_eq!(qa.term_params, BigUint::from(8u32));
        assert_eq!(qa.term_monomials, BigUint::from(3u32));
        assert_eq!(qa.bound, BigUint::from(3u32));
    }

    #[test]
    fn monomial_term_counts_exact_degree_monomials() {
        // Degree-2 monomials in 3 variables: xx, xy, xz, yy, yz, zz.
        let report = variety_bound(&[3, 5, 1], Realization::QuadraticNeuron).unwrap();
        assert_eq!(report.term_monomials, BigUint::from(6u32));
        // Output width multiplies the count.
        let wide = variety_bound(&[3, 5, 2], Realization::QuadraticNeuron).unwrap();
        assert_eq!(wide.term_monomials, BigUint::from(12u32));
    }

    #[test]
    fn parameter_term_of_neurons_always_dominates() {
        let mut rng = Rng::new(61);
        for _ in 0..50 {
            let depth = 1 + rng.below(4);
            let widths: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(9)).collect();
            let qn = variety_bound(&widths, Realization::QuadraticNeuron).unwrap();
            let qa = variety_bound(&widths, Realization::QuadraticActivation).unwrap();
            assert!(qn.term_params > qa.term_params, "widths {widths:?}");
            assert_eq!(qn.term_monomials, qa.term_monomials);
        }
    }

    #[test]
    fn bound_csv_row_is_flat() {
        let qn = variety_bound(&[1, 8, 8, 1], Realization::QuadraticNeuron).unwrap();
        let row = qn.csv_row();
        assert!(row.starts_with("1-8-8-1,quadratic_neuron,"));
        assert_eq!(row.split(',').count(), 5);
        assert_eq!(BOUND_CSV_HEADER.split(',').count(), 5);
    }

    #[test]
    fn containment_single_weight_squares_input() {
        let params = vec![(
            DenseMatrix::new(1, 1, vec![1.0]).unwrap(),
            DenseVector::zeros(1),
        )];
        let x = DenseVector::new(vec![3.0]);
        let reference = quadratic_activation_reference(&params, &x).unwrap();
        assert_eq!(reference.data[0], 9.0);
        let net = containment_substitute(&params).unwrap();
        assert_eq!(net.eval(&x).unwrap().data[0], 9.0);
    }

    #[test]
    fn containment_matches_reference_on_random_nets() {
        let mut rng = Rng::new(62);
        for _ in 0..10 {
            let dims = [2 + rng.below(3), 2 + rng.below(3), 1 + rng.below(3)];
            let params: Vec<(DenseMatrix, DenseVector)> = dims
                .windows(2)
                .map(|w| {
                    let m = DenseMatrix::new(
                        w[1],
                        w[0],
                        (0..w[0] * w[1]).map(|_| rng.gaussian(0.8)).collect(),
                    )
                    .unwrap();
                    let b = DenseVector::new((0..w[1]).map(|_| rng.gaussian(0.8)).collect());
                    (m, b)
                })
                .collect();
            let net = containment_substitute(&params).unwrap();
            for _ in 0..20 {
                let x = DenseVector::new((0..dims[0]).map(|_| rng.gaussian(1.0)).collect());
                let want = quadratic_activation_reference(&params, &x).unwrap();
                let got = net.eval(&x).unwrap();
                for (a, b) in got.data.iter().zip(&want.data) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn containment_rejects_mismatched_shapes() {
        let params = vec![
            (
                DenseMatrix::new(2, 2, vec![1.0; 4]).unwrap(),
                DenseVector::zeros(2),
            ),
            (
                DenseMatrix::new(1, 3, vec![1.0; 3]).unwrap(),
                DenseVector::zeros(1),
            ),
        ];
        assert!(containment_substitute(&params).is_err());
        let bad_bias = vec![(
            DenseMatrix::new(2, 2, vec![1.0; 4]).unwrap(),
            DenseVector::zeros(3),
        )];
        assert!(matches!(
            containment_substitute(&bad_bias),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn containment_of_zero_params_is_zero() {
        let params = vec![
            (DenseMatrix::zeros(3, 2), DenseVector::zeros(3)),
            (DenseMatrix::zeros(1, 3), DenseVector::zeros(1)),
        ];
        let net = containment_substitute(&params).unwrap();
        let x = DenseVector::new(vec![0.3, -1.1]);
        assert_eq!(quadratic_activation_reference(&params, &x).unwrap().data[0], 0.0);
        assert_eq!(net.eval(&x).unwrap().data[0], 0.0);
    }

    #[test]
    fn jacobian_of_linear_map_is_frobenius_norm() {
        let mut p = QuadraticParams::degenerate(NeuronKind::Conventional, 2, 3);
        let w = [[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        let mut frob_sq = 0.0;
        for (o, row) in w.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                p.wr.set(o, j, v);
                frob_sq += v * v;
            }
        }
        let net = Network::feedforward(vec![Layer::new(
            NeuronKind::Conventional,
            p,
            Activation::Linear,
        )])
        .unwrap();
        let got = jacobian_at_zero(&net).unwrap();
        assert!((got - frob_sq.sqrt()).abs() <= 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = Rng::new(63);
        let arch = Architecture::uniform(
            vec![3, 4, 2],
            NeuronKind::Quadratic,
            Activation::Relu,
        )
        .unwrap();
        let net = build(&arch, BuildInit::PlainRandom(0.7), &mut rng).unwrap();
        let eps = 1e-6;
        let mut frob_sq = 0.0;
        for j in 0..3 {
            let mut xp = DenseVector::zeros(3);
            let mut xm = DenseVector::zeros(3);
            xp.data[j] = eps;
            xm.data[j] = -eps;
            let fp = net.eval(&xp).unwrap();
            let fm = net.eval(&xm).unwrap();
            for o in 0..2 {
                let d = (fp.data[o] - fm.data[o]) / (2.0 * eps);
                frob_sq += d * d;
            }
        }
        let want = frob_sq.sqrt();
        let got = jacobian_at_zero(&net).unwrap();
        assert!(
            (got - want).abs() <= 1e-5 * want.max(1.0),
            "{got} vs {want}"
        );
    }

    #[test]
    fn amplification_example_and_ratio() {
        let (conv, quad) = amplification_estimate(&[10, 10, 10, 10, 10]).unwrap();
        assert!((conv - 1e4).abs() <= 1e-9);
        assert!((quad - 16e4).abs() <= 1e-6);
        let (c2, q2) = amplification_estimate(&[3, 7, 5]).unwrap();
        assert!((q2 / c2 - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn paired_nets_share_the_conventional_part() {
        let mut rng = Rng::new(64);
        let (conv, quad) = paired_gaussian_nets(&[4, 10, 10, 2], &mut rng).unwrap();
        let zero = DenseVector::zeros(4);
        let out = quad.eval(&zero).unwrap();
        for v in &out.data {
            assert_eq!(*v, 0.0);
        }
        let cj = jacobian_at_zero(&conv).unwrap();
        let qj = jacobian_at_zero(&quad).unwrap();
        assert!(cj.is_finite() && cj > 0.0);
        assert!(qj.is_finite() && qj > 0.0);
        let (cl, ql) = (conv.layers().next().unwrap(), quad.layers().next().unwrap());
        assert_eq!(cl.params.wr.data, ql.params.wr.data);
        assert_eq!(cl.params.br.data, ql.params.br.data);
    }

    #[test]
    fn quadratic_jacobian_ratio_grows_with_depth() {
        let mut rng = Rng::new(65);
        let median_log_ratio = |depth: usize, rng: &mut Rng| {
            let widths = vec![10; depth + 1];
            let mut logs: Vec<f64> = (0..20)
                .map(|_| {
                    let (c, q) = paired_gaussian_nets(&widths, rng).unwrap();
                    (jacobian_at_zero(&q).unwrap() / jacobian_at_zero(&c).unwrap()).ln()
                })
                .collect();
            logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            0.5 * (logs[9] + logs[10])
        };
        let shallow = median_log_ratio(1, &mut rng);
        let deep = median_log_ratio(4, &mut rng);
        assert!(deep > shallow, "{deep} vs {shallow}");
    }

    #[test]
    fn bounds_table_covers_both_realizations() {
        let table = bounds_table(&[vec![2, 2, 1], vec![1, 8, 8, 1]]).unwrap();
        assert_eq!(table.len(), 4);
        assert_eq!(table[0].realization, Realization::QuadraticNeuron);
        assert_eq!(table[1].realization, Realization::QuadraticActivation);
    }
}
