//! Coarse-to-fine prediction head.
//!
//! Class probabilities come from a row softmax over similarity logits; the
//! continuous prediction is the probability-weighted sum of shifted bin
//! centers `b_i / (1 + delta_i)`. The shifts are either a free per-bin
//! vector (default) or the output of a small network over the probability
//! vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::binning::BinSpec;
use crate::graph::{Graph, NodeId};
use crate::matrix::Matrix;
use crate::Result;

/// Lower clamp for `1 + delta`, preventing sign flips of the shifted
/// centers.
pub const DELTA_FLOOR: f64 = 0.5;

/// Learnable per-bin shifts.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaParams {
    /// One free shift per bin, clamped so `1 + delta >= 0.5` after every
    /// optimizer step.
    FreeVector(Matrix),
    /// One-hidden-layer network over the probability vector; its tanh
    /// output is scaled into (-0.5, 0.5) so the clamp holds by
    /// construction.
    Network {
        w1: Matrix,
        b1: Matrix,
        w2: Matrix,
        b2: Matrix,
    },
}

impl DeltaParams {
    /// Shifts start at zero: the initial prediction is the plain
    /// probability-weighted center expectation.
    pub fn zeros(k: usize) -> Self {
        DeltaParams::FreeVector(Matrix::zeros(k, 1))
    }

    pub fn network(k: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut init = |r: usize, c: usize| {
            let mut m = Matrix::zeros(r, c);
            for v in m.data_mut() {
                *v = normal.sample(rng);
            }
            m
        };
        DeltaParams::Network {
            w1: init(k, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: init(hidden, k),
            b2: Matrix::zeros(1, k),
        }
    }

    pub fn num_bins(&self) -> usize {
        match self {
            DeltaParams::FreeVector(d) => d.rows(),
            DeltaParams::Network { w1, .. } => w1.rows(),
        }
    }

    /// Trainable matrices in declaration order.
    pub fn matrices(&self) -> Vec<&Matrix> {
        match self {
            DeltaParams::FreeVector(d) => vec![d],
            DeltaParams::Network { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            DeltaParams::FreeVector(d) => vec![d],
            DeltaParams::Network { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    /// Enforce `1 + delta >= DELTA_FLOOR` on the free-vector variant.
    pub fn clamp(&mut self) {
        if let DeltaParams::FreeVector(d) = self {
            for v in d.data_mut() {
                if *v < DELTA_FLOOR - 1.0 {
                    *v = DELTA_FLOOR - 1.0;
                }
            }
        }
    }
}

/// Graph handles for the shift parameters.
#[derive(Debug, Clone, Copy)]
pub enum DeltaNodes {
    FreeVector(NodeId),
    Network {
        w1: NodeId,
        b1: NodeId,
        w2: NodeId,
        b2: NodeId,
    },
}

/// Insert the shift parameters as graph leaves.
pub fn insert_delta(g: &mut Graph, delta: &DeltaParams) -> DeltaNodes {
    match delta {
        DeltaParams::FreeVector(d) => DeltaNodes::FreeVector(g.input(d.clone())),
        DeltaParams::Network { w1, b1, w2, b2 } => DeltaNodes::Network {
            w1: g.input(w1.clone()),
            b1: g.input(b1.clone()),
            w2: g.input(w2.clone()),
            b2: g.input(b2.clone()),
        },
    }
}

/// Row softmax over similarity logits.
pub fn class_probabilities(g: &mut Graph, logits: NodeId) -> Result<NodeId> {
    g.row_softmax(logits)
}

/// Refine class probabilities into a continuous value:
/// `y = sum_i p_i * b_i / (1 + delta_i)`.
pub fn predict(
    g: &mut Graph,
    probabilities: NodeId,
    spec: &BinSpec,
    delta: &DeltaNodes,
) -> Result<NodeId> {
    let k = spec.num_bins();
    let n = g.value(probabilities).rows();
    if g.value(probabilities).cols() != k {
        return Err(crate::Error::BadArity(format!(
            "probability rows have {} entries for {k} bins",
            g.value(probabilities).cols()
        )));
    }
    match *delta {
        DeltaNodes::FreeVector(d) => {
            // shifted centers b / (1 + delta), via exp(-log(1 + delta))
            let ones = g.input(Matrix::filled(k, 1, 1.0));
            let one_plus = g.add(d, ones)?;
            let lg = g.log(one_plus)?;
            let nl = g.neg(lg)?;
            let inv = g.exp(nl)?;
            let centers = g.input(Matrix::column(spec.centers()));
            let shifted = g.elem_mul(centers, inv)?;
            g.matmul(probabilities, shifted)
        }
        DeltaNodes::Network { w1, b1, w2, b2 } => {
            let ones_n = g.input(Matrix::filled(n, 1, 1.0));
            let h_pre = g.matmul(probabilities, w1)?;
            let b1_full = g.matmul(ones_n, b1)?;
            let h_in = g.add(h_pre, b1_full)?;
            let h = g.tanh(h_in)?;
            let out_pre = g.matmul(h, w2)?;
            let b2_full = g.matmul(ones_n, b2)?;
            let raw = g.add(out_pre, b2_full)?;
            let squashed = g.tanh(raw)?;
            let delta_mat = g.scale(squashed, 0.5)?;
            let ones_nk = g.input(Matrix::filled(n, k, 1.0));
            let one_plus = g.add(delta_mat, ones_nk)?;
            let lg = g.log(one_plus)?;
            let nl = g.neg(lg)?;
            let inv = g.exp(nl)?;
            let mut centers_full = Matrix::zeros(n, k);
            for r in 0..n {
                for (c, &b) in spec.centers().iter().enumerate() {
                    centers_full.set(r, c, b);
                }
            }
            let b_full = g.input(centers_full);
            let shifted = g.elem_mul(b_full, inv)?;
            let contrib = g.elem_mul(probabilities, shifted)?;
            let ones_k = g.input(Matrix::filled(k, 1, 1.0));
            g.matmul(contrib, ones_k)
        }
    }
}

/// Per-sample prediction extracted from a forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub value: f64,
    pub coarse_class: usize,
}

/// Forward-only predictions from raw similarity logits.
pub fn predictions_from_logits(
    logits: &Matrix,
    spec: &BinSpec,
    delta: &DeltaParams,
) -> Result<Vec<Prediction>> {
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let probs = class_probabilities(&mut g, l)?;
    let dn = insert_delta(&mut g, delta);
    let values = predict(&mut g, probs, spec, &dn)?;
    let pm = g.value(probs);
    let vm = g.value(values);
    let mut out = Vec::with_capacity(logits.rows());
    for r in 0..logits.rows() {
        let row = pm.row(r).to_vec();
        let coarse = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        out.push(Prediction {
            probabilities: row,
            value: vm.get(r, 0),
            coarse_class: coarse,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decade_spec() -> BinSpec {
        BinSpec::uniform(
            1930.0,
            1980.0,
            5,
            crate::binning::default_vocabulary(5, 1930.0, 1980.0),
        )
        .unwrap()
    }

    fn run_predict(probs: Matrix, spec: &BinSpec, delta: &DeltaParams) -> Vec<f64> {
        let mut g = Graph::new();
        let p = g.input(probs);
        let dn = insert_delta(&mut g, delta);
        let y = predict(&mut g, p, spec, &dn).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn one_hot_with_zero_shift_returns_center() {
        let spec = decade_spec();
        let probs = Matrix::from_vec(1, 5, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = run_predict(probs, &spec, &DeltaParams::zeros(5));
        assert_eq!(y[0], 1955.0);
    }

    #[test]
    fn uniform_probabilities_return_center_mean() {
        let spec = BinSpec::uniform(5.0, 25.0, 2, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(spec.centers(), &[10.0, 20.0]);
        let probs = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let y = run_predict(probs, &spec, &DeltaParams::zeros(2));
        assert!((y[0] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn positive_shift_scales_center_down() {
        // one-hot on center 30 with delta = 0.5 -> 30 / 1.5 = 20
        let spec = BinSpec::uniform(0.0, 60.0, 3, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(spec.centers()[1], 30.0);
        let mut d = Matrix::zeros(3, 1);
        d.set(1, 0, 0.5);
        let probs = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let y = run_predict(probs, &spec, &DeltaParams::FreeVector(d));
        assert!((y[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut g = Graph::new();
        let a = g.input(Matrix::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap());
        let b = g.input(Matrix::from_vec(1, 3, vec![7.1, 7.2, 7.3]).unwrap());
        let pa = class_probabilities(&mut g, a).unwrap();
        let pb = class_probabilities(&mut g, b).unwrap();
        for (x, y) in g.value(pa).data().iter().zip(g.value(pb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let mut g = Graph::new();
        let a = g.input(Matrix::filled(2, 4, 3.7));
        let p = class_probabilities(&mut g, a).unwrap();
        for &v in g.value(p).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn clamp_floors_free_vector() {
        let mut d = DeltaParams::FreeVector(Matrix::column(&[-0.9, 0.3]));
        d.clamp();
        match d {
            DeltaParams::FreeVector(m) => {
                assert_eq!(m.get(0, 0), -0.5);
                assert_eq!(m.get(1, 0), 0.3);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn argmax_invariant_under_monotone_logit_transform() {
        let logits = Matrix::from_vec(1, 3, vec![0.2, 1.4, -0.3]).unwrap();
        let spec = BinSpec::uniform(0.0, 3.0, 3, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let base = predictions_from_logits(&logits, &spec, &DeltaParams::zeros(3)).unwrap();
        let scaled = logits.map(|v| 3.0 * v + 10.0);
        let shifted = predictions_from_logits(&scaled, &spec, &DeltaParams::zeros(3)).unwrap();
        assert_eq!(base[0].coarse_class, shifted[0].coarse_class);
    }

    #[test]
    fn network_variant_predicts_within_shifted_center_hull() {
        let spec = decade_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let delta = DeltaParams::network(5, 8, &mut rng);
        let probs = Matrix::from_vec(1, 5, vec![0.2; 5]).unwrap();
        let y = run_predict(probs, &spec, &delta);
        // 1 + delta in (0.5, 1.5) bounds the prediction by the extreme
        // shifted centers
        assert!(y[0] > 1935.0 / 1.5 && y[0] < 1975.0 / 0.5);
    }
}

#[cfg(test)]
use rand::SeedableRng;
