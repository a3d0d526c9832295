use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Materialize {
    /// Softmax: A_init ⊙ softmax(W_φ). Bernoulli: the probability matrix θ.
    Deterministic,
    /// Bernoulli only: one symmetric 0/1 draw from θ.
    Sampled(u64),
}

/// Learnable graph structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphParam {
    /// Reweights the edges of a fixed support: A_init ⊙ rowsoftmax(W_φ)
    /// restricted to the support of A_init.
    SoftmaxReweight { a_init: Tensor, w_phi: Tensor },
    /// Independent symmetric edge probabilities θ ∈ [0,1], zero diagonal.
    Bernoulli { theta: Tensor, samples: usize },
}

impl GraphParam {
    /// Zero logits, so every row starts uniform over its support.
    pub fn softmax_from(g: &Graph) -> Self {
        let n = g.n();
        GraphParam::SoftmaxReweight {
            a_init: g.adjacency(),
            w_phi: Tensor::zeros(&[n, n]),
        }
    }

    /// θ initialised to the support of `g`.
    pub fn bernoulli_from(g: &Graph, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidArgument("bernoulli needs at least one sample".into()));
        }
        let n = g.n();
        let theta = Tensor::new(vec![n, n], g.support_mask().iter().map(|&b| b as u8 as f64).collect())?;
        Ok(GraphParam::Bernoulli { theta, samples })
    }

    pub fn n(&self) -> usize {
        self.raw().shape()[0]
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GraphParam::SoftmaxReweight { .. } => "softmax",
            GraphParam::Bernoulli { .. } => "bernoulli",
        }
    }

    /// The optimised tensor (W_φ or θ).
    pub fn raw(&self) -> &Tensor {
        match self {
            GraphParam::SoftmaxReweight { w_phi, .. } => w_phi,
            GraphParam::Bernoulli { theta, .. } => theta,
        }
    }

    pub fn raw_mut(&mut self) -> &mut Tensor {
        match self {
            GraphParam::SoftmaxReweight { w_phi, .. } => w_phi,
            GraphParam::Bernoulli { theta, .. } => theta,
        }
    }

    fn support(a_init: &Tensor) -> Vec<bool> {
        a_init.data().iter().map(|&v| v != 0.0).collect()
    }

    /// Records A_φ on the tape with W_φ as a trainable leaf. Softmax only.
    pub fn record(&self, tape: &mut Tape) -> Result<(Var, Var)> {
        match self {
            GraphParam::SoftmaxReweight { w_phi, .. } => {
                let w = tape.param(w_phi.clone());
                let a = self.adjacency_from(tape, w)?;
                Ok((w, a))
            }
            GraphParam::Bernoulli { .. } => Err(Error::InvalidArgument(
                "bernoulli structure is differentiated through samples".into(),
            )),
        }
    }

    /// A_init ⊙ rowsoftmax(w) for an already recorded logit matrix `w`.
    pub fn adjacency_from(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        match self {
            GraphParam::SoftmaxReweight { a_init, .. } => {
                let mask = Self::support(a_init);
                let s = tape.row_softmax(w, Some(&mask))?;
                let a0 = tape.constant(a_init.clone());
                tape.mul(a0, s)
            }
            GraphParam::Bernoulli { .. } => Err(Error::InvalidArgument(
                "bernoulli structure has no logit form".into(),
            )),
        }
    }

    pub fn materialize(&self, mode: Materialize) -> Result<Tensor> {
        match (self, mode) {
            (GraphParam::SoftmaxReweight { .. }, Materialize::Deterministic) => {
                let mut tape = Tape::new();
                let (_, a) = self.record(&mut tape)?;
                let mut t = tape.value(a).clone();
                t.requires_grad = false;
                t.grad = None;
                Ok(t)
            }
            (GraphParam::SoftmaxReweight { .. }, Materialize::Sampled(_)) => Err(Error::InvalidArgument(
                "softmax structure has no sampled form".into(),
            )),
            (GraphParam::Bernoulli { theta, .. }, Materialize::Deterministic) => {
                let mut t = theta.clone();
                t.requires_grad = false;
                t.grad = None;
                Ok(t)
            }
            (GraphParam::Bernoulli { theta, .. }, Materialize::Sampled(seed)) => {
                let n = theta.shape()[0];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let p = theta.get2(i, j);
                        if p > 0.0 && rng.random::<f64>() < p {
                            m.set2(i, j, 1.0);
                            m.set2(j, i, 1.0);
                        }
                    }
                }
                Ok(m)
            }
        }
    }

    /// Maps a gradient w.r.t. a sampled adjacency onto θ (straight-through):
    /// entry (i,j) receives g_ij + g_ji, the diagonal nothing.
    pub fn straight_through(grad_a: &[f64], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s = grad_a[i * n + j] + grad_a[j * n + i];
                g[i * n + j] = s;
                g[j * n + i] = s;
            }
        }
        g
    }

    /// Restores the Bernoulli invariants after an update.
    pub fn project(&mut self) {
        if let GraphParam::Bernoulli { theta, .. } = self {
            let n = theta.shape()[0];
            for i in 0..n {
                theta.set2(i, i, 0.0);
                for j in (i + 1)..n {
                    let v = (0.5 * (theta.get2(i, j) + theta.get2(j, i))).clamp(0.0, 1.0);
                    theta.set2(i, j, v);
                    theta.set2(j, i, v);
                }
            }
        }
    }

    /// Bernoulli edges with θ ≥ τ, as a fixed unit-weight structure.
    pub fn binarized(&self, tau: f64) -> Result<Self> {
        match self {
            GraphParam::Bernoulli { theta, samples } => {
                let t = Tensor::new(
                    theta.shape().to_vec(),
                    theta.data().iter().map(|&p| if p >= tau { 1.0 } else { 0.0 }).collect(),
                )?;
                Ok(GraphParam::Bernoulli {
                    theta: t,
                    samples: *samples,
                })
            }
            GraphParam::SoftmaxReweight { .. } => Ok(self.clone()),
        }
    }

    /// Symmetrized deterministic adjacency as a graph (entries below `min_weight`
    /// dropped), for export.
    pub fn to_graph(&self, min_weight: f64) -> Result<Graph> {
        let a = self.materialize(Materialize::Deterministic)?;
        let n = a.shape()[0];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = 0.5 * (a.get2(i, j) + a.get2(j, i));
                if w > min_weight {
                    edges.push((i, j, w));
                }
            }
        }
        Graph::new(n, edges)
    }

    /// Expected number of undirected edges, Σ_{i<j} θ_ij.
    pub fn expected_edges(&self) -> Option<f64> {
        match self {
            GraphParam::Bernoulli { theta, .. } => {
                let n = theta.shape()[0];
                Some((0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| theta.get2(i, j)).sum())
            }
            GraphParam::SoftmaxReweight { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n, 1.0))).unwrap()
    }

    #[test]
    fn softmax_init_is_uniform_over_support() {
        let g = ring(5).union(&Graph::new(5, [(0, 2, 2.0)]).unwrap()).unwrap();
        let p = GraphParam::softmax_from(&g);
        let a = p.materialize(Materialize::Deterministic).unwrap();
        assert!((a.get2(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get2(0, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.get2(0, 3), 0.0);
        assert!((a.get2(1, 0) - 0.5).abs() < 1e-15);
        assert!(p.materialize(Materialize::Sampled(0)).is_err());
    }

    #[test]
    fn softmax_gradient_is_finite_difference_exact() {
        let g = ring(4);
        let p = GraphParam::softmax_from(&g);
        let a_init = g.adjacency();
        let build = move |t: &mut Tape, v: &[Var]| -> crate::Result<Var> {
            let mask: Vec<bool> = a_init.data().iter().map(|&x| x != 0.0).collect();
            let s = t.row_softmax(v[0], Some(&mask))?;
            let a0 = t.constant(a_init.clone());
            t.mul(a0, s)
        };
        let mut w = p.raw().clone();
        for (k, x) in w.data_mut().iter_mut().enumerate() {
            *x = (k as f64 * 0.37).sin();
        }
        let err = crate::autodiff::gradcheck::max_relative_error(&build, &[w], 3).unwrap();
        assert!(err < 1e-5);
    }

    #[test]
    fn bernoulli_samples_are_symmetric_and_seeded() {
        let g = ring(6);
        let mut p = GraphParam::bernoulli_from(&g, 4).unwrap();
        p.raw_mut().data_mut().iter_mut().for_each(|v| *v = 0.5);
        p.project();
        let a = p.materialize(Materialize::Sampled(7)).unwrap();
        let b = p.materialize(Materialize::Sampled(7)).unwrap();
        assert_eq!(a, b);
        for i in 0..6 {
            assert_eq!(a.get2(i, i), 0.0);
            for j in 0..6 {
                assert_eq!(a.get2(i, j), a.get2(j, i));
            }
        }
    }

    #[test]
    fn bernoulli_monte_carlo_edge_count() {
        let n = 12;
        let mut p = GraphParam::bernoulli_from(&Graph::empty(n), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in p.raw_mut().data_mut() {
            *v = rng.random::<f64>();
        }
        p.project();
        let expected = p.expected_edges().unwrap();
        let draws = 4000;
        let total: f64 = (0..draws)
            .map(|s| p.materialize(Materialize::Sampled(s)).unwrap().data().iter().sum::<f64>() / 2.0)
            .sum();
        let var: f64 = {
            let t = p.raw();
            (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| t.get2(i, j) * (1.0 - t.get2(i, j))).sum()
        };
        let se = (var / draws as f64).sqrt();
        assert!((total / draws as f64 - expected).abs() < 4.0 * se);
    }

    #[test]
    fn projection_and_binarization() {
        let mut p = GraphParam::bernoulli_from(&ring(4), 1).unwrap();
        p.raw_mut().set2(0, 1, 1.7);
        p.raw_mut().set2(0, 2, -0.3);
        p.raw_mut().set2(2, 2, 0.4);
        p.project();
        let t = p.raw();
        assert_eq!(t.get2(2, 2), 0.0);
        assert_eq!(t.get2(0, 2), 0.0);
        assert!((t.get2(0, 1) - 1.0).abs() < 1e-15);
        let b = p.binarized(0.5).unwrap();
        assert_eq!(b.to_graph(0.0).unwrap().edge_count(), 4);
    }

    #[test]
    fn straight_through_symmetrizes() {
        let g = GraphParam::straight_through(&[0.0, 1.0, 2.0, 3.0], 2);
        assert_eq!(g, vec![0.0, 3.0, 3.0, 0.0]);
    }
}
