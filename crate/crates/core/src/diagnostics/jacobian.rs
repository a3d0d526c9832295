use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::mean;
use super::SCHEMA_VERSION;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{bfs_distances, Graph, UNREACHABLE};
use crate::models::{forward, BackboneConfig, BackboneKind, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strata {
    /// 1, 2, 3, 4, ≥5 hops.
    Classification,
    /// ≤2, 3–5, ≥6 hops.
    Forecasting,
}

impl Strata {
    fn bounds(self) -> &'static [(usize, usize, &'static str)] {
        match self {
            Strata::Classification => &[(1, 1, "1"), (2, 2, "2"), (3, 3, "3"), (4, 4, "4"), (5, usize::MAX, ">=5")],
            Strata::Forecasting => &[(1, 2, "<=2"), (3, 5, "3-5"), (6, usize::MAX, ">=6")],
        }
    }

    fn of(self, d: usize) -> Option<usize> {
        if d == 0 {
            return None;
        }
        self.bounds().iter().position(|&(lo, hi, _)| d >= lo && d <= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub label: String,
    pub pairs: usize,
    /// `None` when the stratum has no pairs.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianTable {
    pub schema: u32,
    pub strata: Vec<StratumRow>,
    /// Mean norm for u = v.
    pub self_mean: f64,
    /// First stratum mean over the last non-empty stratum mean.
    pub short_to_long: Option<f64>,
    pub sampled: bool,
    pub seed: u64,
    pub hop_radius: usize,
}

pub const FULL_PAIRS_MAX_NODES: usize = 100;
pub const PAIRS_PER_STRATUM: usize = 200;

/// Frobenius norms ‖∂y[v] / ∂x[u]‖ for every source u, one row per requested
/// target v. `x` is node-major [n, d_in] and `build` must return a node-major
/// output whose numel is a multiple of n.
pub fn node_jacobian_norms(
    x: &Tensor,
    targets: &[usize],
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<Vec<Vec<f64>>> {
    let (n, d_in) = x.dims2()?;
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = build(&mut tape, xv)?;
    let numel = tape.value(y).numel();
    if numel % n != 0 {
        return Err(Error::InvalidArgument("output is not node-major".into()));
    }
    let d_out = numel / n;
    let mut seed = vec![0.0; numel];
    let mut rows = Vec::with_capacity(targets.len());
    for &v in targets {
        if v >= n {
            return Err(Error::IndexOutOfRange {
                what: "target node",
                index: v,
                limit: n,
            });
        }
        let mut acc = vec![0.0; n];
        for o in 0..d_out {
            tape.zero_grad();
            seed[v * d_out + o] = 1.0;
            tape.backward_seeded(y, &seed)?;
            seed[v * d_out + o] = 0.0;
            if let Some(g) = tape.grad(xv) {
                for (u, a) in acc.iter_mut().enumerate() {
                    *a += g[u * d_in..(u + 1) * d_in].iter().map(|z| z * z).sum::<f64>();
                }
            }
        }
        rows.push(acc.into_iter().map(f64::sqrt).collect());
    }
    Ok(rows)
}

/// Undirected support of a dense adjacency.
pub fn support_graph(adj: &Tensor) -> Result<Graph> {
    let (n, _) = adj.dims2()?;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if adj.get2(i, j) != 0.0 || adj.get2(j, i) != 0.0 {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::new(n, edges)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Jacobian norms of a trained backbone grouped by hop distance on the
/// support of `adj`. Forecasting inputs use the first test-split window.
/// Pairs at unreachable distance fall in the last stratum.
pub fn jacobian_by_distance(
    bb: &BackboneConfig,
    params: &ModelParams,
    adj: &Tensor,
    data: &Dataset,
    strata: Strata,
    seed: u64,
) -> Result<JacobianTable> {
    let (input, build): (Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var>>) = match (bb.kind, data) {
        (BackboneKind::GcnClassifier, Dataset::Nc(d)) => (
            d.features().clone(),
            Box::new(|tape: &mut Tape, x: Var| {
                let vars = params.register_const(tape);
                let a = tape.constant(adj.clone());
                forward(bb, tape, &vars, a, x, None)
            }),
        ),
        (BackboneKind::DecoupledStgnn, Dataset::St(d)) => {
            let start = d.window_starts(crate::data::Split::Test).start;
            let b = d.batch(&[start])?;
            let n = d.n_nodes();
            (
                b.x.reshaped(&[n, d.window])?,
                Box::new(move |tape: &mut Tape, x: Var| {
                    let vars = params.register_const(tape);
                    let a = tape.constant(adj.clone());
                    let x3 = tape.reshape(x, &[1, n, bb.window])?;
                    forward(bb, tape, &vars, a, x3, None)
                }),
            )
        }
        _ => return Err(Error::InvalidArgument("backbone kind does not match the dataset task".into())),
    };
    let g = support_graph(adj)?;
    jacobian_table(&input, &g, strata, seed, bb.hop_radius(), build)
}

/// Table over an arbitrary node-major model; all pairs when n ≤ 100,
/// otherwise up to 200 uniformly sampled pairs per stratum.
pub fn jacobian_table(
    input: &Tensor,
    g: &Graph,
    strata: Strata,
    seed: u64,
    hop_radius: usize,
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<JacobianTable> {
    let n = g.n();
    if input.shape()[0] != n {
        return Err(Error::InvalidArgument(format!(
            "input has {} nodes, graph has {}",
            input.shape()[0],
            n
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let dist = bfs_distances(g, &all)?;
    let k = strata.bounds().len();
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for (v, row) in dist.iter().enumerate() {
        for (u, &d) in row.iter().enumerate() {
            if let Some(s) = strata.of(if d == UNREACHABLE { usize::MAX } else { d }) {
                pairs[s].push((u, v));
            }
        }
    }
    let sampled = n > FULL_PAIRS_MAX_NODES;
    if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in pairs.iter_mut() {
            if p.len() > PAIRS_PER_STRATUM {
                let mut idx = sample(&mut rng, p.len(), PAIRS_PER_STRATUM).into_vec();
                idx.sort_unstable();
                *p = idx.into_iter().map(|i| p[i]).collect();
            }
        }
    }
    let mut targets: Vec<usize> = pairs.iter().flatten().map(|&(_, v)| v).collect();
    if !sampled {
        targets = all.clone();
    }
    targets.sort_unstable();
    targets.dedup();
    let norms = node_jacobian_norms(input, &targets, &build)?;
    let row_of = |v: usize| targets.binary_search(&v).expect("target computed");
    let self_vals: Vec<f64> = targets.iter().map(|&v| norms[row_of(v)][v]).collect();
    let rows: Vec<StratumRow> = pairs
        .iter()
        .zip(strata.bounds())
        .map(|(p, &(_, _, label))| {
            let mut vals: Vec<f64> = p.iter().map(|&(u, v)| norms[row_of(v)][u]).collect();
            if vals.is_empty() {
                return StratumRow {
                    label: label.into(),
                    pairs: 0,
                    mean: None,
                    median: None,
                    max: None,
                };
            }
            StratumRow {
                label: label.into(),
                pairs: vals.len(),
                mean: Some(mean(&vals)),
                max: Some(vals.iter().cloned().fold(0.0, f64::max)),
                median: Some(median(&mut vals)),
            }
        })
        .collect();
    let short = rows.first().and_then(|r| r.mean);
    let long = rows.iter().rev().find_map(|r| r.mean);
    let short_to_long = match (short, long) {
        (Some(s), Some(l)) if l > 0.0 => Some(s / l),
        _ => None,
    };
    Ok(JacobianTable {
        schema: SCHEMA_VERSION,
        strata: rows,
        self_mean: if self_vals.is_empty() { 0.0 } else { mean(&self_vals) },
        short_to_long,
        sampled,
        seed,
        hop_radius,
    })
}
