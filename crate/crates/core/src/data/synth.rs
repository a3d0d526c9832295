use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{split_by_fraction, NcDataset, StDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Coords, Graph};

/// Divergence planted between the true and the init graph, as fractions of
/// the true edge count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct SlackSpec {
    /// Spurious edges added from the complement.
    pub added: f64,
    /// True edges left out of the init graph.
    pub removed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub true_graph: Graph,
    pub init_graph: Graph,
    pub added: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
    /// (added + removed) / |E_true|.
    pub slack_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthStConfig {
    pub n_nodes: usize,
    pub steps: usize,
    pub window: usize,
    pub horizon: usize,
    /// Each node links to its `knn` nearest neighbours (symmetrized).
    pub knn: usize,
    pub rho: f64,
    pub noise: f64,
    pub forcing_amp: f64,
    pub period: f64,
    pub burn_in: usize,
    pub slack: SlackSpec,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthStConfig {
    fn default() -> Self {
        Self {
            n_nodes: 60,
            steps: 3000,
            window: 12,
            horizon: 4,
            knn: 3,
            rho: 0.8,
            noise: 0.3,
            forcing_amp: 1.0,
            period: 24.0,
            burn_in: 100,
            slack: SlackSpec::default(),
            train_frac: 0.7,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

fn knn_graph(coords: &[(f64, f64)], k: usize) -> Result<Graph> {
    let n = coords.len();
    let mut edges = HashSet::new();
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((coords[i].0 - coords[j].0).hypot(coords[i].1 - coords[j].1), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    let mut edges: Vec<_> = edges.into_iter().collect();
    edges.sort_unstable();
    Graph::new(n, edges.into_iter().map(|(i, j)| (i, j, 1.0)))
}

/// Builds the init graph: drops `removed·|E|` true edges and adds
/// `added·|E|` complement edges, all unit weight.
pub fn plant_slack(true_graph: &Graph, slack: SlackSpec, seed: u64) -> Result<PlantedSpec> {
    for (name, f) in [("added", slack.added), ("removed", slack.removed)] {
        if !(0.0..).contains(&f) || (name == "removed" && f > 1.0) {
            return Err(Error::InvalidArgument(format!("slack fraction {} = {}", name, f)));
        }
    }
    let n = true_graph.n();
    let m = true_graph.edge_count();
    let n_add = (slack.added * m as f64).floor() as usize;
    let n_rm = (slack.removed * m as f64).floor() as usize;
    let complement: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !true_graph.has_edge(i, j))
        .collect();
    if complement.len() < n_add {
        return Err(Error::ComplementTooSmall {
            needed: n_add,
            available: complement.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removed: Vec<(usize, usize)> = sample(&mut rng, m, n_rm)
        .into_iter()
        .map(|k| (true_graph.edges()[k].i, true_graph.edges()[k].j))
        .collect();
    let mut added: Vec<(usize, usize)> = sample(&mut rng, complement.len(), n_add)
        .into_iter()
        .map(|k| complement[k])
        .collect();
    removed.sort_unstable();
    added.sort_unstable();
    let rm: HashSet<_> = removed.iter().copied().collect();
    let edges = true_graph
        .edges()
        .iter()
        .filter(|e| !rm.contains(&(e.i, e.j)))
        .map(|e| (e.i, e.j, e.w))
        .chain(added.iter().map(|&(i, j)| (i, j, 1.0)));
    let init_graph = true_graph.with_edges(edges)?;
    let slack_level = if m == 0 {
        0.0
    } else {
        (added.len() + removed.len()) as f64 / m as f64
    };
    Ok(PlantedSpec {
        true_graph: true_graph.clone(),
        init_graph,
        added,
        removed,
        slack_level,
    })
}

/// Linear diffusion on the true graph, x_{t+1} = ρ·Ŝ·x_t + forcing + noise,
/// with per-node sinusoidal forcing. The dataset carries the init graph.
pub fn synth_st(cfg: &SynthStConfig) -> Result<(StDataset, PlantedSpec)> {
    if !(0.0..1.0).contains(&cfg.rho) {
        return Err(Error::InvalidArgument(format!(
            "unstable diffusion: rho = {} must lie in [0, 1)",
            cfg.rho
        )));
    }
    if cfg.n_nodes < 2 || cfg.knn == 0 || cfg.knn >= cfg.n_nodes {
        return Err(Error::InvalidArgument("need n_nodes >= 2 and 1 <= knn < n_nodes".into()));
    }
    if cfg.noise < 0.0 || cfg.period <= 0.0 {
        return Err(Error::InvalidArgument("noise must be >= 0 and period > 0".into()));
    }
    let n = cfg.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let true_graph = knn_graph(&coords, cfg.knn)?.with_coords(Coords::Planar(coords))?;
    let planted = plant_slack(&true_graph, cfg.slack, rng.random())?;

    let s_true = true_graph.adjacency();
    let deg = true_graph.degrees();
    let nbrs = true_graph.neighbors();
    let phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let omega = std::f64::consts::TAU / cfg.period;
    let mut x = vec![0.0; n];
    let mut raw = Vec::with_capacity(cfg.steps * n);
    for t in 0..cfg.burn_in + cfg.steps {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mix = if deg[i] > 0.0 {
                nbrs[i].iter().map(|&j| s_true.get2(i, j) * x[j]).sum::<f64>() / deg[i]
            } else {
                0.0
            };
            let eps: f64 = StandardNormal.sample(&mut rng);
            next[i] = cfg.rho * mix + cfg.forcing_amp * (omega * (t + 1) as f64 + phase[i]).sin() + cfg.noise * eps;
        }
        x = next;
        if t >= cfg.burn_in {
            raw.extend_from_slice(&x);
        }
    }
    let raw = Tensor::new(vec![cfg.steps, n], raw)?;
    let splits = split_by_fraction(cfg.steps, cfg.train_frac, cfg.val_frac);
    let ds = StDataset::new(planted.init_graph.clone(), raw, cfg.window, cfg.horizon, splits)?;
    Ok((ds, planted))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthNcConfig {
    pub n_nodes: usize,
    pub classes: usize,
    pub homophily: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    /// Norm of each class mean.
    pub feature_signal: f64,
    pub feature_noise: f64,
    pub train_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthNcConfig {
    fn default() -> Self {
        Self {
            n_nodes: 200,
            classes: 4,
            homophily: 0.8,
            avg_degree: 6.0,
            feature_dim: 16,
            feature_signal: 1.0,
            feature_noise: 1.0,
            train_per_class: 10,
            val_size: 40,
            test_size: 100,
            seed: 0,
        }
    }
}

/// Balanced stochastic block model whose expected edge homophily and mean
/// degree match the targets, with class-mean Gaussian features.
pub fn synth_nc(cfg: &SynthNcConfig) -> Result<NcDataset> {
    let (n, k) = (cfg.n_nodes, cfg.classes);
    if k < 2 || n < 2 * k {
        return Err(Error::InvalidArgument("need classes >= 2 and at least two nodes per class".into()));
    }
    if !(0.0..=1.0).contains(&cfg.homophily) {
        return Err(Error::InvalidArgument(format!("homophily {} outside [0, 1]", cfg.homophily)));
    }
    let m = n as f64 / k as f64;
    let p_in = cfg.homophily * cfg.avg_degree / (m - 1.0);
    let p_out = (1.0 - cfg.homophily) * cfg.avg_degree / (n as f64 - m);
    if p_in > 1.0 || p_out > 1.0 || cfg.avg_degree <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "infeasible target: homophily {} at mean degree {} needs p_in = {:.3}, p_out = {:.3}",
            cfg.homophily, cfg.avg_degree, p_in, p_out
        )));
    }
    if cfg.train_per_class * k + cfg.val_size + cfg.test_size > n {
        return Err(Error::InvalidArgument("splits exceed node count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<usize> = (0..n).map(|v| v % k).collect();
    labels.shuffle(&mut rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    let d = cfg.feature_dim;
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * cfg.feature_signal / norm).collect()
        })
        .collect();
    let mut feats = Vec::with_capacity(n * d);
    for &c in &labels {
        for mu in &means[c] {
            let e: f64 = StandardNormal.sample(&mut rng);
            feats.push(mu + cfg.feature_noise * e);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train = Vec::new();
    let mut per_class = vec![0; k];
    let mut rest = Vec::new();
    for v in order {
        if per_class[labels[v]] < cfg.train_per_class {
            per_class[labels[v]] += 1;
            train.push(v);
        } else {
            rest.push(v);
        }
    }
    let val = rest[..cfg.val_size].to_vec();
    let test = rest[cfg.val_size..cfg.val_size + cfg.test_size].to_vec();
    let g = Graph::new(n, edges)?
        .with_labels(labels)?
        .with_features(Tensor::new(vec![n, d], feats)?)?;
    NcDataset::new(g, train, val, test)
}
