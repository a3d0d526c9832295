use std::collections::{HashSet, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Hop distance for unreachable pairs.
pub const UNREACHABLE: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component_count: usize,
    /// Sizes in descending order.
    pub component_sizes: Vec<usize>,
    pub isolated_count: usize,
    /// Sorted nodes of the largest component (ties go to the component with
    /// the smallest node).
    pub lcc_nodes: Vec<usize>,
    /// Per-node component id, numbered in order of each component's smallest
    /// node.
    pub labels: Vec<usize>,
}

pub fn connected_components(g: &Graph) -> ComponentReport {
    let n = g.n();
    let adj = g.neighbors();
    let mut labels = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for s in 0..n {
        if labels[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        labels[s] = id;
        queue.push_back(s);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in &adj[u] {
                if labels[v] == usize::MAX {
                    labels[v] = id;
                    queue.push_back(v);
                }
            }
        }
        sizes.push(size);
    }
    let lcc_id = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k);
    let lcc_nodes = match lcc_id {
        Some(id) => (0..n).filter(|&v| labels[v] == id).collect(),
        None => Vec::new(),
    };
    let mut component_sizes = sizes.clone();
    component_sizes.sort_unstable_by(|a, b| b.cmp(a));
    ComponentReport {
        component_count: sizes.len(),
        isolated_count: adj.iter().filter(|l| l.is_empty()).count(),
        component_sizes,
        lcc_nodes,
        labels,
    }
}

/// Unweighted hop counts from each source to every node.
pub fn bfs_distances(g: &Graph, sources: &[usize]) -> Result<Vec<Vec<usize>>> {
    let adj = g.neighbors();
    sources
        .iter()
        .map(|&s| {
            if s >= g.n() {
                return Err(Error::IndexOutOfRange {
                    what: "source",
                    index: s,
                    limit: g.n(),
                });
            }
            let mut d = vec![UNREACHABLE; g.n()];
            d[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v] == UNREACHABLE {
                        d[v] = d[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            Ok(d)
        })
        .collect()
}

/// Edge swap: removes ⌊r·|E|⌋ uniformly chosen edges and adds as many
/// uniformly chosen pairs that were not edges of the input graph. Added
/// edges take over the removed edges' weights in draw order.
pub fn corrupt_edges(g: &Graph, fraction: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "corruption fraction must be in [0, 1], got {}",
            fraction
        )));
    }
    let m = g.edge_count();
    let k = (fraction * m as f64).floor() as usize;
    if k == 0 {
        return Ok(g.clone());
    }
    let n = g.n();
    let mut complement = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !g.has_edge(i, j) {
                complement.push((i, j));
            }
        }
    }
    if complement.len() < k {
        return Err(Error::ComplementTooSmall {
            needed: k,
            available: complement.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed = sample(&mut rng, m, k).into_vec();
    let added = sample(&mut rng, complement.len(), k).into_vec();
    let removed_set: HashSet<usize> = removed.iter().copied().collect();
    let mut edges: Vec<_> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(idx, _)| !removed_set.contains(idx))
        .map(|(_, e)| (e.i, e.j, e.w))
        .collect();
    for (r, a) in removed.iter().zip(&added) {
        let (i, j) = complement[*a];
        edges.push((i, j, g.edges()[*r].w));
    }
    g.with_edges(edges)
}

/// Node-averaged fraction of same-label neighbors; isolated nodes are skipped.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    let labels = g
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("homophily needs node labels".into()))?;
    let adj = g.neighbors();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (v, nb) in adj.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let same = nb.iter().filter(|&&u| labels[u] == labels[v]).count();
        total += same as f64 / nb.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Undefined("homophily undefined: every node is isolated".into()));
    }
    Ok(total / counted as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDeltaStats {
    pub count: usize,
    pub median: f64,
    pub q10: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    /// Ten equal-width bins over [0, max].
    pub histogram: Vec<usize>,
    pub frac_below_0_1: f64,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// |Δw| over the edges of `original`; an edge missing from `learned` counts
/// with weight 0.
pub fn weight_delta_stats(original: &Graph, learned: &Graph) -> Result<WeightDeltaStats> {
    if original.n() != learned.n() {
        return Err(Error::InvalidArgument(format!(
            "node sets differ: {} vs {} nodes",
            original.n(),
            learned.n()
        )));
    }
    let mut d: Vec<f64> = original
        .edges()
        .iter()
        .map(|e| (learned.weight(e.i, e.j).unwrap_or(0.0) - e.w).abs())
        .collect();
    d.sort_by(f64::total_cmp);
    let max = d.last().copied().unwrap_or(0.0);
    let mut histogram = vec![0usize; 10];
    for &x in &d {
        let b = if max > 0.0 {
            ((x / max * 10.0) as usize).min(9)
        } else {
            0
        };
        histogram[b] += 1;
    }
    let below = d.iter().filter(|&&x| x < 0.1).count();
    Ok(WeightDeltaStats {
        count: d.len(),
        median: quantile_sorted(&d, 0.5),
        q10: quantile_sorted(&d, 0.1),
        q25: quantile_sorted(&d, 0.25),
        q75: quantile_sorted(&d, 0.75),
        q90: quantile_sorted(&d, 0.9),
        max,
        histogram,
        frac_below_0_1: if d.is_empty() {
            f64::NAN
        } else {
            below as f64 / d.len() as f64
        },
    })
}
