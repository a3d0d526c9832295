//! Weighted undirected graphs and the structural analyses run on them.

mod analysis;
mod io;
mod kernel;

pub use analysis::{
    bfs_distances, connected_components, corrupt_edges, edge_homophily, weight_delta_stats,
    ComponentReport, WeightDeltaStats, UNREACHABLE,
};
pub use io::{
    read_coords_csv, read_edge_list, read_features_csv, read_labels_csv, write_edge_list,
};
pub use kernel::{
    bandwidth_ablation, gaussian_kernel_adjacency, haversine_km, pairwise_distances,
    single_linkage_clusters, AblationRow, BandwidthRule, DEFAULT_CLUSTER_CUTOFF_KM,
    EARTH_RADIUS_KM,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Undirected edge stored with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Node positions: geographic (degrees) or planar (km).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coords {
    LatLon(Vec<(f64, f64)>),
    Planar(Vec<(f64, f64)>),
}

impl Coords {
    pub fn len(&self) -> usize {
        match self {
            Coords::LatLon(v) | Coords::Planar(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance in km between nodes `a` and `b`.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match self {
            Coords::LatLon(v) => haversine_km(v[a], v[b]),
            Coords::Planar(v) => {
                let (dx, dy) = (v[a].0 - v[b].0, v[a].1 - v[b].1);
                (dx * dx + dy * dy).sqrt()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    pub coords: Option<Coords>,
    pub labels: Option<Vec<usize>>,
    pub features: Option<Tensor>,
}

impl Graph {
    /// Builds a graph from undirected edges. Endpoint order is normalized and
    /// edges are sorted; self-loops, duplicates and bad weights are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut out: Vec<Edge> = edges
            .into_iter()
            .map(|(a, b, w)| Edge {
                i: a.min(b),
                j: a.max(b),
                w,
            })
            .collect();
        out.sort_by(|x, y| (x.i, x.j).cmp(&(y.i, y.j)));
        let g = Self {
            n,
            edges: out,
            coords: None,
            labels: None,
            features: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
            coords: None,
            labels: None,
            features: None,
        }
    }

    /// Builds a graph from a dense symmetric matrix; entries > 0 off the
    /// diagonal become edges.
    pub fn from_dense(a: &Tensor) -> Result<Self> {
        let (r, c) = a.dims2()?;
        if r != c {
            return Err(Error::InvalidShape {
                op: "from_dense",
                msg: format!("adjacency must be square, got {:?}", a.shape()),
            });
        }
        let mut asym = 0.0f64;
        let mut edges = Vec::new();
        for i in 0..r {
            for j in (i + 1)..r {
                let (x, y) = (a.get2(i, j), a.get2(j, i));
                asym = asym.max((x - y).abs());
                if x > 0.0 {
                    edges.push((i, j, x));
                }
            }
        }
        if asym > 0.0 {
            return Err(Error::NotSymmetric(asym));
        }
        Self::new(r, edges)
    }

    pub fn with_coords(mut self, coords: Coords) -> Result<Self> {
        if coords.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates for {} nodes",
                coords.len(),
                self.n
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        let (r, _) = features.dims2()?;
        if r != self.n {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows for {} nodes",
                r, self.n
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.edges.iter().enumerate() {
            if e.i == e.j {
                return Err(Error::GraphInvariant(format!("self-loop at node {}", e.i)));
            }
            if e.i > e.j {
                return Err(Error::GraphInvariant(format!("edge ({}, {}) not normalized", e.i, e.j)));
            }
            if e.j >= self.n {
                return Err(Error::IndexOutOfRange {
                    what: "edge endpoint",
                    index: e.j,
                    limit: self.n,
                });
            }
            if !e.w.is_finite() || e.w < 0.0 {
                return Err(Error::GraphInvariant(format!(
                    "edge ({}, {}) has weight {}",
                    e.i, e.j, e.w
                )));
            }
            if k > 0 {
                let p = self.edges[k - 1];
                if (p.i, p.j) == (e.i, e.j) {
                    return Err(Error::GraphInvariant(format!("duplicate edge ({}, {})", e.i, e.j)));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by(|e| (e.i, e.j).cmp(&key))
            .ok()
            .map(|k| self.edges[k].w)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weight(i, j).is_some()
    }

    /// Dense symmetric adjacency.
    pub fn adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(&[self.n, self.n]);
        for e in &self.edges {
            a.set2(e.i, e.j, e.w);
            a.set2(e.j, e.i, e.w);
        }
        a
    }

    /// Boolean support of the adjacency, row-major n×n.
    pub fn support_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n * self.n];
        for e in &self.edges {
            m[e.i * self.n + e.j] = true;
            m[e.j * self.n + e.i] = true;
        }
        m
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    /// Weighted degrees.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.i] += e.w;
            d[e.j] += e.w;
        }
        d
    }

    /// Induced subgraph on `nodes` (renumbered in the given order).
    pub fn subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= self.n {
                return Err(Error::IndexOutOfRange {
                    what: "node",
                    index: v,
                    limit: self.n,
                });
            }
            pos[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| pos[e.i] != usize::MAX && pos[e.j] != usize::MAX)
            .map(|e| (pos[e.i], pos[e.j], e.w));
        let mut g = Self::new(nodes.len(), edges)?;
        g.labels = self
            .labels
            .as_ref()
            .map(|l| nodes.iter().map(|&v| l[v]).collect());
        g.coords = self.coords.as_ref().map(|c| {
            let pick = |v: &Vec<(f64, f64)>| nodes.iter().map(|&k| v[k]).collect();
            match c {
                Coords::LatLon(v) => Coords::LatLon(pick(v)),
                Coords::Planar(v) => Coords::Planar(pick(v)),
            }
        });
        if let Some(f) = &self.features {
            let (_, k) = f.dims2()?;
            let data = nodes
                .iter()
                .flat_map(|&v| f.data()[v * k..(v + 1) * k].iter().copied())
                .collect();
            g.features = Some(Tensor::new(vec![nodes.len(), k], data)?);
        }
        Ok(g)
    }

    /// Same node set and metadata, new edge list.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut g = Self::new(self.n, edges)?;
        g.coords = self.coords.clone();
        g.labels = self.labels.clone();
        g.features = self.features.clone();
        Ok(g)
    }

    /// Union of edge sets; weights of shared edges come from `self`.
    pub fn union(&self, other: &Graph) -> Result<Self> {
        if other.n != self.n {
            return Err(Error::InvalidArgument(format!(
                "union of graphs with {} and {} nodes",
                self.n, other.n
            )));
        }
        let mut edges: Vec<_> = self.edges.iter().map(|e| (e.i, e.j, e.w)).collect();
        edges.extend(
            other
                .edges
                .iter()
                .filter(|e| !self.has_edge(e.i, e.j))
                .map(|e| (e.i, e.j, e.w)),
        );
        self.with_edges(edges)
    }
}
