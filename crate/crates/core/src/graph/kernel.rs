use serde::{Deserialize, Serialize};

use super::{connected_components, Coords, Graph};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Cutoff used to assign nodes to cities when counting inter-cluster edges.
pub const DEFAULT_CLUSTER_CUTOFF_KM: f64 = 80.0;

/// Great-circle distance in km between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2)
        + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Upper-triangle pairwise distances (i < j), row-major.
pub fn pairwise_distances(coords: &Coords) -> Vec<f64> {
    let n = coords.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(coords.distance(i, j));
        }
    }
    d
}

/// Thresholded Gaussian kernel graph: edge iff exp(-d²/θ²) ≥ τ, weight is the
/// raw kernel value.
pub fn gaussian_kernel_adjacency(coords: &Coords, bandwidth: f64, threshold: f64) -> Result<Graph> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {}", bandwidth)));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in [0, 1), got {}",
            threshold
        )));
    }
    let n = coords.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let r = coords.distance(i, j) / bandwidth;
            let w = (-(r * r)).exp();
            if w >= threshold {
                edges.push((i, j, w));
            }
        }
    }
    Graph::new(n, edges)?.with_coords(coords.clone())
}

/// Single-linkage clustering: nodes chained by distances ≤ `cutoff` share an
/// id. Ids are numbered by smallest member node.
pub fn single_linkage_clusters(coords: &Coords, cutoff: f64) -> Vec<usize> {
    let n = coords.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if coords.distance(i, j) <= cutoff {
                edges.push((i, j, 1.0));
            }
        }
    }
    let g = Graph::new(n, edges).expect("cutoff graph is valid");
    connected_components(&g).labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    Fixed(f64),
    /// Standard deviation of pairwise distances among the given nodes.
    StdOfSubset(Vec<usize>),
    /// Percentile (0..=100) of all pairwise distances.
    Percentile(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rule: BandwidthRule,
    pub bandwidth: f64,
    pub component_count: usize,
    pub isolated: usize,
    pub mean_degree: f64,
    pub edge_count: usize,
    pub inter_cluster_edges: usize,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BandwidthRule {
    pub fn resolve(&self, coords: &Coords) -> Result<f64> {
        match self {
            BandwidthRule::Fixed(v) => Ok(*v),
            BandwidthRule::StdOfSubset(nodes) => {
                if nodes.len() < 2 {
                    return Err(Error::InvalidArgument(
                        "std bandwidth rule needs at least two nodes".into(),
                    ));
                }
                if let Some(&bad) = nodes.iter().find(|&&v| v >= coords.len()) {
                    return Err(Error::IndexOutOfRange {
                        what: "node",
                        index: bad,
                        limit: coords.len(),
                    });
                }
                let mut d = Vec::new();
                for (a, &i) in nodes.iter().enumerate() {
                    for &j in &nodes[a + 1..] {
                        d.push(coords.distance(i, j));
                    }
                }
                let m = d.iter().sum::<f64>() / d.len() as f64;
                let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d.len() as f64;
                Ok(var.sqrt())
            }
            BandwidthRule::Percentile(p) => {
                if !(0.0..=100.0).contains(p) {
                    return Err(Error::InvalidArgument(format!("percentile {} outside [0, 100]", p)));
                }
                let mut d = pairwise_distances(coords);
                if d.is_empty() {
                    return Err(Error::InvalidArgument("percentile rule needs two nodes".into()));
                }
                d.sort_by(f64::total_cmp);
                Ok(percentile(&d, *p))
            }
        }
    }
}

/// One table row per rule: kernel graph at the resolved bandwidth plus
/// connectivity and inter-cluster edge counts.
pub fn bandwidth_ablation(
    coords: &Coords,
    rules: &[BandwidthRule],
    threshold: f64,
    cluster_cutoff: f64,
) -> Result<Vec<AblationRow>> {
    let clusters = single_linkage_clusters(coords, cluster_cutoff);
    rules
        .iter()
        .map(|rule| {
            let bw = rule.resolve(coords)?;
            let g = gaussian_kernel_adjacency(coords, bw, threshold)?;
            let rep = connected_components(&g);
            let inter = g
                .edges()
                .iter()
                .filter(|e| clusters[e.i] != clusters[e.j])
                .count();
            Ok(AblationRow {
                rule: rule.clone(),
                bandwidth: bw,
                component_count: rep.component_count,
                isolated: rep.isolated_count,
                mean_degree: if g.n() == 0 {
                    0.0
                } else {
                    2.0 * g.edge_count() as f64 / g.n() as f64
                },
                edge_count: g.edge_count(),
                inter_cluster_edges: inter,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_clusters() -> Coords {
        let mut pts = Vec::new();
        for k in 0..6 {
            let t = k as f64;
            pts.push((2.0 * t % 10.0, (3.0 * t) % 10.0));
        }
        for k in 0..6 {
            let t = k as f64;
            pts.push((500.0 + (7.0 * t) % 10.0, (5.0 * t) % 10.0));
        }
        Coords::Planar(pts)
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(haversine_km((10.0, 20.0), (10.0, 20.0)), 0.0);
        // one degree of latitude along a meridian
        let d = haversine_km((0.0, 0.0), (1.0, 0.0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::PI / 180.0).abs() < 1e-9);
        // antipodes
        let d = haversine_km((0.0, 0.0), (0.0, 180.0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn coincident_nodes_give_unit_edge() {
        let c = Coords::Planar(vec![(1.0, 1.0), (1.0, 1.0)]);
        let g = gaussian_kernel_adjacency(&c, 5.0, 0.1).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].w, 1.0);
    }

    #[test]
    fn kernel_errors_and_tiny_inputs() {
        let c = Coords::Planar(vec![(0.0, 0.0)]);
        assert!(gaussian_kernel_adjacency(&c, 0.0, 0.1).is_err());
        assert!(gaussian_kernel_adjacency(&c, 1.0, 1.0).is_err());
        assert_eq!(gaussian_kernel_adjacency(&c, 1.0, 0.1).unwrap().edge_count(), 0);
    }

    #[test]
    fn kernel_weights_match_formula() {
        let c = two_clusters();
        let g = gaussian_kernel_adjacency(&c, 20.0, 0.1).unwrap();
        for e in g.edges() {
            let d = c.distance(e.i, e.j);
            assert!((e.w - (-(d * d) / 400.0).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_cluster_block_structure() {
        let c = two_clusters();
        let clusters = single_linkage_clusters(&c, 80.0);
        let inter = |g: &Graph| g.edges().iter().filter(|e| clusters[e.i] != clusters[e.j]).count();
        assert_eq!(inter(&gaussian_kernel_adjacency(&c, 20.0, 0.1).unwrap()), 0);
        assert!(inter(&gaussian_kernel_adjacency(&c, 400.0, 0.1).unwrap()) > 0);
    }

    #[test]
    fn wide_bandwidth_on_one_cluster_is_complete() {
        let c = Coords::Planar((0..7).map(|k| (k as f64, (k * k) as f64 % 5.0)).collect());
        let maxd = pairwise_distances(&c).into_iter().fold(0.0, f64::max);
        let rows = bandwidth_ablation(&c, &[BandwidthRule::Fixed(10.0 * maxd)], 0.1, 80.0).unwrap();
        assert_eq!(rows[0].component_count, 1);
        assert_eq!(rows[0].edge_count, 21);
    }

    #[test]
    fn std_rule_requires_nodes() {
        let c = two_clusters();
        assert!(BandwidthRule::StdOfSubset(vec![]).resolve(&c).is_err());
        let v = BandwidthRule::StdOfSubset(vec![0, 1]).resolve(&c).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn percentile_rule_interpolates() {
        let c = Coords::Planar(vec![(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]);
        // distances 1, 2, 3
        assert_eq!(BandwidthRule::Percentile(50.0).resolve(&c).unwrap(), 2.0);
        assert_eq!(BandwidthRule::Percentile(75.0).resolve(&c).unwrap(), 2.5);
    }

    #[test]
    fn sweep_component_count_non_increasing() {
        let c = two_clusters();
        let rules: Vec<_> = (0..30)
            .map(|k| BandwidthRule::Fixed(2.0 * 1.3f64.powi(k)))
            .collect();
        let rows = bandwidth_ablation(&c, &rules, 0.1, 80.0).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].component_count <= w[0].component_count);
        }
        assert_eq!(rows.last().unwrap().component_count, 1);
    }

    #[test]
    fn linkage_boundary_and_chain() {
        let c = Coords::Planar(vec![(0.0, 0.0), (80.0, 0.0)]);
        assert_eq!(single_linkage_clusters(&c, 80.0), vec![0, 0]);
        let c = Coords::Planar(vec![(0.0, 0.0), (0.9, 0.0), (1.8, 0.0)]);
        assert_eq!(single_linkage_clusters(&c, 1.0), vec![0, 0, 0]);
        assert_eq!(single_linkage_clusters(&c, 0.5), vec![0, 1, 2]);
    }

    fn arb_coords() -> impl Strategy<Value = Coords> {
        prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..25).prop_map(Coords::Planar)
    }

    proptest! {
        #[test]
        fn kernel_edges_monotone_in_bandwidth(c in arb_coords(), t1 in 1.0f64..50.0, f in 1.0f64..4.0, tau in 0.0f64..0.9) {
            let g1 = gaussian_kernel_adjacency(&c, t1, tau).unwrap();
            let g2 = gaussian_kernel_adjacency(&c, t1 * f, tau).unwrap();
            g1.validate().unwrap();
            g2.validate().unwrap();
            for e in g1.edges() {
                prop_assert!(g2.has_edge(e.i, e.j));
            }
        }

        #[test]
        fn linkage_equals_cutoff_components(c in arb_coords(), cut in 1.0f64..60.0) {
            let ids = single_linkage_clusters(&c, cut);
            // brute-force: repeated relaxation of minimum labels
            let n = c.len();
            let mut lab: Vec<usize> = (0..n).collect();
            loop {
                let mut changed = false;
                for i in 0..n {
                    for j in 0..n {
                        if i != j && c.distance(i, j) <= cut && lab[j] < lab[i] {
                            lab[i] = lab[j];
                            changed = true;
                        }
                    }
                }
                if !changed { break; }
            }
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(ids[i] == ids[j], lab[i] == lab[j]);
                }
            }
        }
    }
}
