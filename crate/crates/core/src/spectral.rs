//! Normalized-Laplacian spectra, the spatial message-passing matrix and its
//! mixing rate, and Dirichlet energy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Tensor};
use crate::error::{Error, Result};
use crate::graph::{connected_components, Graph};

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column k is the unit eigenvector for `values[k]`.
    pub vectors: Option<Tensor>,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn eigen_sym(m: &Tensor, want_vectors: bool) -> Result<Eigen> {
    let (n, c) = m.dims2()?;
    if n != c {
        return Err(Error::InvalidShape {
            op: "eigen_sym",
            msg: format!("matrix must be square, got {:?}", m.shape()),
        });
    }
    let mut a = m.data().to_vec();
    let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let fro = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = if want_vectors {
        Tensor::eye(n).into_data()
    } else {
        Vec::new()
    };
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() <= JACOBI_TOL * fro {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                if want_vectors {
                    for k in 0..n {
                        let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                        v[k * n + p] = cs * vkp - sn * vkq;
                        v[k * n + q] = sn * vkp + cs * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = if want_vectors {
        let mut out = vec![0.0; n * n];
        for (col, &k) in order.iter().enumerate() {
            for r in 0..n {
                out[r * n + col] = v[r * n + k];
            }
        }
        Some(Tensor::new(vec![n, n], out)?)
    } else {
        None
    };
    Ok(Eigen { values, vectors })
}

fn positive_part(g: &Graph) -> Result<Graph> {
    g.with_edges(g.edges().iter().filter(|e| e.w > 0.0).map(|e| (e.i, e.j, e.w)))
}

/// D^{-1/2} A D^{-1/2} of `g` (zero-degree rows stay zero).
pub fn sym_normalized_adjacency(g: &Graph) -> Tensor {
    let n = g.n();
    let d = g.degrees();
    let mut a = Tensor::zeros(&[n, n]);
    for e in g.edges() {
        let v = e.w / (d[e.i] * d[e.j]).sqrt();
        a.set2(e.i, e.j, v);
        a.set2(e.j, e.i, v);
    }
    a
}

fn laplacian_of(g: &Graph) -> Tensor {
    let n = g.n();
    let mut l = sym_normalized_adjacency(g);
    for x in l.data_mut() {
        *x = -*x;
    }
    for i in 0..n {
        l.set2(i, i, 1.0);
    }
    l
}

/// I − D^{-1/2} A D^{-1/2}. Zero-degree nodes are dropped; with `lcc_only`
/// only the largest connected component is kept. Returns the matrix and the
/// retained node indices (ascending).
pub fn normalized_laplacian(g: &Graph, lcc_only: bool) -> Result<(Tensor, Vec<usize>)> {
    let gp = positive_part(g)?;
    let nodes: Vec<usize> = if lcc_only {
        let rep = connected_components(&gp);
        if rep.lcc_nodes.len() < 2 {
            return Err(Error::Undefined(
                "largest connected component has fewer than two nodes".into(),
            ));
        }
        rep.lcc_nodes
    } else {
        let deg = gp.degrees();
        (0..gp.n()).filter(|&v| deg[v] > 0.0).collect()
    };
    let sub = gp.subgraph(&nodes)?;
    Ok((laplacian_of(&sub), nodes))
}

/// Normalized-Laplacian eigenvalues of a graph, computed per connected
/// component. Each component's smallest eigenvalue is its exact zero (kernel
/// vector D^{1/2}1); isolated nodes contribute a zero each.
pub fn laplacian_spectrum(g: &Graph) -> Result<Vec<f64>> {
    let gp = positive_part(g)?;
    let rep = connected_components(&gp);
    let mut out = Vec::with_capacity(g.n());
    for id in 0..rep.component_count {
        let nodes: Vec<usize> = (0..g.n()).filter(|&v| rep.labels[v] == id).collect();
        if nodes.len() == 1 {
            out.push(0.0);
            continue;
        }
        let sub = gp.subgraph(&nodes)?;
        let mut ev = eigen_sym(&laplacian_of(&sub), false)?.values;
        ev[0] = 0.0;
        out.extend(ev);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Trimmed spectral range λ_(⌈(1−ε)m⌉) − λ_(⌊εm⌋+1) over ascending values.
pub fn w_eps(sorted: &[f64], eps: f64) -> Option<f64> {
    let m = sorted.len();
    if m < 3 {
        return None;
    }
    let hi = (((1.0 - eps) * m as f64) - 1e-9).ceil() as usize;
    let lo = ((eps * m as f64) + 1e-9).floor() as usize + 1;
    let (hi, lo) = (hi.clamp(1, m), lo.clamp(1, m));
    Some(sorted[hi - 1] - sorted[lo - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// LCC normalized-Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub lcc_size: usize,
    pub lambda2: f64,
    pub eps: f64,
    /// `None` when the LCC has fewer than three nodes.
    pub w_eps: Option<f64>,
    pub whole_graph_lambda2: f64,
    pub zero_degree_nodes: usize,
}

pub fn spectral_report(g: &Graph, eps: f64) -> Result<SpectrumReport> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument(format!("eps must be in (0, 0.5), got {}", eps)));
    }
    let gp = positive_part(g)?;
    let rep = connected_components(&gp);
    if rep.lcc_nodes.len() < 2 {
        return Err(Error::Undefined("graph has no edges".into()));
    }
    let lcc = gp.subgraph(&rep.lcc_nodes)?;
    let mut eigenvalues = eigen_sym(&laplacian_of(&lcc), false)?.values;
    eigenvalues[0] = 0.0;
    let whole = laplacian_spectrum(&gp)?;
    let deg = gp.degrees();
    Ok(SpectrumReport {
        lcc_size: rep.lcc_nodes.len(),
        lambda2: eigenvalues[1],
        eps,
        w_eps: w_eps(&eigenvalues, eps),
        whole_graph_lambda2: whole.get(1).copied().unwrap_or(0.0),
        zero_degree_nodes: deg.iter().filter(|&&d| d == 0.0).count(),
        eigenvalues,
    })
}

/// One eigenvalue per line, for plotting.
pub fn eigenvalues_csv(values: &[f64]) -> String {
    let mut s = String::from("index,eigenvalue\n");
    for (k, v) in values.iter().enumerate() {
        s.push_str(&format!("{},{}\n", k, v));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// D^{-1/2} A D^{-1/2}
    Symmetric,
    /// D^{-1} A
    RowStochastic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpatialMpMatrix {
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    /// LCC nodes the matrix is indexed by.
    pub nodes: Vec<usize>,
    /// αI + c1·diag(Âᵀ1) + c2·Â on the LCC.
    pub matrix: Tensor,
    pub lambda2: f64,
    /// Mean of Âᵀ1.
    pub mean_degree: f64,
    pub delta: f64,
    pub sigma1_bar: f64,
    pub sigma2_bar: f64,
    pub rho_eff: f64,
}

/// (σ̄₂ + δ)/(σ̄₁ − δ) with σ̄₁ = a + c2 and σ̄₂ = a + c2 − c2·λ2, where `a` is
/// the total identity coefficient.
pub fn rho_eff(a: f64, c2: f64, lambda2: f64, delta: f64) -> f64 {
    let s1 = a + c2;
    let s2 = a + c2 - c2 * lambda2;
    (s2 + delta) / (s1 - delta)
}

/// Builds S on the LCC. The mean of c1·diag(Âᵀ1) acts as part of the
/// identity term when forming σ̄ (only its deviation δ is a perturbation);
/// with c1 = 0 this is σ̄₁ = α + c2.
pub fn spatial_mp(g: &Graph, alpha: f64, c1: f64, c2: f64, norm: Normalization) -> Result<SpatialMpMatrix> {
    if ![alpha, c1, c2].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite coefficient".into()));
    }
    let gp = positive_part(g)?;
    let rep = connected_components(&gp);
    if rep.lcc_nodes.len() < 2 {
        return Err(Error::Undefined("empty largest connected component".into()));
    }
    let lcc = gp.subgraph(&rep.lcc_nodes)?;
    let n = lcc.n();
    let a_hat = match norm {
        Normalization::Symmetric => sym_normalized_adjacency(&lcc),
        Normalization::RowStochastic => {
            let mut a = lcc.adjacency();
            let d = lcc.degrees();
            for i in 0..n {
                for j in 0..n {
                    let v = a.get2(i, j) / d[i];
                    a.set2(i, j, v);
                }
            }
            a
        }
    };
    let colsum: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a_hat.get2(i, j)).sum()).collect();
    let mean = colsum.iter().sum::<f64>() / n as f64;
    let uniform = colsum.iter().all(|&c| c == colsum[0]);
    let delta = if uniform {
        0.0
    } else {
        c1 * colsum.iter().map(|c| (c - mean).abs()).fold(0.0, f64::max)
    };
    let mut s = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let mut v = c2 * a_hat.get2(i, j);
            if i == j {
                v += alpha + c1 * colsum[i];
            }
            s.set2(i, j, v);
        }
    }
    let mut ev = eigen_sym(&laplacian_of(&lcc), false)?.values;
    ev[0] = 0.0;
    let lambda2 = ev[1];
    let a_tot = alpha + c1 * mean;
    Ok(SpatialMpMatrix {
        alpha,
        c1,
        c2,
        nodes: rep.lcc_nodes,
        matrix: s,
        lambda2,
        mean_degree: mean,
        delta,
        sigma1_bar: a_tot + c2,
        sigma2_bar: a_tot + c2 - c2 * lambda2,
        rho_eff: rho_eff(a_tot, c2, lambda2, delta),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTable {
    /// sup_{u,v} |(S^K)_{uv}/σ₁^K − φ₁φ₁ᵀ|, for K = 1..=K_max.
    pub residuals: Vec<f64>,
    pub rho_eff: f64,
    /// C·ρ_eff^K with C fitted at K = 1.
    pub bound: Vec<f64>,
    pub within_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tightening {
    NotApplicable(String),
    Checked {
        original: ResidualTable,
        improved: ResidualTable,
        /// improved.residuals[K] ≤ original.residuals[K] for every K.
        dominated: bool,
    },
}

/// Residuals of normalized powers of S against the dominant-eigenpair limit.
pub fn residual_table(sp: &SpatialMpMatrix, k_max: usize) -> Result<Option<ResidualTable>> {
    let n = sp.matrix.shape()[0];
    let eig = eigen_sym(&sp.matrix, true)?;
    let vecs = eig.vectors.expect("requested");
    let top = eig.values[n - 1];
    let others = eig.values[..n - 1]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let gap_tol = 1e-9 * top.abs().max(1.0);
    if !(top > 0.0) || top - others <= gap_tol {
        return Ok(None);
    }
    let phi: Vec<f64> = (0..n).map(|r| vecs.get2(r, n - 1)).collect();
    let scaled: Vec<f64> = sp.matrix.data().iter().map(|v| v / top).collect();
    let mut pow = scaled.clone();
    let mut residuals = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        if k > 1 {
            let mut next = vec![0.0; n * n];
            kernels::matmul(&pow, &scaled, &mut next, n, n, n);
            pow = next;
        }
        let mut sup = 0.0f64;
        for u in 0..n {
            for v in 0..n {
                sup = sup.max((pow[u * n + v] - phi[u] * phi[v]).abs());
            }
        }
        residuals.push(sup);
    }
    let c = residuals.first().copied().unwrap_or(0.0) / sp.rho_eff;
    let bound: Vec<f64> = (1..=k_max).map(|k| c * sp.rho_eff.powi(k as i32)).collect();
    let within_bound = residuals
        .iter()
        .zip(&bound)
        .all(|(r, b)| *r <= b * (1.0 + 1e-9) + 1e-12);
    Ok(Some(ResidualTable {
        residuals,
        rho_eff: sp.rho_eff,
        bound,
        within_bound,
    }))
}

/// Checks the spectral tightening claim for an original graph `g` and an
/// improved graph `g_prime` on the same nodes.
pub fn verify_tightening(
    g: &Graph,
    g_prime: &Graph,
    alpha: f64,
    c1: f64,
    c2: f64,
    k_max: usize,
) -> Result<Tightening> {
    if g.n() != g_prime.n() {
        return Err(Error::InvalidArgument(format!(
            "node sets differ: {} vs {}",
            g.n(),
            g_prime.n()
        )));
    }
    let s = spatial_mp(g, alpha, c1, c2, Normalization::Symmetric)?;
    let sp = spatial_mp(g_prime, alpha, c1, c2, Normalization::Symmetric)?;
    if s.nodes != sp.nodes {
        return Ok(Tightening::NotApplicable("largest components differ".into()));
    }
    if sp.lambda2 < s.lambda2 - 1e-12 {
        return Ok(Tightening::NotApplicable(format!(
            "lambda2 decreases ({} -> {})",
            s.lambda2, sp.lambda2
        )));
    }
    if sp.delta > s.delta + 1e-12 {
        return Ok(Tightening::NotApplicable(format!(
            "degree heterogeneity increases ({} -> {})",
            s.delta, sp.delta
        )));
    }
    let (Some(original), Some(improved)) = (residual_table(&s, k_max)?, residual_table(&sp, k_max)?) else {
        return Ok(Tightening::NotApplicable(
            "dominant eigenvalue is not simple and strictly dominant".into(),
        ));
    };
    let dominated = improved
        .residuals
        .iter()
        .zip(&original.residuals)
        .all(|(a, b)| *a <= b + 1e-12);
    Ok(Tightening::Checked {
        original,
        improved,
        dominated,
    })
}

/// tr(XᵀL̃X)/tr(XᵀX). Zero-degree nodes contribute nothing to the numerator.
pub fn dirichlet_energy(g: &Graph, x: &Tensor) -> Result<f64> {
    let (r, k) = x.dims2()?;
    if r != g.n() {
        return Err(Error::InvalidArgument(format!(
            "feature rows {} do not match {} nodes",
            r,
            g.n()
        )));
    }
    let den: f64 = x.data().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Undefined("Dirichlet energy of an all-zero signal".into()));
    }
    let gp = positive_part(g)?;
    let d = gp.degrees();
    let mut num = 0.0;
    for e in gp.edges() {
        let (si, sj) = (d[e.i].sqrt(), d[e.j].sqrt());
        for c in 0..k {
            let diff = x.get2(e.i, c) / si - x.get2(e.j, c) / sj;
            num += e.w * diff * diff;
        }
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn complete(n: usize) -> Graph {
        let mut e = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                e.push((i, j, 1.0));
            }
        }
        Graph::new(n, e).unwrap()
    }

    fn cycle(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n, 1.0))).unwrap()
    }

    fn path(n: usize) -> Graph {
        Graph::new(n, (0..n - 1).map(|i| (i, i + 1, 1.0))).unwrap()
    }

    fn random_sym(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(-1.0..1.0);
                m.set2(i, j, v);
                m.set2(j, i, v);
            }
        }
        m
    }

    #[test]
    fn eigen_small_cases() {
        let d = Tensor::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(eigen_sym(&d, false).unwrap().values, vec![-1.0, 2.0, 3.0]);
        let m = Tensor::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let ev = eigen_sym(&m, false).unwrap().values;
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        let bad = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(eigen_sym(&bad, false), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn eigen_trace_and_reconstruction() {
        for seed in 0..5 {
            let m = random_sym(20, seed);
            let e = eigen_sym(&m, true).unwrap();
            let tr: f64 = (0..20).map(|i| m.get2(i, i)).sum();
            assert!((tr - e.values.iter().sum::<f64>()).abs() < 1e-9);
            let q = e.vectors.unwrap();
            let mut recon = Tensor::zeros(&[20, 20]);
            for i in 0..20 {
                for j in 0..20 {
                    let v: f64 = (0..20).map(|k| q.get2(i, k) * e.values[k] * q.get2(j, k)).sum();
                    recon.set2(i, j, v);
                }
            }
            let diff: f64 = recon.data().iter().zip(m.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(diff / m.norm() < 1e-8);
        }
    }

    #[test]
    fn laplacian_spectra_analytic() {
        let (l, nodes) = normalized_laplacian(&path(2), true).unwrap();
        assert_eq!(nodes, vec![0, 1]);
        let ev = eigen_sym(&l, false).unwrap().values;
        assert!(ev[0].abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
        let ev = laplacian_spectrum(&path(3)).unwrap();
        for (a, b) in ev.iter().zip([0.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        for n in 3..=10 {
            let r = spectral_report(&complete(n), 0.05).unwrap();
            assert!((r.lambda2 - n as f64 / (n - 1) as f64).abs() < 1e-9);
        }
        assert!(normalized_laplacian(&Graph::empty(4), true).is_err());
    }

    #[test]
    fn disconnected_whole_graph_gap_is_zero() {
        let g = Graph::new(6, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0)]).unwrap();
        let r = spectral_report(&g, 0.05).unwrap();
        assert_eq!(r.whole_graph_lambda2, 0.0);
        assert_eq!(r.lcc_size, 3);
        assert!((r.lambda2 - 1.5).abs() < 1e-12);
        let r = spectral_report(&Graph::new(3, [(0, 1, 1.0)]).unwrap(), 0.05).unwrap();
        assert_eq!(r.zero_degree_nodes, 1);
        assert_eq!(r.w_eps, None);
    }

    #[test]
    fn w_eps_convention() {
        let v: Vec<f64> = (0..20).map(|k| k as f64 / 10.0).collect();
        // ε = 0.05, m = 20: λ_(19) − λ_(2)
        assert!((w_eps(&v, 0.05).unwrap() - (1.8 - 0.1)).abs() < 1e-12);
        assert!((w_eps(&v, 1e-6).unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(w_eps(&v[..2], 0.05), None);
    }

    #[test]
    fn lcc_spectrum_ignores_bridges_between_small_components() {
        let base = Graph::new(8, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0), (4, 5, 1.0), (6, 7, 1.0)]).unwrap();
        let joined = base.with_edges(base.edges().iter().map(|e| (e.i, e.j, e.w)).chain([(5, 6, 1.0)])).unwrap();
        let a = spectral_report(&base, 0.05).unwrap();
        let b = spectral_report(&joined, 0.05).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
    }

    #[test]
    fn rho_eff_formula_cases() {
        assert_eq!(rho_eff(0.7, 0.3, 0.0, 0.0), 1.0);
        assert_eq!(rho_eff(0.5, 0.5, 1.0, 0.0), 0.5);
        let s = spatial_mp(&cycle(6), 0.5, 0.3, 0.5, Normalization::Symmetric).unwrap();
        assert_eq!(s.delta, 0.0);
        // entrywise definition
        let a = sym_normalized_adjacency(&cycle(6));
        for i in 0..6 {
            for j in 0..6 {
                let colsum: f64 = (0..6).map(|r| a.get2(r, j)).sum();
                let want = c_if(i == j, 0.5 + 0.3 * colsum) + 0.5 * a.get2(i, j);
                assert!((s.matrix.get2(i, j) - want).abs() < 1e-15);
            }
        }
    }

    fn c_if(b: bool, v: f64) -> f64 {
        if b {
            v
        } else {
            0.0
        }
    }

    #[test]
    fn rho_eff_decreases_in_lambda2() {
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let r = rho_eff(0.5, 0.5, k as f64 * 0.1, 0.05);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn tightening_identical_graphs() {
        let g = path(7);
        match verify_tightening(&g, &g, 0.5, 0.0, 0.5, 10).unwrap() {
            Tightening::Checked { original, improved, dominated } => {
                assert_eq!(original.residuals, improved.residuals);
                assert!(dominated);
            }
            other => panic!("{:?}", other),
        }
    }

    fn cycle_with(n: usize, extra: &[(usize, usize)]) -> Graph {
        let c = cycle(n);
        c.with_edges(c.edges().iter().map(|e| (e.i, e.j, e.w)).chain(extra.iter().map(|&(a, b)| (a, b, 1.0))))
            .unwrap()
    }

    #[test]
    fn single_diameter_chord_leaves_gap_unchanged() {
        // sin(πi/4) vanishes at both chord endpoints, so it stays a Fiedler vector
        let a = spectral_report(&cycle(8), 0.05).unwrap();
        let b = spectral_report(&cycle_with(8, &[(0, 4)]), 0.05).unwrap();
        assert!((a.lambda2 - b.lambda2).abs() < 1e-12);
    }

    #[test]
    fn tightening_cycle_plus_diameters() {
        let wagner = cycle_with(8, &[(0, 4), (1, 5), (2, 6), (3, 7)]);
        for (alpha, c1, c2) in [(0.5, 0.0, 0.5), (0.5, 0.2, 0.5)] {
            let t = verify_tightening(&cycle(8), &wagner, alpha, c1, c2, 10).unwrap();
            let Tightening::Checked { original, improved, dominated } = t else {
                panic!("{:?}", t)
            };
            assert!(dominated, "{:?} vs {:?}", improved.residuals, original.residuals);
            assert!(improved.rho_eff < original.rho_eff);
            assert!(original.within_bound && improved.within_bound);
            for r in [&original.residuals, &improved.residuals] {
                for w in r.windows(2).skip(1) {
                    assert!(w[1] <= w[0] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn tightening_rejects_worse_graph() {
        assert!(matches!(
            verify_tightening(&cycle(6), &path(6), 0.5, 0.0, 0.5, 10).unwrap(),
            Tightening::NotApplicable(_)
        ));
    }

    #[test]
    fn dirichlet_energy_cases() {
        let g = path(5);
        let d = g.degrees();
        let x = Tensor::new(vec![5, 1], d.iter().map(|v| v.sqrt()).collect()).unwrap();
        assert!(dirichlet_energy(&g, &x).unwrap().abs() < 1e-15);
        let (l, _) = normalized_laplacian(&g, true).unwrap();
        let e = eigen_sym(&l, true).unwrap();
        let q = e.vectors.unwrap();
        for k in 0..5 {
            let x = Tensor::new(vec![5, 1], (0..5).map(|r| q.get2(r, k)).collect()).unwrap();
            assert!((dirichlet_energy(&g, &x).unwrap() - e.values[k]).abs() < 1e-9);
        }
        assert!(dirichlet_energy(&g, &Tensor::zeros(&[5, 2])).is_err());
        // two disconnected triangles with D^{1/2}-scaled block indicators
        let two = Graph::new(6, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 2.0), (4, 5, 2.0), (3, 5, 2.0)]).unwrap();
        let d = two.degrees();
        let x = Tensor::new(vec![6, 2], (0..6).flat_map(|v| if v < 3 { [d[v].sqrt(), 0.0] } else { [0.0, 3.0 * d[v].sqrt()] }).collect()).unwrap();
        assert!(dirichlet_energy(&two, &x).unwrap().abs() < 1e-15);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (3usize..14, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut e = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < 0.4 {
                        e.push((i, j, rng.random_range(0.1..2.0)));
                    }
                }
            }
            Graph::new(n, e).unwrap()
        })
    }

    proptest! {
        #[test]
        fn spectrum_in_range(g in arb_graph()) {
            let ev = laplacian_spectrum(&g).unwrap();
            for v in ev {
                prop_assert!((-1e-9..=2.0 + 1e-9).contains(&v));
            }
        }

        #[test]
        fn dirichlet_scale_invariant(g in arb_graph(), s in 0.01f64..100.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::new(vec![g.n(), 2], (0..2 * g.n()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = Tensor::new(vec![g.n(), 2], x.data().iter().map(|v| v * s).collect()).unwrap();
            let (a, b) = (dirichlet_energy(&g, &x).unwrap(), dirichlet_energy(&g, &y).unwrap());
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            prop_assert!(a <= 2.0 + 1e-9);
        }
    }
}
