use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::spectral::eigen_sym;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgrRow {
    pub eta: f64,
    pub steps: usize,
    /// ‖θ_T − flow of L at Tη‖
    pub dev_plain: f64,
    /// ‖θ_T − flow of L + (η/4)‖Hθ‖² at Tη‖
    pub dev_modified: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgrReport {
    pub rows: Vec<IgrRow>,
    /// Least-squares slopes of log deviation against log η.
    pub slope_plain: f64,
    pub slope_modified: f64,
}

fn matvec(h: &Tensor, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| (0..n).map(|j| h.get2(i, j) * x[j]).sum()).collect()
}

/// Classic RK4 for dθ/dt = −(Hθ + c·H²θ).
fn rk4_flow(h: &Tensor, theta0: &[f64], c: f64, t: f64, max_dt: f64) -> Vec<f64> {
    let field = |x: &[f64]| -> Vec<f64> {
        let hx = matvec(h, x);
        let hhx = matvec(h, &hx);
        hx.iter().zip(&hhx).map(|(a, b)| -(a + c * b)).collect()
    };
    let n_sub = (t / max_dt).ceil().max(1.0) as usize;
    let dt = t / n_sub as f64;
    let mut x = theta0.to_vec();
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for _ in 0..n_sub {
        let k1 = field(&x);
        let k2 = field(&axpy(&x, &k1, dt / 2.0));
        let k3 = field(&axpy(&x, &k2, dt / 2.0));
        let k4 = field(&axpy(&x, &k3, dt));
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Gradient descent on ½θᵀHθ against the plain and the modified gradient
/// flow, compared at the common time Tη ≈ `horizon` for every η.
pub fn igr_oracle(h: &Tensor, theta0: &[f64], etas: &[f64], horizon: f64) -> Result<IgrReport> {
    let (n, m) = h.dims2()?;
    if n != m || theta0.len() != n {
        return Err(Error::InvalidArgument("H must be square and match θ0".into()));
    }
    if etas.len() < 2 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("need at least two step sizes and a positive horizon".into()));
    }
    let eig = eigen_sym(h, false)?;
    let lmin = eig.values[0];
    let lmax = eig.values[n - 1];
    if lmin <= 0.0 {
        return Err(Error::InvalidArgument(format!("H is not positive definite (λ_min = {})", lmin)));
    }
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        if !(eta > 0.0) || eta * lmax >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "step size {} must satisfy 0 < η < 1/λ_max = {}",
                eta,
                1.0 / lmax
            )));
        }
        let steps = (horizon / eta).round().max(1.0) as usize;
        let t = steps as f64 * eta;
        let mut x = theta0.to_vec();
        for _ in 0..steps {
            let g = matvec(h, &x);
            for (xi, gi) in x.iter_mut().zip(g) {
                *xi -= eta * gi;
            }
        }
        let max_dt = eta.min(0.01) / 4.0;
        let plain = rk4_flow(h, theta0, 0.0, t, max_dt);
        let modified = rk4_flow(h, theta0, eta / 2.0, t, max_dt);
        rows.push(IgrRow {
            eta,
            steps,
            dev_plain: dist(&x, &plain),
            dev_modified: dist(&x, &modified),
        });
    }
    let le: Vec<f64> = rows.iter().map(|r| r.eta.ln()).collect();
    let lp: Vec<f64> = rows.iter().map(|r| r.dev_plain.ln()).collect();
    let lm: Vec<f64> = rows.iter().map(|r| r.dev_modified.ln()).collect();
    Ok(IgrReport {
        slope_plain: ls_slope(&le, &lp),
        slope_modified: ls_slope(&le, &lm),
        rows,
    })
}

/// Step sizes 1/N for N log-spaced between `1/hi` and `1/lo`, so that every
/// horizon of 1 is hit exactly.
pub fn log_spaced_etas(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| {
            let f = k as f64 / (count - 1) as f64;
            let eta = (lo.ln() + f * (hi.ln() - lo.ln())).exp();
            1.0 / (1.0 / eta).round()
        })
        .collect()
}
