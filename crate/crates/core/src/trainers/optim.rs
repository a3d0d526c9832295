use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine { t_max: usize, eta_min: f64 },
}

impl LrSchedule {
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { t_max, eta_min } => {
                let frac = if t_max == 0 {
                    1.0
                } else {
                    epoch.min(t_max) as f64 / t_max as f64
                };
                eta_min + 0.5 * (base - eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// SGD or Adam over a fixed list of tensors, with coupled weight decay.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, shapes: &[Tensor]) -> Self {
        let zeros = || shapes.iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            kind,
            weight_decay,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let (bc1, bc2) = (1.0 - BETA1.powi(self.t), 1.0 - BETA2.powi(self.t));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] + self.weight_decay * *x;
                match self.kind {
                    OptimizerKind::Sgd => *x -= lr * gi,
                    OptimizerKind::Adam => {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                        *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales `grads` to norm `max` when above it; returns the pre-clip norm.
pub fn clip_global(grads: &mut [Vec<f64>], max: Option<f64>) -> f64 {
    let norm = global_norm(grads);
    if let Some(c) = max {
        if norm > c && norm > 0.0 {
            let s = c / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Outcome of one inner loop on a fixed batch.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerOutcome {
    pub first_loss: f64,
    /// Pre-clip gradient norm per step.
    pub norms: Vec<f64>,
    /// Step whose loss was non-finite, if any.
    pub failed_at: Option<usize>,
}

/// Runs `steps` optimizer steps, each from a fresh gradient `grad(params, step)`
/// returning `(loss, grads)`.
pub fn inner_loop<F>(
    params: &mut [Tensor],
    opt: &mut Optimizer,
    steps: usize,
    lr: f64,
    clip: Option<f64>,
    mut grad: F,
) -> Result<InnerOutcome>
where
    F: FnMut(&[Tensor], usize) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let mut out = InnerOutcome {
        first_loss: f64::NAN,
        norms: Vec::with_capacity(steps),
        failed_at: None,
    };
    for s in 0..steps {
        let (loss, mut g) = grad(params, s)?;
        if s == 0 {
            out.first_loss = loss;
        }
        if !loss.is_finite() {
            out.failed_at = Some(s);
            break;
        }
        out.norms.push(clip_global(&mut g, clip));
        opt.step(params, &g, lr);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_grad(h: &[f64]) -> impl Fn(&[Tensor], usize) -> Result<(f64, Vec<Vec<f64>>)> + '_ {
        move |p, _| {
            let x = p[0].data();
            let g: Vec<f64> = x.iter().zip(h).map(|(a, b)| a * b).collect();
            let l = 0.5 * x.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            Ok((l, vec![g]))
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine { t_max: 10, eta_min: 0.1 };
        assert_eq!(s.lr(1.0, 0), 1.0);
        assert!((s.lr(1.0, 10) - 0.1).abs() < 1e-15);
        assert!((s.lr(1.0, 5) - 0.55).abs() < 1e-15);
        assert_eq!(s.lr(1.0, 50), s.lr(1.0, 10));
        assert_eq!(LrSchedule::Constant.lr(0.3, 7), 0.3);
    }

    #[test]
    fn sgd_matches_hand_update() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &p);
        opt.step(&mut p, &[vec![0.5, 0.5]], 0.2);
        assert!((p[0].data()[0] - (1.0 - 0.2 * (0.5 + 0.1))).abs() < 1e-15);
        assert!((p[0].data()[1] - (-2.0 - 0.2 * (0.5 - 0.2))).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut p = vec![Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap()];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, &p);
        opt.step(&mut p, &[vec![3.0, -0.01, 0.0]], 0.1);
        assert!((p[0].data()[0] + 0.1).abs() < 1e-6);
        assert!((p[0].data()[1] - 0.1).abs() < 1e-5);
        assert_eq!(p[0].data()[2], 0.0);
    }

    #[test]
    fn clipping_records_pre_clip_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global(&mut g, Some(1.0)), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        let mut g = vec![vec![0.3, 0.4]];
        assert_eq!(clip_global(&mut g, Some(1.0)), 0.5);
        assert_eq!(g, vec![vec![0.3, 0.4]]);
    }

    #[test]
    fn quadratic_norms_decrease_within_batch() {
        let h = [1.0, 0.5, 0.0];
        let mut p = vec![Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap()];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0, &p);
        let out = inner_loop(&mut p, &mut opt, 8, 0.1, None, quad_grad(&h)).unwrap();
        assert_eq!(out.norms.len(), 8);
        assert!(out.norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_lr_gives_constant_norms() {
        let h = [2.0, 1.0];
        let mut p = vec![Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0, &p);
        let out = inner_loop(&mut p, &mut opt, 5, 0.0, None, quad_grad(&h)).unwrap();
        assert!(out.norms.iter().all(|&n| n == out.norms[0]));
    }

    #[test]
    fn non_finite_loss_stops_loop() {
        let mut p = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0, &p);
        let out = inner_loop(&mut p, &mut opt, 5, 0.1, None, |_, s| {
            Ok((if s == 2 { f64::NAN } else { 1.0 }, vec![vec![1.0]]))
        })
        .unwrap();
        assert_eq!(out.failed_at, Some(2));
        assert_eq!(out.norms.len(), 2);
    }
}
