//! Vanilla, frozen-structure, bilevel and joint training loops with
//! per-step gradient instrumentation, plus the implicit-regularization
//! oracle.

mod igr;
mod optim;

pub use igr::{igr_oracle, log_spaced_etas, IgrReport, IgrRow};
pub use optim::{clip_global, global_norm, inner_loop, InnerOutcome, LrSchedule, Optimizer, OptimizerKind};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::{forward, loss, BackboneConfig, BackboneKind, GraphParam, LossKind, Materialize, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    FrozenPhi,
    Bilevel,
    E2eJoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Persistent θ; T steps on each training batch.
    MinibatchReuse,
    /// θ reinitialized every outer iteration; T full-batch steps.
    FullbatchReset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub regime: Regime,
    pub inner_steps: usize,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    /// Structure optimizer; `None` picks Adam for softmax and SGD for bernoulli.
    pub outer_optimizer: Option<OptimizerKind>,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    pub instrument: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Vanilla,
            regime: Regime::MinibatchReuse,
            inner_steps: 1,
            warmup_epochs: 0,
            epochs: 10,
            batch_size: 32,
            inner_lr: 1e-2,
            outer_lr: 1e-2,
            weight_decay: 0.0,
            grad_clip: Some(5.0),
            lr_schedule: LrSchedule::Constant,
            optimizer: OptimizerKind::Adam,
            outer_optimizer: None,
            seed: 42,
            early_stop_patience: None,
            instrument: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.inner_steps == 0 {
            return bad("inner_steps must be >= 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        for (name, v) in [
            ("inner_lr", self.inner_lr),
            ("outer_lr", self.outer_lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{} must be finite and >= 0, got {}", name, v));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {}", c));
            }
        }
        if self.regime == Regime::FullbatchReset && matches!(self.mode, Mode::Vanilla | Mode::E2eJoint) {
            return bad(format!(
                "mode {:?} runs with a persistent model and cannot use fullbatch_reset",
                self.mode
            ));
        }
        Ok(())
    }

    fn steps_per_batch(&self) -> usize {
        match self.mode {
            Mode::Vanilla | Mode::E2eJoint => 1,
            Mode::FrozenPhi | Mode::Bilevel => self.inner_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNormRow {
    pub epoch: usize,
    pub batch: usize,
    pub inner_step: usize,
    pub norm: f64,
}

/// One training run. Equality ignores `wall_time_s`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Mean first-inner-step training loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test metric of the best-validation checkpoint.
    pub test_metric: f64,
    pub phi: GraphParam,
    pub params: ModelParams,
    pub grad_norms: Option<Vec<GradNormRow>>,
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.train_loss == o.train_loss
            && self.val_metric == o.val_metric
            && self.best_epoch == o.best_epoch
            && self.best_val == o.best_val
            && self.test_metric == o.test_metric
            && self.phi == o.phi
            && self.params == o.params
            && self.grad_norms == o.grad_norms
            && self.failure == o.failure
    }
}

impl RunRecord {
    pub fn grad_norm_csv(&self) -> Option<String> {
        let rows = self.grad_norms.as_ref()?;
        let mut s = String::from("epoch,batch,inner_step,norm\n");
        for r in rows {
            writeln!(s, "{},{},{},{}", r.epoch, r.batch, r.inner_step, r.norm).expect("write to string");
        }
        Some(s)
    }
}

/// SplitMix64 over a sequence of words.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_VAL: u64 = 3;
const STREAM_OUTER: u64 = 4;

struct Batch {
    x: Tensor,
    y: Tensor,
    mask: Option<Vec<bool>>,
}

fn loss_kind(b: &BackboneConfig) -> LossKind {
    match b.kind {
        BackboneKind::GcnClassifier => LossKind::CrossEntropy,
        BackboneKind::DecoupledStgnn => LossKind::Mae,
    }
}

fn nc_batch(data: &Dataset, split: Split) -> Result<Batch> {
    let Dataset::Nc(d) = data else {
        unreachable!("checked by caller")
    };
    let n = d.graph.n();
    Ok(Batch {
        x: d.features().clone(),
        y: Tensor::new(vec![n, 1], d.labels().iter().map(|&c| c as f64).collect())?,
        mask: Some(d.mask(split)),
    })
}

fn train_batches(data: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
    match data {
        Dataset::Nc(_) => Ok(vec![nc_batch(data, Split::Train)?]),
        Dataset::St(d) => {
            let groups = match cfg.regime {
                Regime::FullbatchReset => vec![d.window_starts(Split::Train).collect()],
                Regime::MinibatchReuse => {
                    d.batch_iter(cfg.batch_size, mix_seed(&[cfg.seed, STREAM_SHUFFLE, epoch as u64]), Split::Train)
                }
            };
            groups
                .iter()
                .map(|g| {
                    let b = d.batch(g)?;
                    Ok(Batch {
                        x: b.x,
                        y: b.y,
                        mask: None,
                    })
                })
                .collect()
        }
    }
}

fn val_batch(data: &Dataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    match data {
        Dataset::Nc(_) => nc_batch(data, Split::Val),
        Dataset::St(d) => {
            let starts = d.window_starts(Split::Val);
            let k = batch_size.min(starts.len());
            let mut pick: Vec<usize> = sample(rng, starts.len(), k).into_iter().map(|i| starts.start + i).collect();
            pick.sort_unstable();
            let b = d.batch(&pick)?;
            Ok(Batch {
                x: b.x,
                y: b.y,
                mask: None,
            })
        }
    }
}

fn batch_loss(
    bb: &BackboneConfig,
    tape: &mut Tape,
    vars: &[Var],
    adj: Var,
    b: &Batch,
    dropout_seed: Option<u64>,
) -> Result<Var> {
    let x = tape.constant(b.x.clone());
    let out = forward(bb, tape, vars, adj, x, dropout_seed)?;
    let y = tape.constant(b.y.clone());
    loss(tape, out, y, loss_kind(bb), b.mask.as_deref())
}

fn grads(tape: &Tape, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
        })
        .collect()
}

fn theta_grad(bb: &BackboneConfig, p: &[Tensor], adj: &Tensor, b: &Batch, seed: u64) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = p.iter().map(|t| tape.param(t.clone())).collect();
    let a = tape.constant(adj.clone());
    let l = batch_loss(bb, &mut tape, &vars, a, b, Some(seed))?;
    let lv = tape.value(l).item();
    if !lv.is_finite() {
        return Ok((lv, Vec::new()));
    }
    tape.backward(l)?;
    Ok((lv, grads(&tape, &vars)))
}

/// One first-order outer step on `phi` from a validation batch; returns the
/// validation loss (averaged over samples for Bernoulli structure).
fn outer_step(
    bb: &BackboneConfig,
    params: &ModelParams,
    phi: &mut GraphParam,
    opt: &mut Optimizer,
    b: &Batch,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    let (lv, g) = match phi {
        GraphParam::SoftmaxReweight { .. } => {
            let mut tape = Tape::new();
            let vars = params.register_const(&mut tape);
            let (w, a) = phi.record(&mut tape)?;
            let l = batch_loss(bb, &mut tape, &vars, a, b, None)?;
            tape.backward(l)?;
            (tape.value(l).item(), grads(&tape, &[w]).remove(0))
        }
        GraphParam::Bernoulli { samples, .. } => {
            let s_count = *samples;
            let n = phi.n();
            let mut acc = vec![0.0; n * n];
            let mut total = 0.0;
            for s in 0..s_count {
                let m = phi.materialize(Materialize::Sampled(mix_seed(&[seed, s as u64])))?;
                let mut tape = Tape::new();
                let vars = params.register_const(&mut tape);
                let a = tape.param(m);
                let l = batch_loss(bb, &mut tape, &vars, a, b, None)?;
                tape.backward(l)?;
                total += tape.value(l).item();
                let st = GraphParam::straight_through(&grads(&tape, &[a])[0], n);
                for (x, y) in acc.iter_mut().zip(st) {
                    *x += y / s_count as f64;
                }
            }
            (total / s_count as f64, acc)
        }
    };
    if !lv.is_finite() {
        return Ok(lv);
    }
    opt.step(std::slice::from_mut(phi.raw_mut()), &[g], lr);
    phi.project();
    Ok(lv)
}

/// Smaller is better: MAE on the normalized scale (forecasting) or error
/// rate in percent (classification).
pub fn evaluate(bb: &BackboneConfig, params: &ModelParams, adj: &Tensor, data: &Dataset, split: Split) -> Result<f64> {
    match data {
        Dataset::Nc(d) => {
            let mut tape = Tape::new();
            let vars = params.register_const(&mut tape);
            let a = tape.constant(adj.clone());
            let x = tape.constant(d.features().clone());
            let out = forward(bb, &mut tape, &vars, a, x, None)?;
            let logits = tape.value(out);
            let k = logits.shape()[1];
            let nodes = d.nodes(split);
            if nodes.is_empty() {
                return Err(Error::InvalidArgument("empty evaluation split".into()));
            }
            let wrong = nodes
                .iter()
                .filter(|&&v| {
                    let row = &logits.data()[v * k..(v + 1) * k];
                    let pred = row
                        .iter()
                        .enumerate()
                        .fold(0, |best, (c, &z)| if z > row[best] { c } else { best });
                    pred != d.labels()[v]
                })
                .count();
            Ok(100.0 * wrong as f64 / nodes.len() as f64)
        }
        Dataset::St(d) => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for g in d.batch_iter(128, 0, split) {
                let b = d.batch(&g)?;
                let mut tape = Tape::new();
                let vars = params.register_const(&mut tape);
                let a = tape.constant(adj.clone());
                let x = tape.constant(b.x);
                let out = forward(bb, &mut tape, &vars, a, x, None)?;
                sum += tape
                    .value(out)
                    .data()
                    .iter()
                    .zip(b.y.data())
                    .map(|(p, y)| (p - y).abs())
                    .sum::<f64>();
                count += b.y.numel();
            }
            Ok(sum / count as f64)
        }
    }
}

fn check_inputs(cfg: &TrainConfig, bb: &BackboneConfig, phi: &GraphParam, data: &Dataset) -> Result<()> {
    cfg.validate()?;
    bb.validate()?;
    match (bb.kind, data) {
        (BackboneKind::GcnClassifier, Dataset::Nc(d)) => {
            if d.features().shape()[1] != bb.in_dim || d.classes > bb.classes {
                return Err(Error::InvalidArgument(format!(
                    "backbone expects {} features / {} classes, dataset has {} / {}",
                    bb.in_dim,
                    bb.classes,
                    d.features().shape()[1],
                    d.classes
                )));
            }
        }
        (BackboneKind::DecoupledStgnn, Dataset::St(d)) => {
            if d.window != bb.window || d.horizon != bb.horizon {
                return Err(Error::InvalidArgument(format!(
                    "backbone window/horizon {}/{} differ from dataset {}/{}",
                    bb.window, bb.horizon, d.window, d.horizon
                )));
            }
        }
        _ => {
            return Err(Error::InvalidArgument(
                "backbone kind does not match the dataset task".into(),
            ))
        }
    }
    if phi.n() != data.n_nodes() {
        return Err(Error::InvalidArgument(format!(
            "structure has {} nodes, dataset has {}",
            phi.n(),
            data.n_nodes()
        )));
    }
    if cfg.mode == Mode::E2eJoint && !matches!(phi, GraphParam::SoftmaxReweight { .. }) {
        return Err(Error::InvalidArgument("e2e_joint needs the softmax parameterization".into()));
    }
    Ok(())
}

/// Trains one model. Configuration errors are returned as `Err`; a
/// non-finite loss ends the run early with `failure` set.
pub fn train(cfg: &TrainConfig, bb: &BackboneConfig, phi_init: &GraphParam, data: &Dataset) -> Result<RunRecord> {
    check_inputs(cfg, bb, phi_init, data)?;
    let start = Instant::now();
    let init = bb.init(cfg.seed)?;
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay, &params.tensors);
    let mut phi = phi_init.clone();
    let outer_kind = cfg.outer_optimizer.unwrap_or(match phi {
        GraphParam::SoftmaxReweight { .. } => OptimizerKind::Adam,
        GraphParam::Bernoulli { .. } => OptimizerKind::Sgd,
    });
    let mut phi_opt = Optimizer::new(outer_kind, 0.0, std::slice::from_ref(phi.raw()));
    let mut val_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, STREAM_VAL]));
    let reset = cfg.regime == Regime::FullbatchReset;
    let mut rec = RunRecord {
        config: cfg.clone(),
        train_loss: Vec::new(),
        val_metric: Vec::new(),
        best_epoch: 0,
        best_val: f64::INFINITY,
        test_metric: f64::NAN,
        phi: phi.clone(),
        params: params.clone(),
        grad_norms: cfg.instrument.then(Vec::new),
        failure: None,
        wall_time_s: 0.0,
    };

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.lr(cfg.inner_lr, epoch);
        if reset {
            params = init.clone();
            opt = Optimizer::new(cfg.optimizer, cfg.weight_decay, &params.tensors);
        }
        let batches = train_batches(data, cfg, epoch)?;
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let dropout = |s: usize| {
                if reset {
                    mix_seed(&[cfg.seed, STREAM_DROPOUT, s as u64])
                } else {
                    mix_seed(&[cfg.seed, STREAM_DROPOUT, epoch as u64, bi as u64, s as u64])
                }
            };
            let out = if cfg.mode == Mode::E2eJoint {
                let mut tape = Tape::new();
                let theta = params.register(&mut tape);
                let (w, a) = phi.record(&mut tape)?;
                let l = batch_loss(bb, &mut tape, &theta, a, batch, Some(dropout(0)))?;
                let lv = tape.value(l).item();
                let mut out = InnerOutcome {
                    first_loss: lv,
                    norms: Vec::new(),
                    failed_at: None,
                };
                if lv.is_finite() {
                    tape.backward(l)?;
                    let mut vars = theta.clone();
                    vars.push(w);
                    let mut g = grads(&tape, &vars);
                    out.norms.push(clip_global(&mut g, cfg.grad_clip));
                    let gw = g.pop().expect("phi gradient");
                    opt.step(&mut params.tensors, &g, lr);
                    phi_opt.step(std::slice::from_mut(phi.raw_mut()), &[gw], cfg.outer_lr);
                } else {
                    out.failed_at = Some(0);
                }
                out
            } else {
                let adj = phi.materialize(Materialize::Deterministic)?;
                inner_loop(&mut params.tensors, &mut opt, cfg.steps_per_batch(), lr, cfg.grad_clip, |p, s| {
                    theta_grad(bb, p, &adj, batch, dropout(s))
                })?
            };
            if let Some(rows) = rec.grad_norms.as_mut() {
                rows.extend(out.norms.iter().enumerate().map(|(s, &norm)| GradNormRow {
                    epoch,
                    batch: bi,
                    inner_step: s,
                    norm,
                }));
            }
            if let Some(s) = out.failed_at {
                rec.failure = Some(format!(
                    "non-finite training loss at epoch {} batch {} inner step {}",
                    epoch, bi, s
                ));
                break 'epochs;
            }
            loss_sum += out.first_loss;
            if cfg.mode == Mode::Bilevel && epoch >= cfg.warmup_epochs {
                let vb = val_batch(data, cfg.batch_size, &mut val_rng)?;
                let seed = mix_seed(&[cfg.seed, STREAM_OUTER, epoch as u64, bi as u64]);
                let vl = outer_step(bb, &params, &mut phi, &mut phi_opt, &vb, cfg.outer_lr, seed)?;
                if !vl.is_finite() {
                    rec.failure = Some(format!("non-finite validation loss at epoch {} batch {}", epoch, bi));
                    break 'epochs;
                }
            }
        }
        rec.train_loss.push(loss_sum / batches.len() as f64);
        let adj = phi.materialize(Materialize::Deterministic)?;
        let val = evaluate(bb, &params, &adj, data, Split::Val)?;
        rec.val_metric.push(val);
        if !val.is_finite() {
            rec.failure = Some(format!("non-finite validation metric at epoch {}", epoch));
            break;
        }
        if val < rec.best_val {
            rec.best_val = val;
            rec.best_epoch = epoch;
            rec.test_metric = evaluate(bb, &params, &adj, data, Split::Test)?;
            rec.phi = phi.clone();
            rec.params = params.clone();
        }
        if let Some(p) = cfg.early_stop_patience {
            if epoch - rec.best_epoch >= p {
                break;
            }
        }
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

#[cfg(test)]
mod tests;
