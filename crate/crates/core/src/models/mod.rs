//! Backbones (GCN classifier, decoupled STGNN), their parameters, losses and
//! the two graph parameterizations.

mod checkpoint;
mod graph_param;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph_param::{GraphParam, Materialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jacobian_block_norm, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    GcnClassifier,
    DecoupledStgnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub hidden: usize,
    /// Input feature width (GCN) or 1 (STGNN).
    pub in_dim: usize,
    /// GCN output classes.
    pub classes: usize,
    pub temporal_layers: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub spatial_layers: usize,
    /// Diffusion hops per spatial layer.
    pub hops: usize,
    pub dropout: f64,
    pub window: usize,
    pub horizon: usize,
}

impl BackboneConfig {
    pub fn gcn(in_dim: usize, hidden: usize, classes: usize, dropout: f64) -> Self {
        Self {
            kind: BackboneKind::GcnClassifier,
            hidden,
            in_dim,
            classes,
            temporal_layers: 0,
            kernel: 1,
            dilation: 1,
            spatial_layers: 2,
            hops: 1,
            dropout,
            window: 1,
            horizon: 1,
        }
    }

    pub fn stgnn(hidden: usize, window: usize, horizon: usize) -> Self {
        Self {
            kind: BackboneKind::DecoupledStgnn,
            hidden,
            in_dim: 1,
            classes: 0,
            temporal_layers: 1,
            kernel: 3,
            dilation: 1,
            spatial_layers: 1,
            hops: 2,
            dropout: 0.0,
            window,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("backbone: {}", m)));
        if self.hidden == 0 || self.in_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        match self.kind {
            BackboneKind::GcnClassifier => {
                if self.classes < 2 {
                    return bad("need at least two classes");
                }
            }
            BackboneKind::DecoupledStgnn => {
                if self.window == 0 || self.horizon == 0 {
                    return bad("horizons must be >= 1");
                }
                if self.kernel == 0 || self.dilation == 0 {
                    return bad("kernel and dilation must be >= 1");
                }
                if self.window <= self.temporal_span() {
                    return Err(Error::InvalidArgument(format!(
                        "window {} too short: temporal receptive field needs at least {} steps",
                        self.window,
                        self.temporal_span() + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Steps consumed by the temporal stack.
    pub fn temporal_span(&self) -> usize {
        self.temporal_layers * (self.kernel - 1) * self.dilation
    }

    /// Largest hop distance through which information can flow.
    pub fn hop_radius(&self) -> usize {
        match self.kind {
            BackboneKind::GcnClassifier => self.spatial_layers,
            BackboneKind::DecoupledStgnn => self.spatial_layers * self.hops,
        }
    }

    /// Shapes of the parameter tensors, in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        match self.kind {
            BackboneKind::GcnClassifier => vec![
                ("w1".into(), vec![self.in_dim, h]),
                ("b1".into(), vec![h]),
                ("w2".into(), vec![h, self.classes]),
                ("b2".into(), vec![self.classes]),
            ],
            BackboneKind::DecoupledStgnn => {
                let mut v = vec![("enc_w".into(), vec![1, h]), ("enc_b".into(), vec![h])];
                for l in 0..self.temporal_layers {
                    v.push((format!("t{}_w", l), vec![self.kernel, h, h]));
                    v.push((format!("t{}_b", l), vec![h]));
                }
                for l in 0..self.spatial_layers {
                    v.push((format!("s{}_w", l), vec![(2 * self.hops + 1) * h, h]));
                    v.push((format!("s{}_b", l), vec![h]));
                }
                let t_out = self.window - self.temporal_span();
                v.push(("out_w".into(), vec![t_out * h, self.horizon]));
                v.push(("out_b".into(), vec![self.horizon]));
                v
            }
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in self.param_shapes() {
            let numel: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![0.0; numel]
            } else {
                let rf: usize = shape[..shape.len() - 2].iter().product();
                let fan_in = rf * shape[shape.len() - 2];
                let fan_out = rf * shape[shape.len() - 1];
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-lim..lim)).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(ModelParams {
            names,
            tensors,
            seed,
        })
    }
}

/// Named parameter tensors of one backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub seed: u64,
}

impl ModelParams {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::InvalidArgument(format!(
                "flat vector has {} values, model has {}",
                flat.len(),
                self.count()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|k| &self.tensors[k])
    }

    /// Records every tensor on the tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Records every tensor as a constant.
    pub fn register_const(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }
}

/// D^{-1/2}(A + I)D^{-1/2}, differentiable in `a`.
pub fn gcn_normalize(tape: &mut Tape, a: Var) -> Result<Var> {
    let n = tape.value(a).dims2()?.0;
    let eye = tape.constant(Tensor::eye(n));
    let ai = tape.add(a, eye)?;
    let deg = tape.sum_axis(ai, 1)?;
    let dinv = tape.powf(deg, -0.5);
    let left = tape.mul(ai, dinv)?;
    let dinv_t = tape.transpose(dinv)?;
    tape.mul(left, dinv_t)
}

fn add_bias(tape: &mut Tape, x: Var, b: Var) -> Result<Var> {
    tape.add(x, b)
}

/// Two-layer GCN: Â·relu(Â X W1 + b1)·W2 + b2 with dropout on the hidden
/// layer when `dropout_seed` is set.
pub fn gcn_forward(
    cfg: &BackboneConfig,
    tape: &mut Tape,
    params: &[Var],
    adj: Var,
    x: Var,
    dropout_seed: Option<u64>,
) -> Result<Var> {
    let a_hat = gcn_normalize(tape, adj)?;
    let xw = tape.matmul(x, params[0])?;
    let h = tape.matmul(a_hat, xw)?;
    let h = add_bias(tape, h, params[1])?;
    let mut h = tape.relu(h);
    if let Some(seed) = dropout_seed {
        if cfg.dropout > 0.0 {
            h = tape.dropout(h, cfg.dropout, seed)?;
        }
    }
    let hw = tape.matmul(h, params[2])?;
    let out = tape.matmul(a_hat, hw)?;
    add_bias(tape, out, params[3])
}

/// Decoupled STGNN. `x`: [batch, nodes, window] → [batch, nodes, horizon].
/// Temporal dilated-conv blocks run per node, then bidirectional diffusion
/// blocks mix nodes with powers of row-normalized A and Aᵀ, then a linear
/// readout maps the remaining time × hidden state to the horizon.
pub fn stgnn_forward(
    cfg: &BackboneConfig,
    tape: &mut Tape,
    params: &[Var],
    adj: Var,
    x: Var,
    dropout_seed: Option<u64>,
) -> Result<Var> {
    let (b, n, w) = match tape.value(x).shape() {
        &[b, n, w] => (b, n, w),
        s => {
            return Err(Error::InvalidShape {
                op: "stgnn_forward",
                msg: format!("input must be [batch, nodes, window], got {:?}", s),
            })
        }
    };
    if w <= cfg.temporal_span() {
        return Err(Error::InvalidShape {
            op: "stgnn_forward",
            msg: format!(
                "window {} shorter than the receptive field of {} steps",
                w,
                cfg.temporal_span() + 1
            ),
        });
    }
    let an = tape.value(adj).dims2()?;
    if an != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "stgnn_forward",
            lhs: vec![an.0, an.1],
            rhs: vec![b, n, w],
        });
    }
    let h = cfg.hidden;
    let mut k = 0;
    let mut next = || {
        k += 1;
        params[k - 1]
    };
    let flat = tape.reshape(x, &[b * n * w, 1])?;
    let (enc_w, enc_b) = (next(), next());
    let e = tape.matmul(flat, enc_w)?;
    let e = add_bias(tape, e, enc_b)?;
    let mut cur = tape.reshape(e, &[b * n, w, h])?;
    let mut t = w;
    for _ in 0..cfg.temporal_layers {
        let (tw, tb) = (next(), next());
        let c = tape.conv1d(cur, tw, cfg.dilation)?;
        let c = add_bias(tape, c, tb)?;
        cur = tape.gelu(c);
        t -= (cfg.kernel - 1) * cfg.dilation;
    }
    if cfg.spatial_layers > 0 {
        let pf = tape.row_normalize(adj)?;
        let at = tape.transpose(adj)?;
        let pb = tape.row_normalize(at)?;
        for _ in 0..cfg.spatial_layers {
            let (sw, sb) = (next(), next());
            let node_major = tape.reshape(cur, &[b, n, t * h])?;
            let mut terms = vec![tape.reshape(node_major, &[b * n * t, h])?];
            for p in [pf, pb] {
                let mut m = node_major;
                for _ in 0..cfg.hops {
                    m = tape.node_mix(p, m)?;
                    terms.push(tape.reshape(m, &[b * n * t, h])?);
                }
            }
            let stacked = tape.concat(&terms, 1)?;
            let z = tape.matmul(stacked, sw)?;
            let z = add_bias(tape, z, sb)?;
            let z = tape.gelu(z);
            cur = tape.reshape(z, &[b * n, t, h])?;
        }
    }
    if let Some(seed) = dropout_seed {
        if cfg.dropout > 0.0 {
            cur = tape.dropout(cur, cfg.dropout, seed)?;
        }
    }
    let (ow, ob) = (next(), next());
    let r = tape.reshape(cur, &[b * n, t * h])?;
    let y = tape.matmul(r, ow)?;
    let y = add_bias(tape, y, ob)?;
    tape.reshape(y, &[b, n, cfg.horizon])
}

/// Dispatches on the backbone kind.
pub fn forward(
    cfg: &BackboneConfig,
    tape: &mut Tape,
    params: &[Var],
    adj: Var,
    x: Var,
    dropout_seed: Option<u64>,
) -> Result<Var> {
    match cfg.kind {
        BackboneKind::GcnClassifier => gcn_forward(cfg, tape, params, adj, x, dropout_seed),
        BackboneKind::DecoupledStgnn => stgnn_forward(cfg, tape, params, adj, x, dropout_seed),
    }
}

/// ‖∂ŷ[target, step] / ∂x[source, :]‖ for one STGNN input window
/// (`window`: [nodes, window]).
pub fn jacobian_norm(
    cfg: &BackboneConfig,
    params: &ModelParams,
    adj: &Tensor,
    window: &Tensor,
    source: usize,
    target: usize,
    output_step: usize,
) -> Result<f64> {
    let (n, w) = window.dims2()?;
    for (what, idx, lim) in [
        ("source node", source, n),
        ("target node", target, n),
        ("output step", output_step, cfg.horizon),
    ] {
        if idx >= lim {
            return Err(Error::IndexOutOfRange {
                what,
                index: idx,
                limit: lim,
            });
        }
    }
    let mut tape = Tape::new();
    let vars = params.register_const(&mut tape);
    let a = tape.constant(adj.clone());
    let x = tape.param(window.clone().reshaped(&[1, n, w])?);
    let y = stgnn_forward(cfg, &mut tape, &vars, a, x, None)?;
    let out_idx = target * cfg.horizon + output_step;
    let in_idx: Vec<usize> = (source * w..(source + 1) * w).collect();
    jacobian_block_norm(&mut tape, x, y, &[out_idx], &in_idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    Mse,
    /// `target` holds class ids as floats, one per row of `pred`.
    CrossEntropy,
}

/// Mean loss over the entries (rows for cross-entropy) selected by `mask`.
pub fn loss(tape: &mut Tape, pred: Var, target: Var, kind: LossKind, mask: Option<&[bool]>) -> Result<Var> {
    match kind {
        LossKind::CrossEntropy => {
            let (r, _) = tape.value(pred).dims2()?;
            let labels = tape.value(target).data().to_vec();
            if labels.len() != r {
                return Err(Error::ShapeMismatch {
                    op: "cross_entropy",
                    lhs: tape.value(pred).shape().to_vec(),
                    rhs: tape.value(target).shape().to_vec(),
                });
            }
            let rows: Vec<usize> = (0..r).filter(|&i| mask.is_none_or(|m| m[i])).collect();
            if rows.is_empty() {
                return Err(Error::InvalidArgument("loss mask selects nothing".into()));
            }
            let ys: Vec<usize> = rows.iter().map(|&i| labels[i] as usize).collect();
            tape.cross_entropy(pred, &rows, &ys)
        }
        LossKind::Mae | LossKind::Mse => {
            let shape = tape.value(pred).shape().to_vec();
            let d = tape.sub(pred, target)?;
            let e = if kind == LossKind::Mae {
                tape.abs(d)
            } else {
                tape.mul(d, d)?
            };
            match mask {
                None => Ok(tape.mean(e)),
                Some(m) => {
                    if m.len() != tape.value(e).numel() {
                        return Err(Error::InvalidArgument("mask length mismatch".into()));
                    }
                    let cnt = m.iter().filter(|&&b| b).count();
                    if cnt == 0 {
                        return Err(Error::InvalidArgument("loss mask selects nothing".into()));
                    }
                    let mv = tape.constant(Tensor::new(shape, m.iter().map(|&b| b as u8 as f64).collect())?);
                    let masked = tape.mul(e, mv)?;
                    let s = tape.sum(masked);
                    Ok(tape.scale(s, 1.0 / cnt as f64))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_relative_error;
    use crate::graph::Graph;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn path_adj(n: usize) -> Tensor {
        Graph::new(n, (0..n - 1).map(|i| (i, i + 1, 1.0))).unwrap().adjacency()
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = BackboneConfig::stgnn(4, 6, 2);
        let p = cfg.init(3).unwrap();
        let mut q = cfg.init(4).unwrap();
        assert_ne!(p, q);
        q.unflatten(&p.flatten()).unwrap();
        assert_eq!(p.flatten(), q.flatten());
        assert_eq!(p.count(), cfg.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>());
        assert!(q.unflatten(&[0.0]).is_err());
    }

    #[test]
    fn gcn_identity_adjacency_is_mlp() {
        let cfg = BackboneConfig::gcn(5, 7, 3, 0.0);
        let p = cfg.init(1).unwrap();
        let x = rand_tensor(&[6, 5], 2);
        let mut tape = Tape::new();
        let v = p.register_const(&mut tape);
        let a = tape.constant(Tensor::zeros(&[6, 6]));
        let xv = tape.constant(x.clone());
        let out = gcn_forward(&cfg, &mut tape, &v, a, xv, None).unwrap();
        // MLP with identical weights
        let h = x.matmul(p.get("w1").unwrap()).unwrap();
        let b1 = p.get("b1").unwrap();
        let h = Tensor::new(
            h.shape().to_vec(),
            h.data().iter().enumerate().map(|(i, v)| (v + b1.data()[i % 7]).max(0.0)).collect(),
        )
        .unwrap();
        let y = h.matmul(p.get("w2").unwrap()).unwrap();
        let b2 = p.get("b2").unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert!((tape.value(out).data()[i] - (v + b2.data()[i % 3])).abs() < 1e-14);
        }
    }

    #[test]
    fn gcn_zero_weights_give_zero_logits() {
        let cfg = BackboneConfig::gcn(3, 4, 2, 0.5);
        let mut p = cfg.init(0).unwrap();
        p.unflatten(&vec![0.0; p.count()]).unwrap();
        let mut tape = Tape::new();
        let v = p.register_const(&mut tape);
        let a = tape.constant(path_adj(5));
        let x = tape.constant(rand_tensor(&[5, 3], 1));
        let out = gcn_forward(&cfg, &mut tape, &v, a, x, Some(3)).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_gradients_match_finite_differences() {
        let cfg = BackboneConfig::gcn(4, 5, 3, 0.0);
        let a = path_adj(6);
        let x = rand_tensor(&[6, 4], 9);
        let labels = Tensor::new(vec![6, 1], vec![0.0, 1.0, 2.0, 1.0, 0.0, 2.0]).unwrap();
        let build = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let av = t.constant(a.clone());
            let xv = t.constant(x.clone());
            let y = t.constant(labels.clone());
            let out = gcn_forward(&cfg, t, v, av, xv, None)?;
            loss(t, out, y, LossKind::CrossEntropy, None)
        };
        for seed in 0..5 {
            let p = BackboneConfig::gcn(4, 5, 3, 0.0).init(seed).unwrap();
            let err = max_relative_error(&build, &p.tensors, seed).unwrap();
            assert!(err < 1e-5, "{:e}", err);
        }
    }

    #[test]
    fn gcn_gradient_wrt_adjacency() {
        let cfg = BackboneConfig::gcn(3, 4, 2, 0.0);
        let p = cfg.init(5).unwrap();
        let x = rand_tensor(&[5, 3], 4);
        let build = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let pv = p.register_const(t);
            let xv = t.constant(x.clone());
            gcn_forward(&cfg, t, &pv, v[0], xv, None)
        };
        let mut a = path_adj(5);
        for e in a.data_mut() {
            *e += 0.3;
        }
        let err = max_relative_error(&build, &[a], 2).unwrap();
        assert!(err < 1e-5, "{:e}", err);
    }

    #[test]
    fn stgnn_gradients_match_finite_differences() {
        let mut cfg = BackboneConfig::stgnn(3, 5, 2);
        cfg.hops = 1;
        let a = path_adj(4);
        let x = rand_tensor(&[2, 4, 5], 3);
        let y = rand_tensor(&[2, 4, 2], 4);
        let c2 = cfg.clone();
        let build = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let av = t.constant(a.clone());
            let xv = t.constant(x.clone());
            let yv = t.constant(y.clone());
            let out = stgnn_forward(&c2, t, v, av, xv, None)?;
            loss(t, out, yv, LossKind::Mse, None)
        };
        let p = cfg.init(1).unwrap();
        let err = max_relative_error(&build, &p.tensors, 1).unwrap();
        assert!(err < 1e-5, "{:e}", err);
    }

    #[test]
    fn stgnn_zero_hops_ignores_graph() {
        let mut cfg = BackboneConfig::stgnn(4, 6, 2);
        cfg.hops = 0;
        let p = cfg.init(2).unwrap();
        let x = rand_tensor(&[3, 5, 6], 5);
        let run = |a: Tensor| {
            let mut tape = Tape::new();
            let v = p.register_const(&mut tape);
            let av = tape.constant(a);
            let xv = tape.constant(x.clone());
            let y = stgnn_forward(&cfg, &mut tape, &v, av, xv, None).unwrap();
            tape.value(y).data().to_vec()
        };
        let mut dense = Tensor::ones(&[5, 5]);
        dense.set2(0, 1, 3.0);
        assert_eq!(run(path_adj(5)), run(dense));
    }

    #[test]
    fn stgnn_window_too_short() {
        let mut cfg = BackboneConfig::stgnn(4, 6, 2);
        cfg.temporal_layers = 3;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("at least 7"), "{}", err);
    }

    #[test]
    fn stgnn_single_node_is_temporal_model() {
        let cfg = BackboneConfig::stgnn(4, 6, 2);
        let p = cfg.init(7).unwrap();
        let x = rand_tensor(&[2, 1, 6], 8);
        let mut tape = Tape::new();
        let v = p.register_const(&mut tape);
        let a = tape.constant(Tensor::zeros(&[1, 1]));
        let xv = tape.constant(x);
        let y = stgnn_forward(&cfg, &mut tape, &v, a, xv, None).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1, 2]);
        assert!(tape.value(y).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn receptive_field_zero_law() {
        let cfg = BackboneConfig::stgnn(4, 6, 1);
        let p = cfg.init(3).unwrap();
        let n = 8;
        let a = path_adj(n);
        let x = rand_tensor(&[n, 6], 4);
        for u in 0..n {
            let jn = jacobian_norm(&cfg, &p, &a, &x, u, 0, 0).unwrap();
            if u > cfg.hop_radius() {
                assert_eq!(jn, 0.0);
            } else {
                assert!(jn > 0.0, "pair ({}, 0) within radius has zero norm", u);
            }
        }
        assert!(jacobian_norm(&cfg, &p, &a, &x, n, 0, 0).is_err());
        assert!(jacobian_norm(&cfg, &p, &a, &x, 0, 0, 1).is_err());
    }

    #[test]
    fn losses() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        for k in [LossKind::Mae, LossKind::Mse] {
            let l = loss(&mut tape, p, t, k, None).unwrap();
            assert_eq!(tape.value(l).item(), 0.0);
        }
        let off = tape.constant(Tensor::new(vec![2, 2], vec![1.5, 2.5, 3.5, 4.5]).unwrap());
        let l = loss(&mut tape, off, t, LossKind::Mae, None).unwrap();
        assert_eq!(tape.value(l).item(), 0.5);
        let l = loss(&mut tape, off, t, LossKind::Mae, Some(&[true, false, false, false])).unwrap();
        assert_eq!(tape.value(l).item(), 0.5);
        assert!(loss(&mut tape, off, t, LossKind::Mae, Some(&[false; 4])).is_err());
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let logits = rand_tensor(&[5, 4], 11);
        let labels = [3usize, 0, 1, 1, 2];
        let mut tape = Tape::new();
        let lv = tape.constant(logits.clone());
        let y = tape.constant(Tensor::new(vec![5, 1], labels.iter().map(|&v| v as f64).collect()).unwrap());
        let l = loss(&mut tape, lv, y, LossKind::CrossEntropy, None).unwrap();
        let mut want = 0.0;
        for (i, &c) in labels.iter().enumerate() {
            let row = &logits.data()[i * 4..(i + 1) * 4];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[c].exp() / z).ln();
        }
        assert!((tape.value(l).item() - want / 5.0).abs() < 1e-12);
    }

    #[test]
    fn backbone_determinism() {
        let cfg = BackboneConfig::stgnn(4, 6, 2);
        let a = cfg.init(9).unwrap();
        let b = cfg.init(9).unwrap();
        assert_eq!(a, b);
    }
}
