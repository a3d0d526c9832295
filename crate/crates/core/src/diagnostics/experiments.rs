use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decompose::{decompose, ArmSummary, DecompositionReport, Direction};
use super::stats::{paired_t_test, TTest};
use super::SCHEMA_VERSION;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{corrupt_edges, Graph};
use crate::models::{BackboneConfig, GraphParam};
use crate::trainers::{train, Mode, Regime, RunRecord, TrainConfig};

/// FNV-1a over node count and the (i, j, weight bits) edge list.
pub fn graph_hash(g: &Graph) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(g.n() as u64);
    for e in g.edges() {
        eat(e.i as u64);
        eat(e.j as u64);
        eat(e.w.to_bits());
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// One arm over a seed list; `metrics[k]` belongs to `seeds[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Option<f64>>,
    pub failures: Vec<SeedFailure>,
}

impl ArmRun {
    pub fn values(&self) -> Vec<f64> {
        self.metrics.iter().flatten().copied().collect()
    }
}

/// Runs `mode` for every seed (in parallel) and keeps the full records.
pub fn run_seeds_with(
    trainer: Trainer<'_>,
    base: &TrainConfig,
    mode: Mode,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    seeds: &[u64],
) -> Result<Vec<Result<RunRecord>>> {
    let cfg = TrainConfig { mode, ..base.clone() };
    cfg.validate()?;
    Ok(seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..cfg.clone() };
            trainer(&c, bb, phi, data)
        })
        .collect())
}

pub fn run_arm_with(
    trainer: Trainer<'_>,
    base: &TrainConfig,
    mode: Mode,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    seeds: &[u64],
) -> Result<ArmRun> {
    let runs = run_seeds_with(trainer, base, mode, bb, phi, data, seeds)?;
    let mut metrics = Vec::with_capacity(seeds.len());
    let mut failures = Vec::new();
    for (&seed, r) in seeds.iter().zip(runs) {
        let msg = match r {
            Ok(rec) if rec.failure.is_none() => {
                metrics.push(Some(rec.test_metric));
                continue;
            }
            Ok(rec) => rec.failure.unwrap_or_default(),
            Err(e) => e.to_string(),
        };
        metrics.push(None);
        failures.push(SeedFailure { seed, message: msg });
    }
    Ok(ArmRun {
        mode,
        seeds: seeds.to_vec(),
        metrics,
        failures,
    })
}

/// Values of each arm restricted to seeds that succeeded in every arm.
pub fn aligned(arms: &[&ArmRun]) -> Vec<Vec<f64>> {
    let n = arms[0].seeds.len();
    let ok: Vec<usize> = (0..n).filter(|&k| arms.iter().all(|a| a.metrics[k].is_some())).collect();
    arms.iter()
        .map(|a| ok.iter().map(|&k| a.metrics[k].expect("filtered")).collect())
        .collect()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }
    let mut s = seeds.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != seeds.len() {
        return Err(Error::InvalidArgument("seed list has duplicates".into()));
    }
    Ok(())
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Vanilla, frozen and bilevel on one structure, decomposed over the seeds
/// that succeeded in all three arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeArmReport {
    pub schema: u32,
    pub vanilla: ArmRun,
    pub frozen: ArmRun,
    pub bilevel: ArmRun,
    pub decomposition: Option<DecompositionReport>,
}

pub fn three_arm_with(
    trainer: Trainer<'_>,
    base: &TrainConfig,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    seeds: &[u64],
    bootstrap_seed: u64,
) -> Result<ThreeArmReport> {
    check_seeds(seeds)?;
    let vanilla = run_arm_with(trainer, base, Mode::Vanilla, bb, phi, data, seeds)?;
    let frozen = run_arm_with(trainer, base, Mode::FrozenPhi, bb, phi, data, seeds)?;
    let bilevel = run_arm_with(trainer, base, Mode::Bilevel, bb, phi, data, seeds)?;
    let v = aligned(&[&vanilla, &frozen, &bilevel]);
    let decomposition = if v[0].len() >= 2 {
        Some(decompose(&v[0], &v[1], &v[2], Direction::SmallerBetter, bootstrap_seed)?)
    } else {
        None
    };
    Ok(ThreeArmReport {
        schema: SCHEMA_VERSION,
        vanilla,
        frozen,
        bilevel,
        decomposition,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TSweepCell {
    pub t: usize,
    pub arm: Mode,
    pub run: ArmRun,
    pub summary: ArmSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TSweepReport {
    pub schema: u32,
    pub axis: String,
    pub regime: Regime,
    pub t_values: Vec<usize>,
    pub cells: Vec<TSweepCell>,
    /// Only for the reuse regime, where vanilla is defined.
    pub vanilla: Option<ArmRun>,
    /// Frozen at T = 1 is bit-identical to vanilla on every seed.
    pub t1_equals_vanilla: Option<bool>,
    /// Frozen means never increase with T.
    pub frozen_monotone: bool,
    /// Monotone, and the last improvement is no larger than the first.
    pub frozen_plateau: bool,
    /// Largest per-seed max − min of the frozen metric across T.
    pub frozen_range: f64,
    /// Paired test of frozen at the first vs the last T.
    pub frozen_first_vs_last: Option<TTest>,
}

impl TSweepReport {
    pub fn cell(&self, t: usize, arm: Mode) -> Option<&TSweepCell> {
        self.cells.iter().find(|c| c.t == t && c.arm == arm)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn t_sweep_with(
    trainer: Trainer<'_>,
    base: &TrainConfig,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    t_values: &[usize],
    arms: &[Mode],
    seeds: &[u64],
) -> Result<TSweepReport> {
    check_seeds(seeds)?;
    if t_values.is_empty() || t_values[0] == 0 || !t_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("T values must be >= 1 and strictly increasing".into()));
    }
    if let Some(m) = arms.iter().find(|m| !matches!(m, Mode::FrozenPhi | Mode::Bilevel)) {
        return Err(Error::InvalidArgument(format!("T-sweep arms are frozen_phi and bilevel, got {:?}", m)));
    }
    let mut cells = Vec::new();
    for &t in t_values {
        for &arm in arms {
            let cfg = TrainConfig {
                inner_steps: t,
                ..base.clone()
            };
            let run = run_arm_with(trainer, &cfg, arm, bb, phi, data, seeds)?;
            let summary = ArmSummary::from_values(&run.values());
            cells.push(TSweepCell { t, arm, run, summary });
        }
    }
    let vanilla = match base.regime {
        Regime::MinibatchReuse => Some(run_arm_with(trainer, base, Mode::Vanilla, bb, phi, data, seeds)?),
        Regime::FullbatchReset => None,
    };
    let frozen: Vec<&TSweepCell> = cells.iter().filter(|c| c.arm == Mode::FrozenPhi).collect();
    let t1_equals_vanilla = match (&vanilla, frozen.first()) {
        (Some(v), Some(c)) if c.t == 1 => Some(v.metrics == c.run.metrics && v.failures.is_empty()),
        _ => None,
    };
    let means: Vec<f64> = frozen.iter().map(|c| c.summary.mean).collect();
    let frozen_monotone = !means.is_empty() && means.windows(2).all(|w| w[1] <= w[0]);
    let frozen_plateau = frozen_monotone
        && (means.len() < 3 || (means[means.len() - 2] - means[means.len() - 1]) <= (means[0] - means[1]));
    let runs: Vec<&ArmRun> = frozen.iter().map(|c| &c.run).collect();
    let (frozen_range, frozen_first_vs_last) = if runs.is_empty() {
        (0.0, None)
    } else {
        let a = aligned(&runs);
        let range = (0..a[0].len())
            .map(|k| {
                let col: Vec<f64> = a.iter().map(|r| r[k]).collect();
                col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min)
            })
            .fold(0.0, f64::max);
        let test = if a.len() >= 2 && a[0].len() >= 2 {
            Some(paired_t_test(&a[0], &a[a.len() - 1])?)
        } else {
            None
        };
        (range, test)
    };
    Ok(TSweepReport {
        schema: SCHEMA_VERSION,
        axis: "T".into(),
        regime: base.regime,
        t_values: t_values.to_vec(),
        cells,
        vanilla,
        t1_equals_vanilla,
        frozen_monotone,
        frozen_plateau,
        frozen_range,
        frozen_first_vs_last,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Softmax,
    Bernoulli { samples: usize },
}

impl StructureKind {
    pub fn build(self, g: &Graph) -> Result<GraphParam> {
        match self {
            StructureKind::Softmax => Ok(GraphParam::softmax_from(g)),
            StructureKind::Bernoulli { samples } => GraphParam::bernoulli_from(g, samples),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPoint {
    pub r: f64,
    /// Hash of the graph each arm (vanilla, frozen, bilevel) trained on.
    pub arm_graph_hashes: [u64; 3],
    pub arms: ThreeArmReport,
    /// Per-seed channels, aligned over seeds that succeeded in every arm.
    pub seed_inner: Vec<f64>,
    pub seed_graph: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub schema: u32,
    pub axis: String,
    pub corruption_seed: u64,
    pub points: Vec<CorruptionPoint>,
    pub graph_increasing: bool,
    /// The inner channel's increment shrinks between consecutive steps in r.
    pub inner_saturating: bool,
    /// Per-seed graph channel at the last r vs the first.
    pub graph_last_vs_first: Option<TTest>,
}

/// Corrupts once per r with `corruption_seed` and runs all three arms on that
/// single corrupted graph.
#[allow(clippy::too_many_arguments)]
pub fn corruption_study_with(
    trainer: Trainer<'_>,
    base: &TrainConfig,
    bb: &BackboneConfig,
    structure: StructureKind,
    data: &Dataset,
    r_values: &[f64],
    corruption_seed: u64,
    seeds: &[u64],
) -> Result<CorruptionReport> {
    let Dataset::Nc(nc) = data else {
        return Err(Error::InvalidArgument("corruption study runs on node classification data".into()));
    };
    if r_values.is_empty() || !strictly_increasing(r_values) || r_values.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidArgument("r values must lie in [0, 1] and strictly increase".into()));
    }
    let mut points = Vec::new();
    for &r in r_values {
        let g = corrupt_edges(&nc.graph, r, corruption_seed)?;
        let d = Dataset::Nc(nc.with_graph(g)?);
        let phi = structure.build(d.graph())?;
        let arms = three_arm_with(trainer, base, bb, &phi, &d, seeds, corruption_seed)?;
        let h = graph_hash(d.graph());
        let v = aligned(&[&arms.vanilla, &arms.frozen, &arms.bilevel]);
        let seed_inner = v[0].iter().zip(&v[1]).map(|(a, b)| a - b).collect();
        let seed_graph = v[1].iter().zip(&v[2]).map(|(a, b)| a - b).collect();
        points.push(CorruptionPoint {
            r,
            arm_graph_hashes: [h; 3],
            arms,
            seed_inner,
            seed_graph,
        });
    }
    let channel = |f: fn(&DecompositionReport) -> f64| -> Vec<f64> {
        points
            .iter()
            .map(|p| p.arms.decomposition.as_ref().map(f).unwrap_or(f64::NAN))
            .collect()
    };
    let graph = channel(|d| d.delta_graph);
    let inner = channel(|d| d.delta_inner);
    let increments: Vec<f64> = inner.windows(2).map(|w| w[1] - w[0]).collect();
    let inner_saturating = increments.len() >= 2 && increments.windows(2).all(|w| w[1] < w[0]);
    let first = &points[0].seed_graph;
    let last = &points[points.len() - 1].seed_graph;
    let graph_last_vs_first = if points.len() >= 2 && first.len() == last.len() && first.len() >= 2 {
        Some(paired_t_test(last, first)?)
    } else {
        None
    };
    Ok(CorruptionReport {
        schema: SCHEMA_VERSION,
        axis: "r".into(),
        corruption_seed,
        graph_increasing: graph.len() >= 2 && strictly_increasing(&graph),
        inner_saturating,
        graph_last_vs_first,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub schema: u32,
    pub tau: Option<f64>,
    pub graph_hash: u64,
    pub distilled: ArmRun,
    pub vanilla: ArmSummary,
    pub bilevel: ArmSummary,
    /// Vanilla minus distilled (smaller-is-better metric).
    pub distill_gain: f64,
    /// Distillation gain over bilevel gain, in percent.
    pub graph_share_pct: Option<f64>,
    pub t_distilled_vs_vanilla: Option<TTest>,
}

/// Trains vanilla models from scratch on the learned structure and compares
/// against per-seed vanilla and bilevel metrics (aligned with `seeds`).
#[allow(clippy::too_many_arguments)]
pub fn distill_with(
    trainer: Trainer<'_>,
    learned: &GraphParam,
    tau: Option<f64>,
    bb: &BackboneConfig,
    base: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    vanilla: &[f64],
    bilevel: &[f64],
) -> Result<DistillReport> {
    check_seeds(seeds)?;
    if vanilla.len() != seeds.len() || bilevel.len() != seeds.len() {
        return Err(Error::InvalidArgument("reference metrics must align with the seed list".into()));
    }
    let phi = match (learned, tau) {
        (GraphParam::Bernoulli { .. }, Some(t)) => learned.binarized(t)?,
        (GraphParam::Bernoulli { .. }, None) => {
            return Err(Error::InvalidArgument("bernoulli structure needs a binarization threshold".into()))
        }
        (GraphParam::SoftmaxReweight { .. }, _) => learned.clone(),
    };
    let cfg = TrainConfig {
        mode: Mode::Vanilla,
        regime: Regime::MinibatchReuse,
        inner_steps: 1,
        ..base.clone()
    };
    let distilled = run_arm_with(trainer, &cfg, Mode::Vanilla, bb, &phi, data, seeds)?;
    let ok: Vec<usize> = (0..seeds.len()).filter(|&k| distilled.metrics[k].is_some()).collect();
    let pick = |v: &[f64]| -> Vec<f64> { ok.iter().map(|&k| v[k]).collect() };
    let d = distilled.values();
    let (v, b) = (pick(vanilla), pick(bilevel));
    let vs = ArmSummary::from_values(&v);
    let bs = ArmSummary::from_values(&b);
    let ds = ArmSummary::from_values(&d);
    let distill_gain = vs.mean - ds.mean;
    let total = vs.mean - bs.mean;
    let graph_share_pct = if total == 0.0 || d.is_empty() {
        None
    } else {
        Some(100.0 * distill_gain / total)
    };
    let t_distilled_vs_vanilla = if d.len() >= 2 { Some(paired_t_test(&v, &d)?) } else { None };
    Ok(DistillReport {
        schema: SCHEMA_VERSION,
        tau,
        graph_hash: graph_hash(&phi.to_graph(0.0)?),
        distilled,
        vanilla: vs,
        bilevel: bs,
        distill_gain,
        graph_share_pct,
        t_distilled_vs_vanilla,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeProbabilityReport {
    pub schema: u32,
    pub pairs: usize,
    pub histogram: Vec<HistogramBin>,
    pub frac_below_001: f64,
    pub frac_above_09: f64,
    pub tau: f64,
    pub frac_below_tau: f64,
    pub init_edges: usize,
    /// Initial edges with θ < τ, over initial edges.
    pub substitution_rate: f64,
    /// Non-edges with θ ≥ τ, over initial edges.
    pub addition_rate: f64,
}

/// Distribution of θ over node pairs i < j, with modal binarization at τ
/// compared against the initial support.
pub fn edge_probability_report(phi: &GraphParam, init: &Graph, tau: f64, bins: usize) -> Result<EdgeProbabilityReport> {
    let GraphParam::Bernoulli { theta, .. } = phi else {
        return Err(Error::InvalidArgument("edge probabilities need the bernoulli parameterization".into()));
    };
    let n = theta.shape()[0];
    if init.n() != n || bins == 0 {
        return Err(Error::InvalidArgument("graph size mismatch or zero bins".into()));
    }
    let mut hist = vec![0usize; bins];
    let (mut below, mut above, mut below_tau, mut removed, mut added) = (0, 0, 0, 0, 0);
    let mut pairs = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let p = theta.get2(i, j);
            pairs += 1;
            hist[((p * bins as f64) as usize).min(bins - 1)] += 1;
            below += (p < 0.01) as usize;
            above += (p > 0.9) as usize;
            below_tau += (p < tau) as usize;
            match (init.has_edge(i, j), p >= tau) {
                (true, false) => removed += 1,
                (false, true) => added += 1,
                _ => {}
            }
        }
    }
    let frac = |k: usize| if pairs == 0 { 0.0 } else { k as f64 / pairs as f64 };
    let m = init.edge_count();
    let rate = |k: usize| if m == 0 { 0.0 } else { k as f64 / m as f64 };
    Ok(EdgeProbabilityReport {
        schema: SCHEMA_VERSION,
        pairs,
        histogram: hist
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                lo: k as f64 / bins as f64,
                hi: (k + 1) as f64 / bins as f64,
                count,
            })
            .collect(),
        frac_below_001: frac(below),
        frac_above_09: frac(above),
        tau,
        frac_below_tau: frac(below_tau),
        init_edges: m,
        substitution_rate: rate(removed),
        addition_rate: rate(added),
    })
}

/// Trains one configuration. The default is [`train`]; callers swap in
/// caching or persisting runners.
pub type Trainer<'a> = &'a (dyn Fn(&TrainConfig, &BackboneConfig, &GraphParam, &Dataset) -> Result<RunRecord> + Sync);

pub fn run_seeds(
    base: &TrainConfig,
    mode: Mode,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    seeds: &[u64],
) -> Result<Vec<Result<RunRecord>>> {
    run_seeds_with(&train, base, mode, bb, phi, data, seeds)
}

pub fn run_arm(
    base: &TrainConfig,
    mode: Mode,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    seeds: &[u64],
) -> Result<ArmRun> {
    run_arm_with(&train, base, mode, bb, phi, data, seeds)
}

pub fn three_arm(
    base: &TrainConfig,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    seeds: &[u64],
    bootstrap_seed: u64,
) -> Result<ThreeArmReport> {
    three_arm_with(&train, base, bb, phi, data, seeds, bootstrap_seed)
}

pub fn t_sweep(
    base: &TrainConfig,
    bb: &BackboneConfig,
    phi: &GraphParam,
    data: &Dataset,
    t_values: &[usize],
    arms: &[Mode],
    seeds: &[u64],
) -> Result<TSweepReport> {
    t_sweep_with(&train, base, bb, phi, data, t_values, arms, seeds)
}

pub fn corruption_study(
    base: &TrainConfig,
    bb: &BackboneConfig,
    structure: StructureKind,
    data: &Dataset,
    r_values: &[f64],
    corruption_seed: u64,
    seeds: &[u64],
) -> Result<CorruptionReport> {
    corruption_study_with(&train, base, bb, structure, data, r_values, corruption_seed, seeds)
}

#[allow(clippy::too_many_arguments)]
pub fn distill(
    learned: &GraphParam,
    tau: Option<f64>,
    bb: &BackboneConfig,
    base: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    vanilla: &[f64],
    bilevel: &[f64],
) -> Result<DistillReport> {
    distill_with(&train, learned, tau, bb, base, data, seeds, vanilla, bilevel)
}
