use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{mean, nearest_rank, paired_t_test, sample_std, TTest};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SmallerBetter,
    LargerBetter,
}

impl Direction {
    /// Improvement from `from` to `to`.
    fn gain(self, from: f64, to: f64) -> f64 {
        match self {
            Direction::SmallerBetter => from - to,
            Direction::LargerBetter => to - from,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaReason {
    NonpositiveTotal,
    OppositeSigns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ArmSummary {
    pub fn from_values(values: &[f64]) -> Self {
        Self {
            values: values.to_vec(),
            mean: mean(values),
            std: sample_std(values),
        }
    }

    /// Summary statistics only (no per-seed values).
    pub fn from_moments(mean: f64, std: f64) -> Self {
        Self {
            values: Vec::new(),
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub undefined_fraction: f64,
    /// Share undefined in more than half of the resamples.
    pub unstable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub schema: u32,
    pub direction: Direction,
    pub vanilla: ArmSummary,
    pub frozen: ArmSummary,
    pub bilevel: ArmSummary,
    pub delta_inner: f64,
    pub delta_graph: f64,
    pub delta_total: f64,
    /// Δ_inner / Δ_total in percent.
    pub inner_share_pct: Option<f64>,
    pub na_reason: Option<NaReason>,
    pub share_ci: Option<BootstrapCi>,
    pub t_total: Option<TTest>,
    pub t_inner: Option<TTest>,
    pub t_graph: Option<TTest>,
}

impl DecompositionReport {
    pub fn graph_share_pct(&self) -> Option<f64> {
        self.inner_share_pct.map(|s| 100.0 - s)
    }
}

/// sqrt of the mean of the three arm variances.
pub fn pooled_std(stds: [f64; 3]) -> f64 {
    (stds.iter().map(|s| s * s).sum::<f64>() / 3.0).sqrt()
}

/// Share in percent, or why it is undefined: the total gain is not positive,
/// or the channels have strictly opposite signs and the opposing channel is
/// larger than the pooled per-seed std.
pub fn share_rule(delta_inner: f64, delta_graph: f64, pooled: f64) -> std::result::Result<f64, NaReason> {
    let total = delta_inner + delta_graph;
    if total <= 0.0 {
        return Err(NaReason::NonpositiveTotal);
    }
    let opposite = (delta_inner > 0.0 && delta_graph < 0.0) || (delta_inner < 0.0 && delta_graph > 0.0);
    if opposite && delta_inner.min(delta_graph).abs() > pooled {
        return Err(NaReason::OppositeSigns);
    }
    Ok(100.0 * delta_inner / total)
}

fn core(direction: Direction, v: ArmSummary, f: ArmSummary, b: ArmSummary) -> DecompositionReport {
    let delta_inner = direction.gain(v.mean, f.mean);
    let delta_graph = direction.gain(f.mean, b.mean);
    let delta_total = delta_inner + delta_graph;
    let (inner_share_pct, na_reason) = match share_rule(delta_inner, delta_graph, pooled_std([v.std, f.std, b.std])) {
        Ok(s) => (Some(s), None),
        Err(r) => (None, Some(r)),
    };
    DecompositionReport {
        schema: super::SCHEMA_VERSION,
        direction,
        vanilla: v,
        frozen: f,
        bilevel: b,
        delta_inner,
        delta_graph,
        delta_total,
        inner_share_pct,
        na_reason,
        share_ci: None,
        t_total: None,
        t_inner: None,
        t_graph: None,
    }
}

/// Decomposition from per-arm means and stds alone.
pub fn decompose_summary(direction: Direction, means: [f64; 3], stds: [f64; 3]) -> DecompositionReport {
    core(
        direction,
        ArmSummary::from_moments(means[0], stds[0]),
        ArmSummary::from_moments(means[1], stds[1]),
        ArmSummary::from_moments(means[2], stds[2]),
    )
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Per-seed values must be aligned: index k of each arm is the same seed.
pub fn decompose(
    vanilla: &[f64],
    frozen: &[f64],
    bilevel: &[f64],
    direction: Direction,
    bootstrap_seed: u64,
) -> Result<DecompositionReport> {
    if vanilla.len() != frozen.len() || vanilla.len() != bilevel.len() {
        return Err(Error::InvalidArgument(format!(
            "seed sets differ in size ({}, {}, {}); pairing is undefined",
            vanilla.len(),
            frozen.len(),
            bilevel.len()
        )));
    }
    if vanilla.len() < 2 {
        return Err(Error::InvalidArgument("decomposition needs at least two seeds".into()));
    }
    let mut r = core(
        direction,
        ArmSummary::from_values(vanilla),
        ArmSummary::from_values(frozen),
        ArmSummary::from_values(bilevel),
    );
    r.t_total = Some(paired_t_test(vanilla, bilevel)?);
    r.t_inner = Some(paired_t_test(vanilla, frozen)?);
    r.t_graph = Some(paired_t_test(frozen, bilevel)?);
    if vanilla.len() >= 3 {
        r.share_ci = Some(bootstrap_share_ci(
            [vanilla, frozen, bilevel],
            direction,
            BOOTSTRAP_RESAMPLES,
            0.95,
            bootstrap_seed,
        )?);
    }
    Ok(r)
}

/// Share of one paired resample, `None` when undefined.
fn resample_share(arms: [&[f64]; 3], idx: &[usize], direction: Direction) -> Option<f64> {
    let pick = |a: &[f64]| -> Vec<f64> { idx.iter().map(|&i| a[i]).collect() };
    let (v, f, b) = (pick(arms[0]), pick(arms[1]), pick(arms[2]));
    let di = direction.gain(mean(&v), mean(&f));
    let dg = direction.gain(mean(&f), mean(&b));
    share_rule(di, dg, pooled_std([sample_std(&v), sample_std(&f), sample_std(&b)])).ok()
}

/// Percentile interval of the share over `b` paired resamples of seed indices.
pub fn bootstrap_share_ci(arms: [&[f64]; 3], direction: Direction, b: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    let n = arms[0].len();
    if n < 3 || arms.iter().any(|a| a.len() != n) {
        return Err(Error::InvalidArgument("bootstrap needs >= 3 aligned seeds per arm".into()));
    }
    if !(0.0 < level && level < 1.0) || b == 0 {
        return Err(Error::InvalidArgument("bootstrap needs 0 < level < 1 and b >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shares = Vec::with_capacity(b);
    let mut idx = vec![0; n];
    for _ in 0..b {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        if let Some(s) = resample_share(arms, &idx, direction) {
            shares.push(s);
        }
    }
    shares.sort_by(f64::total_cmp);
    let undefined_fraction = 1.0 - shares.len() as f64 / b as f64;
    let alpha = (1.0 - level) / 2.0;
    let (lo, hi) = if shares.is_empty() {
        (None, None)
    } else {
        (Some(nearest_rank(&shares, alpha)), Some(nearest_rank(&shares, 1.0 - alpha)))
    };
    Ok(BootstrapCi {
        level,
        resamples: b,
        seed,
        lo,
        hi,
        undefined_fraction,
        unstable: undefined_fraction > 0.5,
    })
}
