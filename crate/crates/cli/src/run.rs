use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rewire_core::data::Dataset;
use rewire_core::diagnostics::{
    corruption_study_with, distill_with, edge_probability_report, jacobian_by_distance, run_arm_with, run_seeds_with,
    t_sweep_with, three_arm_with, ArmSummary, JacobianTable, Strata, SCHEMA_VERSION,
};
use rewire_core::graph::{bandwidth_ablation, read_coords_csv, Coords};
use rewire_core::models::{BackboneConfig, GraphParam, Materialize};
use rewire_core::spectral::{eigenvalues_csv, spectral_report};
use rewire_core::trainers::{igr_oracle, log_spaced_etas, Mode, RunRecord, TrainConfig};
use rewire_core::{Error, Result};

use crate::config::{DistillSource, Experiment, ExperimentConfig, Loaded, SpectraSpec};
use crate::store::{FailedRun, Store};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Partial,
    Failed,
}

impl Status {
    /// Failed when the experiment errored or every run failed.
    pub fn of(completed: bool, failed_runs: usize, runs: usize) -> Self {
        match (completed, failed_runs) {
            (false, _) => Status::Failed,
            (true, 0) => Status::Ok,
            (true, f) if f == runs => Status::Failed,
            _ => Status::Partial,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Partial => 2,
            Status::Failed => 3,
        }
    }
}

/// Top-level artifact of one experiment directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub experiment: Experiment,
    pub name: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub status: Status,
    pub runs: usize,
    pub failed_runs: Vec<FailedRun>,
    pub error: Option<String>,
    pub report: Option<Value>,
}

#[derive(Serialize)]
struct SeedTable {
    seed: u64,
    table: JacobianTable,
}

/// Everything an experiment needs after validation.
pub struct Prepared {
    pub data: Option<Loaded>,
    pub bb: Option<BackboneConfig>,
    pub phi: Option<GraphParam>,
}

pub fn prepare(exp: Experiment, cfg: &ExperimentConfig) -> std::result::Result<Prepared, crate::config::ConfigError> {
    if matches!(exp, Experiment::IgrOracle | Experiment::BandwidthAblation) {
        return Ok(Prepared {
            data: None,
            bb: None,
            phi: None,
        });
    }
    let loaded = cfg.load_dataset()?;
    let bb = cfg.backbone(&loaded.data)?;
    let phi = cfg
        .structure
        .build(loaded.data.graph())
        .map_err(|e| crate::config::ConfigError(format!("structure: {}", e)))?;
    Ok(Prepared {
        data: Some(loaded),
        bb: Some(bb),
        phi: Some(phi),
    })
}

fn summary_of(values: &[f64]) -> Option<ArmSummary> {
    (!values.is_empty()).then(|| ArmSummary::from_values(values))
}

fn execute(exp: Experiment, cfg: &ExperimentConfig, p: &Prepared, store: &Store, out: &Path) -> Result<Value> {
    let trainer = |c: &TrainConfig, b: &BackboneConfig, g: &GraphParam, d: &Dataset| store.run(c, b, g, d);
    let seeds = &cfg.seeds;
    let base = &cfg.train;
    let (data, bb, phi) = match (&p.data, &p.bb, &p.phi) {
        (Some(l), Some(b), Some(g)) => (Some(&l.data), Some(b), Some(g)),
        _ => (None, None, None),
    };
    let need = || -> Result<(&Dataset, &BackboneConfig, &GraphParam)> {
        match (data, bb, phi) {
            (Some(d), Some(b), Some(g)) => Ok((d, b, g)),
            _ => Err(Error::InvalidArgument("experiment needs a dataset".into())),
        }
    };
    let value = match exp {
        Experiment::Train => {
            let (d, b, g) = need()?;
            let arm = run_arm_with(&trainer, base, base.mode, b, g, d, seeds)?;
            json!({ "schema": SCHEMA_VERSION, "summary": summary_of(&arm.values()), "arm": arm })
        }
        Experiment::Decompose => {
            let (d, b, g) = need()?;
            serde_json::to_value(three_arm_with(&trainer, base, b, g, d, seeds, cfg.bootstrap_seed)?)?
        }
        Experiment::Tsweep => {
            let (d, b, g) = need()?;
            let t = cfg.tsweep.as_ref().expect("validated");
            serde_json::to_value(t_sweep_with(&trainer, base, b, g, d, &t.t_values, &t.arms, seeds)?)?
        }
        Experiment::Corruption => {
            let (d, b, _) = need()?;
            let c = cfg.corruption.as_ref().expect("validated");
            serde_json::to_value(corruption_study_with(
                &trainer,
                base,
                b,
                cfg.structure,
                d,
                &c.r_values,
                c.seed,
                seeds,
            )?)?
        }
        Experiment::Distill => {
            let (d, b, g) = need()?;
            let spec = cfg.distill.as_ref().expect("validated");
            let vanilla = run_arm_with(&trainer, base, Mode::Vanilla, b, g, d, seeds)?;
            let bilevel = run_arm_with(&trainer, base, Mode::Bilevel, b, g, d, seeds)?;
            if !vanilla.failures.is_empty() || !bilevel.failures.is_empty() {
                return Err(Error::Undefined("reference arms failed on some seeds".into()));
            }
            let learned = match spec.source {
                DistillSource::Learned => {
                    let c = TrainConfig {
                        mode: Mode::Bilevel,
                        seed: seeds[0],
                        ..base.clone()
                    };
                    store.run(&c, b, g, d)?.phi
                }
                DistillSource::Init => g.clone(),
                DistillSource::True => {
                    let planted = p.data.as_ref().and_then(|l| l.planted.as_ref()).expect("validated");
                    cfg.structure.build(&planted.true_graph)?
                }
            };
            let edges = match (&learned, spec.tau) {
                (GraphParam::Bernoulli { .. }, Some(tau)) => Some(edge_probability_report(&learned, d.graph(), tau, 20)?),
                _ => None,
            };
            let r = distill_with(
                &trainer,
                &learned,
                spec.tau,
                b,
                base,
                d,
                seeds,
                &vanilla.values(),
                &bilevel.values(),
            )?;
            json!({ "schema": SCHEMA_VERSION, "source": spec.source, "distill": r, "edge_probabilities": edges })
        }
        Experiment::Spectra => {
            let (d, _, _) = need()?;
            let eps = cfg.spectra.clone().unwrap_or(SpectraSpec { eps: 0.1 }).eps;
            let r = spectral_report(d.graph(), eps)?;
            std::fs::write(out.join("eigenvalues.csv"), eigenvalues_csv(&r.eigenvalues))?;
            json!({ "schema": SCHEMA_VERSION, "spectrum": r })
        }
        Experiment::Jacobian => {
            let (d, b, g) = need()?;
            let strata = match d {
                Dataset::Nc(_) => Strata::Classification,
                Dataset::St(_) => Strata::Forecasting,
            };
            let sample_seed = cfg.jacobian.clone().unwrap_or_default().sample_seed;
            let runs = run_seeds_with(&trainer, base, base.mode, b, g, d, seeds)?;
            let mut tables = Vec::new();
            for (&seed, r) in seeds.iter().zip(runs) {
                let Ok(RunRecord { failure: None, params, phi, .. }) = r else {
                    continue;
                };
                let adj = phi.materialize(Materialize::Deterministic)?;
                tables.push(SeedTable {
                    seed,
                    table: jacobian_by_distance(b, &params, &adj, d, strata, sample_seed)?,
                });
            }
            json!({ "schema": SCHEMA_VERSION, "strata": strata, "tables": tables })
        }
        Experiment::IgrOracle => {
            let s = cfg.igr.as_ref().expect("validated");
            let h = rewire_core::autodiff::Tensor::from_rows(&s.hessian)?;
            let etas = log_spaced_etas(s.eta_min, s.eta_max, s.eta_count);
            json!({ "schema": SCHEMA_VERSION, "oracle": igr_oracle(&h, &s.theta0, &etas, s.horizon)? })
        }
        Experiment::BandwidthAblation => {
            let s = cfg.bandwidth.as_ref().expect("validated");
            let coords = match (&s.coords_csv, &s.planar) {
                (Some(path), _) => read_coords_csv(&std::fs::read_to_string(path)?)?,
                (None, Some(pts)) => Coords::Planar(pts.clone()),
                (None, None) => unreachable!("validated"),
            };
            let rows = bandwidth_ablation(&coords, &s.rules, s.threshold, s.cluster_cutoff_km)?;
            json!({ "schema": SCHEMA_VERSION, "rows": rows })
        }
    };
    Ok(value)
}

/// Runs one validated experiment into `out` and writes the summary.
pub fn run_experiment(
    exp: Experiment,
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    out: &Path,
    resume: bool,
) -> Result<(Summary, usize, usize)> {
    let hash = cfg.hash();
    let dataset_key = serde_json::to_string(&cfg.dataset)?;
    let store = Store::new(out, hash.clone(), dataset_key, resume);
    let result = execute(exp, cfg, prepared, &store, out);
    let failed_runs = store.failures();
    let runs = store.run_count();
    let status = Status::of(result.is_ok(), failed_runs.len(), runs);
    let (error, report) = match result {
        Err(e) => (Some(e.to_string()), None),
        Ok(v) => (None, Some(v)),
    };
    let summary = Summary {
        schema: SCHEMA_VERSION,
        experiment: exp,
        name: cfg.label(),
        config_hash: hash,
        config: cfg.clone(),
        status,
        runs,
        failed_runs,
        error,
        report,
    };
    crate::store::write_json(&out.join(SUMMARY_FILE), &summary)?;
    let trained = store.trained.load(std::sync::atomic::Ordering::Relaxed);
    let reused = store.reused.load(std::sync::atomic::Ordering::Relaxed);
    Ok((summary, trained, reused))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes() {
        assert_eq!(Status::of(true, 0, 5).exit_code(), 0);
        assert_eq!(Status::of(true, 0, 0).exit_code(), 0);
        assert_eq!(Status::of(true, 2, 5).exit_code(), 2);
        assert_eq!(Status::of(true, 5, 5).exit_code(), 3);
        assert_eq!(Status::of(false, 0, 3).exit_code(), 3);
    }
}
