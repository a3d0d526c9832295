use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rewire_core::data::{load_csv_st, synth_nc, synth_st, Dataset, PlantedSpec, SynthNcConfig, SynthStConfig};
use rewire_core::diagnostics::StructureKind;
use rewire_core::graph::BandwidthRule;
use rewire_core::models::BackboneConfig;
use rewire_core::trainers::{Mode, Regime, TrainConfig};

/// Rejected before any compute starts; maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Train,
    Decompose,
    Tsweep,
    Corruption,
    Distill,
    Spectra,
    Jacobian,
    IgrOracle,
    BandwidthAblation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Train => "train",
            Experiment::Decompose => "decompose",
            Experiment::Tsweep => "tsweep",
            Experiment::Corruption => "corruption",
            Experiment::Distill => "distill",
            Experiment::Spectra => "spectra",
            Experiment::Jacobian => "jacobian",
            Experiment::IgrOracle => "igr-oracle",
            Experiment::BandwidthAblation => "bandwidth-ablation",
        }
    }

    fn needs_dataset(self) -> bool {
        !matches!(self, Experiment::IgrOracle | Experiment::BandwidthAblation)
    }

    fn trains(self) -> bool {
        !matches!(self, Experiment::Spectra | Experiment::IgrOracle | Experiment::BandwidthAblation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    SynthSt(SynthStConfig),
    SynthNc(SynthNcConfig),
    /// Node-major signal CSV plus an edge list; paths relative to the config file.
    CsvSt {
        signal: PathBuf,
        graph: PathBuf,
        window: usize,
        horizon: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSpec {
    Gcn {
        #[serde(default = "gcn_hidden")]
        hidden: usize,
        #[serde(default = "gcn_dropout")]
        dropout: f64,
    },
    Stgnn {
        #[serde(default = "stgnn_hidden")]
        hidden: usize,
        #[serde(default)]
        dropout: f64,
        hops: Option<usize>,
    },
}

fn gcn_hidden() -> usize {
    16
}

fn gcn_dropout() -> f64 {
    0.5
}

fn stgnn_hidden() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TSweepSpec {
    pub t_values: Vec<usize>,
    #[serde(default = "sweep_arms")]
    pub arms: Vec<Mode>,
}

fn sweep_arms() -> Vec<Mode> {
    vec![Mode::FrozenPhi, Mode::Bilevel]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub r_values: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillSource {
    /// Structure learned by the bilevel run of the first seed.
    Learned,
    /// The initial graph (null control).
    Init,
    /// The planted ground-truth graph of a synthetic forecasting fixture.
    True,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSpec {
    #[serde(default = "learned")]
    pub source: DistillSource,
    pub tau: Option<f64>,
}

fn learned() -> DistillSource {
    DistillSource::Learned
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraSpec {
    #[serde(default = "spectra_eps")]
    pub eps: f64,
}

fn spectra_eps() -> f64 {
    0.1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianSpec {
    #[serde(default)]
    pub sample_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgrSpec {
    /// Symmetric positive-definite Hessian, row by row.
    pub hessian: Vec<Vec<f64>>,
    pub theta0: Vec<f64>,
    #[serde(default = "eta_min")]
    pub eta_min: f64,
    #[serde(default = "eta_max")]
    pub eta_max: f64,
    #[serde(default = "eta_count")]
    pub eta_count: usize,
    #[serde(default = "horizon")]
    pub horizon: f64,
}

fn eta_min() -> f64 {
    1e-3
}

fn eta_max() -> f64 {
    1e-1
}

fn eta_count() -> usize {
    9
}

fn horizon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthSpec {
    /// `id,lat,lon` CSV, relative to the config file.
    pub coords_csv: Option<PathBuf>,
    /// Inline planar coordinates in km.
    pub planar: Option<Vec<(f64, f64)>>,
    pub rules: Vec<BandwidthRule>,
    #[serde(default = "kernel_threshold")]
    pub threshold: f64,
    #[serde(default = "cluster_cutoff")]
    pub cluster_cutoff_km: f64,
}

fn kernel_threshold() -> f64 {
    0.1
}

fn cluster_cutoff() -> f64 {
    rewire_core::graph::DEFAULT_CLUSTER_CUTOFF_KM
}

pub const DEFAULT_SEEDS: [u64; 5] = [42, 123, 456, 789, 1024];

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn softmax() -> StructureKind {
    StructureKind::Softmax
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional here; the subcommand decides and a mismatch is rejected.
    pub experiment: Option<Experiment>,
    /// Row label in rendered tables.
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub dataset: Option<DatasetSpec>,
    pub backbone: Option<BackboneSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "softmax")]
    pub structure: StructureKind,
    #[serde(default)]
    pub bootstrap_seed: u64,
    pub tsweep: Option<TSweepSpec>,
    pub corruption: Option<CorruptionSpec>,
    pub distill: Option<DistillSpec>,
    pub spectra: Option<SpectraSpec>,
    pub jacobian: Option<JacobianSpec>,
    pub igr: Option<IgrSpec>,
    pub bandwidth: Option<BandwidthSpec>,
}

pub struct Loaded {
    pub data: Dataset,
    pub planted: Option<PlantedSpec>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {}", path.display(), e)))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(DatasetSpec::CsvSt { signal, graph, .. }) = &mut self.dataset {
            fix(signal);
            fix(graph);
        }
        if let Some(BandwidthSpec { coords_csv: Some(p), .. }) = &mut self.bandwidth {
            fix(p);
        }
    }

    /// Sha-256 over the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let c = ExperimentConfig { out: None, ..self.clone() };
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "run".into())
    }

    /// Checks everything the trainers would reject, for every mode the
    /// experiment will run.
    pub fn validate(&self, exp: Experiment) -> Result<(), ConfigError> {
        if let Some(e) = self.experiment {
            if e != exp {
                return bad(format!("experiment: file says {}, command is {}", e.name(), exp.name()));
            }
        }
        if exp.trains() {
            if self.seeds.is_empty() {
                return bad("seeds: list is empty");
            }
            let mut s = self.seeds.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != self.seeds.len() {
                return bad("seeds: duplicates");
            }
        }
        if exp.needs_dataset() && self.dataset.is_none() {
            return bad("dataset: required section missing");
        }
        if let Some(DatasetSpec::SynthSt(c)) = &self.dataset {
            if matches!(self.backbone, Some(BackboneSpec::Gcn { .. })) {
                return bad(format!("backbone: gcn needs node classification data, window {}", c.window));
            }
        }
        if matches!(self.dataset, Some(DatasetSpec::SynthNc(_))) && matches!(self.backbone, Some(BackboneSpec::Stgnn { .. }))
        {
            return bad("backbone: stgnn needs forecasting data");
        }
        let modes: Vec<(Mode, usize)> = match exp {
            Experiment::Train | Experiment::Jacobian => vec![(self.train.mode, self.train.inner_steps)],
            Experiment::Decompose | Experiment::Corruption => [Mode::Vanilla, Mode::FrozenPhi, Mode::Bilevel]
                .iter()
                .map(|&m| (m, self.train.inner_steps))
                .collect(),
            Experiment::Tsweep => {
                let Some(t) = &self.tsweep else {
                    return bad("tsweep: required section missing");
                };
                if t.t_values.is_empty() || t.t_values[0] == 0 || !t.t_values.windows(2).all(|w| w[0] < w[1]) {
                    return bad("tsweep.t_values: must be >= 1 and strictly increasing");
                }
                if t.arms.is_empty() {
                    return bad("tsweep.arms: empty");
                }
                let mut m = Vec::new();
                for &arm in &t.arms {
                    if !matches!(arm, Mode::FrozenPhi | Mode::Bilevel) {
                        return bad(format!("tsweep.arms: {:?} is not swept over T", arm));
                    }
                    m.extend(t.t_values.iter().map(|&v| (arm, v)));
                }
                if self.train.regime == Regime::MinibatchReuse {
                    m.push((Mode::Vanilla, 1));
                }
                m
            }
            Experiment::Distill => {
                let Some(d) = &self.distill else {
                    return bad("distill: required section missing");
                };
                if let Some(t) = d.tau {
                    if !(0.0..1.0).contains(&t) {
                        return bad(format!("distill.tau: {} outside [0, 1)", t));
                    }
                }
                if matches!(self.structure, StructureKind::Bernoulli { .. }) && d.tau.is_none() {
                    return bad("distill.tau: bernoulli structure needs a binarization threshold");
                }
                if d.source == DistillSource::True && !matches!(self.dataset, Some(DatasetSpec::SynthSt(_))) {
                    return bad("distill.source: true graph exists only for synth_st data");
                }
                vec![(Mode::Vanilla, 1), (Mode::Bilevel, self.train.inner_steps)]
            }
            Experiment::Spectra => {
                if let Some(s) = &self.spectra {
                    if !(s.eps > 0.0 && s.eps < 0.5) {
                        return bad(format!("spectra.eps: {} outside (0, 0.5)", s.eps));
                    }
                }
                vec![]
            }
            Experiment::IgrOracle => {
                let Some(g) = &self.igr else {
                    return bad("igr: required section missing");
                };
                let n = g.theta0.len();
                if n == 0 || g.hessian.len() != n || g.hessian.iter().any(|r| r.len() != n) {
                    return bad("igr.hessian: must be square and match theta0");
                }
                if !(g.eta_min > 0.0 && g.eta_min < g.eta_max) || g.eta_count < 2 {
                    return bad("igr: need 0 < eta_min < eta_max and eta_count >= 2");
                }
                vec![]
            }
            Experiment::BandwidthAblation => {
                let Some(b) = &self.bandwidth else {
                    return bad("bandwidth: required section missing");
                };
                if b.coords_csv.is_some() == b.planar.is_some() {
                    return bad("bandwidth: give exactly one of coords_csv and planar");
                }
                if b.rules.is_empty() {
                    return bad("bandwidth.rules: empty");
                }
                if !(0.0..1.0).contains(&b.threshold) {
                    return bad(format!("bandwidth.threshold: {} outside [0, 1)", b.threshold));
                }
                vec![]
            }
        };
        if exp == Experiment::Corruption {
            if !matches!(self.dataset, Some(DatasetSpec::SynthNc(_))) {
                return bad("corruption: runs on node classification data");
            }
            let Some(c) = &self.corruption else {
                return bad("corruption: required section missing");
            };
            let r = &c.r_values;
            if r.is_empty() || !r.windows(2).all(|w| w[0] < w[1]) || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("corruption.r_values: must lie in [0, 1] and strictly increase");
            }
        }
        for (mode, t) in modes {
            let c = TrainConfig {
                mode,
                inner_steps: t,
                ..self.train.clone()
            };
            c.validate().map_err(|e| ConfigError(format!("train ({}): {}", mode_name(mode), e)))?;
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Loaded, ConfigError> {
        let spec = self.dataset.as_ref().ok_or_else(|| ConfigError("dataset: required section missing".into()))?;
        let err = |e: rewire_core::Error| ConfigError(format!("dataset: {}", e));
        Ok(match spec {
            DatasetSpec::SynthSt(c) => {
                let (d, p) = synth_st(c).map_err(err)?;
                Loaded {
                    data: Dataset::St(d),
                    planted: Some(p),
                }
            }
            DatasetSpec::SynthNc(c) => Loaded {
                data: Dataset::Nc(synth_nc(c).map_err(err)?),
                planted: None,
            },
            DatasetSpec::CsvSt {
                signal,
                graph,
                window,
                horizon,
            } => Loaded {
                data: Dataset::St(load_csv_st(signal, graph, *window, *horizon).map_err(err)?),
                planted: None,
            },
        })
    }

    /// Backbone for `data`, defaulting by task.
    pub fn backbone(&self, data: &Dataset) -> Result<BackboneConfig, ConfigError> {
        let bb = match (data, &self.backbone) {
            (Dataset::Nc(d), spec) => {
                let (hidden, dropout) = match spec {
                    None => (gcn_hidden(), gcn_dropout()),
                    Some(BackboneSpec::Gcn { hidden, dropout }) => (*hidden, *dropout),
                    Some(BackboneSpec::Stgnn { .. }) => return bad("backbone: stgnn needs forecasting data"),
                };
                let classes = d.labels().iter().max().map_or(0, |m| m + 1);
                BackboneConfig::gcn(d.features().shape()[1], hidden, classes, dropout)
            }
            (Dataset::St(d), spec) => {
                let mut bb = BackboneConfig::stgnn(stgnn_hidden(), d.window, d.horizon);
                match spec {
                    None => {}
                    Some(BackboneSpec::Stgnn { hidden, dropout, hops }) => {
                        bb.hidden = *hidden;
                        bb.dropout = *dropout;
                        if let Some(h) = hops {
                            bb.hops = *h;
                        }
                    }
                    Some(BackboneSpec::Gcn { .. }) => return bad("backbone: gcn needs node classification data"),
                }
                bb
            }
        };
        bb.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(bb)
    }
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Vanilla => "vanilla",
        Mode::FrozenPhi => "frozen_phi",
        Mode::Bilevel => "bilevel",
        Mode::E2eJoint => "e2e_joint",
    }
}
