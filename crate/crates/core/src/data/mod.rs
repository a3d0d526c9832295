//! Datasets, splits and batching.

mod csv;
mod synth;

pub use csv::{load_csv_st, read_signal_csv, signal_csv, DatasetManifest};
pub use synth::{plant_slack, synth_nc, synth_st, PlantedSpec, SlackSpec, SynthNcConfig, SynthStConfig};

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-node standard-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Fits on rows `rows` of a [time, nodes] signal. Constant nodes get std 1.
    pub fn fit(raw: &Tensor, rows: Range<usize>) -> Result<Self> {
        let (_, n) = raw.dims2()?;
        let len = rows.len() as f64;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("normalization fit on an empty range".into()));
        }
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for t in rows.clone() {
            for (v, m) in mean.iter_mut().enumerate() {
                *m += raw.get2(t, v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= len);
        for t in rows {
            for v in 0..n {
                var[v] += (raw.get2(t, v) - mean[v]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let s = (s / len).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, raw: &Tensor) -> Result<Tensor> {
        let (t, n) = raw.dims2()?;
        let mut out = raw.clone();
        for r in 0..t {
            for v in 0..n {
                out.set2(r, v, (raw.get2(r, v) - self.mean[v]) / self.std[v]);
            }
        }
        Ok(out)
    }
}

/// Multivariate node time series with contiguous splits.
#[derive(Clone, Debug, PartialEq)]
pub struct StDataset {
    /// Structure handed to the model (the init graph for synthetic data).
    pub graph: Graph,
    /// Unnormalized [time, nodes] signal.
    pub raw: Tensor,
    /// Normalized signal.
    pub signal: Tensor,
    pub norm: Normalization,
    pub window: usize,
    pub horizon: usize,
    pub splits: [Range<usize>; 3],
}

/// Input and target tensors for a set of window starts.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub starts: Vec<usize>,
    /// [batch, nodes, window]
    pub x: Tensor,
    /// [batch, nodes, horizon]
    pub y: Tensor,
}

/// 70/10/20 contiguous split of `len` steps (floors, remainder to test).
pub fn default_splits(len: usize) -> [Range<usize>; 3] {
    split_by_fraction(len, 0.7, 0.1)
}

pub fn split_by_fraction(len: usize, train: f64, val: f64) -> [Range<usize>; 3] {
    let a = (len as f64 * train).floor() as usize;
    let b = a + (len as f64 * val).floor() as usize;
    [0..a, a..b, b..len]
}

impl StDataset {
    /// Normalizes `raw` with statistics fitted on the train split.
    pub fn new(graph: Graph, raw: Tensor, window: usize, horizon: usize, splits: [Range<usize>; 3]) -> Result<Self> {
        let (t, n) = raw.dims2()?;
        if n != graph.n() {
            return Err(Error::InvalidArgument(format!(
                "signal has {} nodes, graph has {}",
                n,
                graph.n()
            )));
        }
        if window == 0 || horizon == 0 {
            return Err(Error::InvalidArgument("window and horizon must be >= 1".into()));
        }
        if splits[0].start != 0 || splits[0].end != splits[1].start || splits[1].end != splits[2].start || splits[2].end != t {
            return Err(Error::InvalidArgument(format!(
                "splits {:?} must tile 0..{} in order",
                splits, t
            )));
        }
        for (name, s) in ["train", "val", "test"].iter().zip(&splits) {
            if s.len() < window + horizon {
                return Err(Error::InvalidArgument(format!(
                    "{} split has {} steps, window+horizon needs {}",
                    name,
                    s.len(),
                    window + horizon
                )));
            }
        }
        let norm = Normalization::fit(&raw, splits[0].clone())?;
        let signal = norm.apply(&raw)?;
        Ok(Self {
            graph,
            raw,
            signal,
            norm,
            window,
            horizon,
            splits,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n()
    }

    pub fn split_range(&self, s: Split) -> &Range<usize> {
        &self.splits[s as usize]
    }

    /// Valid window starts: input and target both inside the split.
    pub fn window_starts(&self, s: Split) -> Range<usize> {
        let r = self.split_range(s);
        r.start..(r.end + 1 - self.window - self.horizon)
    }

    pub fn batch(&self, starts: &[usize]) -> Result<WindowBatch> {
        let n = self.n_nodes();
        let (w, h) = (self.window, self.horizon);
        let t = self.signal.shape()[0];
        let mut x = Vec::with_capacity(starts.len() * n * w);
        let mut y = Vec::with_capacity(starts.len() * n * h);
        for &s in starts {
            if s + w + h > t {
                return Err(Error::IndexOutOfRange {
                    what: "window start",
                    index: s,
                    limit: t + 1 - w - h,
                });
            }
            for v in 0..n {
                x.extend((s..s + w).map(|k| self.signal.get2(k, v)));
            }
            for v in 0..n {
                y.extend((s + w..s + w + h).map(|k| self.signal.get2(k, v)));
            }
        }
        Ok(WindowBatch {
            starts: starts.to_vec(),
            x: Tensor::new(vec![starts.len(), n, w], x)?,
            y: Tensor::new(vec![starts.len(), n, h], y)?,
        })
    }

    /// Window starts grouped into batches: shuffled by `seed` for train,
    /// in order otherwise.
    pub fn batch_iter(&self, batch_size: usize, seed: u64, split: Split) -> Vec<Vec<usize>> {
        let mut starts: Vec<usize> = self.window_starts(split).collect();
        if split == Split::Train {
            starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        starts.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Either task family.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    St(StDataset),
    Nc(NcDataset),
}

impl Dataset {
    pub fn graph(&self) -> &Graph {
        match self {
            Dataset::St(d) => &d.graph,
            Dataset::Nc(d) => &d.graph,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.graph().n()
    }
}

/// Node classification data.
#[derive(Clone, Debug, PartialEq)]
pub struct NcDataset {
    /// Carries features and labels.
    pub graph: Graph,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NcDataset {
    pub fn new(graph: Graph, train: Vec<usize>, val: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let labels = graph
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("node classification graph needs labels".into()))?;
        if graph.features.is_none() {
            return Err(Error::InvalidArgument("node classification graph needs features".into()));
        }
        let n = graph.n();
        let mut seen = vec![false; n];
        for &v in train.iter().chain(&val).chain(&test) {
            if v >= n {
                return Err(Error::IndexOutOfRange {
                    what: "split node",
                    index: v,
                    limit: n,
                });
            }
            if seen[v] {
                return Err(Error::InvalidArgument(format!("node {} appears in two splits", v)));
            }
            seen[v] = true;
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut in_train = vec![false; classes];
        for &v in &train {
            in_train[labels[v]] = true;
        }
        if let Some(c) = in_train.iter().position(|&b| !b) {
            return Err(Error::InvalidArgument(format!("class {} missing from train split", c)));
        }
        Ok(Self {
            graph,
            classes,
            train,
            val,
            test,
        })
    }

    pub fn nodes(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn labels(&self) -> &[usize] {
        self.graph.labels.as_deref().expect("validated in new")
    }

    pub fn features(&self) -> &Tensor {
        self.graph.features.as_ref().expect("validated in new")
    }

    pub fn mask(&self, s: Split) -> Vec<bool> {
        let mut m = vec![false; self.graph.n()];
        for &v in self.nodes(s) {
            m[v] = true;
        }
        m
    }

    /// Same splits and features on a different edge set.
    pub fn with_graph(&self, g: Graph) -> Result<Self> {
        let g = g
            .with_labels(self.labels().to_vec())?
            .with_features(self.features().clone())?;
        Ok(Self {
            graph: g,
            ..self.clone()
        })
    }
}
