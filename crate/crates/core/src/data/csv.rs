use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{default_splits, Normalization, StDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::read_edge_list;

/// Ties the files of an external dataset to its splits and statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub signal: PathBuf,
    pub graph: PathBuf,
    pub window: usize,
    pub horizon: usize,
    pub splits: [Range<usize>; 3],
    pub normalization: Normalization,
}

impl DatasetManifest {
    pub fn describe(ds: &StDataset, signal: PathBuf, graph: PathBuf) -> Self {
        Self {
            signal,
            graph,
            window: ds.window,
            horizon: ds.horizon,
            splits: ds.splits.clone(),
            normalization: ds.norm.clone(),
        }
    }
}

/// Raw signal as `t,node0,...,nodeK` CSV.
pub fn signal_csv(raw: &Tensor) -> Result<String> {
    let (t, n) = raw.dims2()?;
    let mut s = String::from("t");
    for v in 0..n {
        write!(s, ",node{}", v).expect("write to string");
    }
    s.push('\n');
    for r in 0..t {
        write!(s, "{}", r).expect("write to string");
        for v in 0..n {
            write!(s, ",{}", raw.get2(r, v)).expect("write to string");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn read_signal_csv(text: &str) -> Result<Tensor> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty signal file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header t,node0,..., got {:?}", header),
        });
    }
    let n = cols.len() - 1;
    let mut rows = Vec::new();
    for (k, line) in lines {
        let ln = k + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != n + 1 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("ragged row: {} fields, header has {}", f.len(), n + 1),
            });
        }
        for cell in &f[1..] {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("bad value {:?}", cell),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("non-finite value {:?}", cell),
                });
            }
            rows.push(v);
        }
    }
    let t = rows.len() / n;
    Tensor::new(vec![t, n], rows)
}

/// Loads a signal CSV and an edge list; splits are 70/10/20 and the
/// normalization is fitted on train.
pub fn load_csv_st(signal_path: &Path, graph_path: &Path, window: usize, horizon: usize) -> Result<StDataset> {
    let raw = read_signal_csv(&std::fs::read_to_string(signal_path)?)?;
    let g = read_edge_list(&std::fs::read_to_string(graph_path)?)?;
    let splits = default_splits(raw.shape()[0]);
    StDataset::new(g, raw, window, horizon, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_st, SynthStConfig};
    use crate::graph::write_edge_list;

    #[test]
    fn save_load_round_trip() {
        let cfg = SynthStConfig {
            n_nodes: 6,
            steps: 150,
            window: 5,
            horizon: 2,
            seed: 2,
            ..Default::default()
        };
        let (ds, _) = synth_st(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("signal.csv");
        let gp = dir.path().join("graph.txt");
        std::fs::write(&sp, signal_csv(&ds.raw).unwrap()).unwrap();
        std::fs::write(&gp, write_edge_list(&ds.graph)).unwrap();
        let back = load_csv_st(&sp, &gp, 5, 2).unwrap();
        assert_eq!(back.raw, ds.raw);
        assert_eq!(back.signal, ds.signal);
        assert_eq!(back.graph.edges(), ds.graph.edges());
        let m = DatasetManifest::describe(&back, sp, gp);
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<DatasetManifest>(&j).unwrap(), m);
        assert!(load_csv_st(&m.signal, &m.graph, 20, 2).is_err());
    }

    #[test]
    fn rejects_ragged_and_nan() {
        let e = read_signal_csv("t,node0,node1\n0,1,2\n1,3\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = read_signal_csv("t,node0\n0,1\n1,NaN\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        assert!(read_signal_csv("x,node0\n").is_err());
    }
}
