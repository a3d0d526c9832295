use std::path::Path;

use clap::ValueEnum;
use serde_json::Value;

use rewire_core::diagnostics::render::{
    decomposition_cells, decomposition_csv_row, format_p, format_share, markdown_table, DECOMPOSITION_CSV_HEADER,
    DECOMPOSITION_HEADER,
};
use rewire_core::diagnostics::{
    ArmRun, ArmSummary, CorruptionReport, DistillReport, JacobianTable, TSweepReport, ThreeArmReport, SCHEMA_VERSION,
};
use rewire_core::graph::{AblationRow, BandwidthRule};
use rewire_core::spectral::SpectrumReport;
use rewire_core::trainers::IgrReport;

use crate::config::{mode_name, Experiment};
use crate::run::Summary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

pub fn read_summary(path: &Path) -> Result<Summary, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {}", path.display(), e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {}", path.display(), e))?;
    match v.get("schema").and_then(Value::as_u64) {
        Some(s) if s == SCHEMA_VERSION as u64 => {}
        Some(s) => {
            return Err(format!(
                "{}: schema version mismatch: summary has version {}, this build reads version {}",
                path.display(),
                s,
                SCHEMA_VERSION
            ))
        }
        None => return Err(format!("{}: not a summary (no schema version)", path.display())),
    }
    serde_json::from_value(v).map_err(|e| format!("{}: {}", path.display(), e))
}

/// A table cell; numbers keep full precision in CSV.
enum Cell {
    Text(String),
    Num(f64, usize),
    MeanStd(Option<ArmSummary>),
    Share(Option<f64>),
    P(Option<f64>),
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

fn text(s: impl Into<String>) -> Cell {
    Cell::Text(s.into())
}

fn pretty(c: &Cell) -> String {
    match c {
        Cell::Text(s) => s.clone(),
        Cell::Num(v, d) => format!("{:.*}", d, v),
        Cell::MeanStd(Some(a)) => format!("{:.3} ± {:.3}", a.mean, a.std),
        Cell::MeanStd(None) => "-".into(),
        Cell::Share(s) => format_share(*s),
        Cell::P(p) => format_p(*p),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn raw(c: &Cell) -> Vec<String> {
    let opt = |v: &Option<f64>| v.map(|x| format!("{:?}", x)).unwrap_or_default();
    match c {
        Cell::Text(s) => vec![csv_field(s)],
        Cell::Num(v, _) => vec![format!("{:?}", v)],
        Cell::MeanStd(a) => vec![opt(&a.as_ref().map(|a| a.mean)), opt(&a.as_ref().map(|a| a.std))],
        Cell::Share(v) | Cell::P(v) => vec![opt(v)],
    }
}

impl Table {
    fn markdown(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(pretty).collect()).collect();
        markdown_table(&self.header, &rows)
    }

    fn csv(&self) -> String {
        let mut head = Vec::new();
        for (k, h) in self.header.iter().enumerate() {
            match self.rows.first().map(|r| &r[k]) {
                Some(Cell::MeanStd(_)) => {
                    head.push(format!("{}_mean", h));
                    head.push(format!("{}_std", h));
                }
                _ => head.push(h.to_string()),
            }
        }
        let mut s = head.join(",") + "\n";
        for r in &self.rows {
            let f: Vec<String> = r.iter().flat_map(raw).collect();
            s.push_str(&f.join(","));
            s.push('\n');
        }
        s
    }
}

fn parse<T: serde::de::DeserializeOwned>(s: &Summary, key: Option<&str>) -> Result<T, String> {
    let r = s.report.as_ref().ok_or_else(|| format!("{}: summary has no report ({:?})", s.name, s.status))?;
    let v = match key {
        Some(k) => r.get(k).cloned().unwrap_or(Value::Null),
        None => r.clone(),
    };
    serde_json::from_value(v).map_err(|e| format!("{}: malformed report: {}", s.name, e))
}

fn rule_label(r: &BandwidthRule) -> String {
    match r {
        BandwidthRule::Fixed(v) => format!("fixed {}", v),
        BandwidthRule::StdOfSubset(n) => format!("std of {} nodes", n.len()),
        BandwidthRule::Percentile(p) => format!("p{}", p),
    }
}

fn arm_summary(a: &ArmRun) -> Option<ArmSummary> {
    let v = a.values();
    (!v.is_empty()).then(|| ArmSummary::from_values(&v))
}

fn table(kind: Experiment, summaries: &[Summary]) -> Result<Table, String> {
    let mut rows = Vec::new();
    let header = match kind {
        Experiment::Decompose | Experiment::Corruption => unreachable!("rendered through the decomposition layout"),
        Experiment::Train => {
            for s in summaries {
                let a: ArmRun = parse(s, Some("arm"))?;
                rows.push(vec![
                    text(&s.name),
                    text(mode_name(a.mode)),
                    Cell::MeanStd(arm_summary(&a)),
                    Cell::Num(a.values().len() as f64, 0),
                    Cell::Num(a.failures.len() as f64, 0),
                ]);
            }
            vec!["dataset", "mode", "test", "seeds", "failed"]
        }
        Experiment::Tsweep => {
            for s in summaries {
                let r: TSweepReport = parse(s, None)?;
                if let Some(v) = &r.vanilla {
                    rows.push(vec![text(&s.name), text("-"), text("vanilla"), Cell::MeanStd(arm_summary(v))]);
                }
                for c in &r.cells {
                    rows.push(vec![
                        text(&s.name),
                        Cell::Num(c.t as f64, 0),
                        text(mode_name(c.arm)),
                        Cell::MeanStd(arm_summary(&c.run)),
                    ]);
                }
            }
            vec!["dataset", "T", "arm", "test"]
        }
        Experiment::Distill => {
            for s in summaries {
                let r: DistillReport = parse(s, Some("distill"))?;
                let source = s.report.as_ref().and_then(|v| v.get("source")).and_then(Value::as_str).unwrap_or("");
                rows.push(vec![
                    text(&s.name),
                    text(source),
                    text(r.tau.map(|t| t.to_string()).unwrap_or_else(|| "-".into())),
                    Cell::MeanStd(arm_summary(&r.distilled)),
                    Cell::MeanStd(Some(r.vanilla.clone())),
                    Cell::MeanStd(Some(r.bilevel.clone())),
                    Cell::Num(r.distill_gain, 4),
                    Cell::Share(r.graph_share_pct),
                    Cell::P(r.t_distilled_vs_vanilla.and_then(|t| t.p)),
                ]);
            }
            vec!["dataset", "source", "tau", "distilled", "vanilla", "bilevel", "gain", "graph share", "p"]
        }
        Experiment::Spectra => {
            for s in summaries {
                let r: SpectrumReport = parse(s, Some("spectrum"))?;
                rows.push(vec![
                    text(&s.name),
                    Cell::Num(r.lcc_size as f64, 0),
                    Cell::Num(r.lambda2, 4),
                    r.w_eps.map_or(text("-"), |w| Cell::Num(w, 4)),
                    Cell::Num(r.whole_graph_lambda2, 4),
                    Cell::Num(r.zero_degree_nodes as f64, 0),
                ]);
            }
            vec!["dataset", "lcc", "lambda2", "w_eps", "whole-graph lambda2", "zero-degree"]
        }
        Experiment::Jacobian => {
            #[derive(serde::Deserialize)]
            struct SeedTable {
                seed: u64,
                table: JacobianTable,
            }
            for s in summaries {
                let tables: Vec<SeedTable> = parse(s, Some("tables"))?;
                for t in tables {
                    for row in &t.table.strata {
                        let n = |v: Option<f64>| v.map_or(text("-"), |x| Cell::Num(x, 5));
                        rows.push(vec![
                            text(&s.name),
                            Cell::Num(t.seed as f64, 0),
                            text(&row.label),
                            Cell::Num(row.pairs as f64, 0),
                            n(row.mean),
                            n(row.median),
                            n(row.max),
                        ]);
                    }
                }
            }
            vec!["dataset", "seed", "hops", "pairs", "mean", "median", "max"]
        }
        Experiment::IgrOracle => {
            for s in summaries {
                let r: IgrReport = parse(s, Some("oracle"))?;
                rows.push(vec![text(&s.name), Cell::Num(r.slope_plain, 3), Cell::Num(r.slope_modified, 3)]);
            }
            vec!["dataset", "slope vs plain flow", "slope vs modified flow"]
        }
        Experiment::BandwidthAblation => {
            for s in summaries {
                let r: Vec<AblationRow> = parse(s, Some("rows"))?;
                for row in r {
                    rows.push(vec![
                        text(&s.name),
                        text(rule_label(&row.rule)),
                        Cell::Num(row.bandwidth, 3),
                        Cell::Num(row.component_count as f64, 0),
                        Cell::Num(row.isolated as f64, 0),
                        Cell::Num(row.mean_degree, 2),
                        Cell::Num(row.edge_count as f64, 0),
                        Cell::Num(row.inter_cluster_edges as f64, 0),
                    ]);
                }
            }
            vec!["dataset", "rule", "bandwidth", "components", "isolated", "mean degree", "edges", "inter-cluster"]
        }
    };
    Ok(Table { header, rows })
}

/// Decomposition rows: one per decompose summary, one per r in a corruption
/// summary. Rows without enough seeds are skipped.
fn decomposition_rows(summaries: &[Summary]) -> Result<Vec<(String, rewire_core::diagnostics::DecompositionReport)>, String> {
    let mut out = Vec::new();
    for s in summaries {
        match s.experiment {
            Experiment::Decompose => {
                let r: ThreeArmReport = parse(s, None)?;
                if let Some(d) = r.decomposition {
                    out.push((s.name.clone(), d));
                }
            }
            _ => {
                let r: CorruptionReport = parse(s, None)?;
                for p in r.points {
                    if let Some(d) = p.arms.decomposition {
                        out.push((format!("{} r={}", s.name, p.r), d));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn render(summaries: &[Summary], format: Format) -> Result<String, String> {
    if summaries.is_empty() {
        return Err("no summaries given".into());
    }
    if format == Format::Json {
        let v: Vec<Value> = summaries
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name,
                    "experiment": s.experiment,
                    "config_hash": s.config_hash,
                    "status": s.status,
                    "report": s.report,
                })
            })
            .collect();
        return Ok(serde_json::to_string_pretty(&v).expect("json values serialize") + "\n");
    }
    let kind = summaries[0].experiment;
    if let Some(s) = summaries.iter().find(|s| s.experiment != kind) {
        return Err(format!(
            "cannot mix {} and {} summaries in one table",
            kind.name(),
            s.experiment.name()
        ));
    }
    if matches!(kind, Experiment::Decompose | Experiment::Corruption) {
        let rows = decomposition_rows(summaries)?;
        return Ok(match format {
            Format::Markdown => {
                let cells: Vec<Vec<String>> = rows.iter().map(|(n, d)| decomposition_cells(n, d)).collect();
                markdown_table(&DECOMPOSITION_HEADER, &cells)
            }
            _ => {
                let mut s = String::from(DECOMPOSITION_CSV_HEADER) + "\n";
                for (n, d) in &rows {
                    s.push_str(&decomposition_csv_row(&csv_field(n), d));
                    s.push('\n');
                }
                s
            }
        });
    }
    let t = table(kind, summaries)?;
    Ok(match format {
        Format::Markdown => t.markdown(),
        _ => t.csv(),
    })
}
