use std::fmt::Write as _;

use super::decompose::{ArmSummary, DecompositionReport};

/// Integer percent, or "n/a".
pub fn format_share(s: Option<f64>) -> String {
    match s {
        Some(v) => format!("{:.0}%", v),
        None => "n/a".into(),
    }
}

pub fn format_p(p: Option<f64>) -> String {
    match p {
        None => "degenerate".into(),
        Some(p) if p < 0.001 => "<0.001".into(),
        Some(p) => format!("{:.3}", p),
    }
}

fn mean_std(a: &ArmSummary) -> String {
    format!("{:.3} ± {:.3}", a.mean, a.std)
}

pub const DECOMPOSITION_HEADER: [&str; 7] = ["dataset", "vanilla", "frozen", "bilevel", "inner", "graph", "p_total"];

/// One row in the three-way comparison layout.
pub fn decomposition_cells(name: &str, r: &DecompositionReport) -> Vec<String> {
    vec![
        name.to_string(),
        mean_std(&r.vanilla),
        mean_std(&r.frozen),
        mean_std(&r.bilevel),
        format_share(r.inner_share_pct),
        format_share(r.graph_share_pct()),
        match &r.t_total {
            Some(t) => format_p(t.p),
            None => "-".into(),
        },
    ]
}

pub fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    writeln!(s, "| {} |", header.join(" | ")).expect("write to string");
    writeln!(s, "|{}", "---|".repeat(header.len())).expect("write to string");
    for r in rows {
        writeln!(s, "| {} |", r.join(" | ")).expect("write to string");
    }
    s
}

pub const DECOMPOSITION_CSV_HEADER: &str = "dataset,vanilla_mean,vanilla_std,frozen_mean,frozen_std,bilevel_mean,bilevel_std,delta_inner,delta_graph,delta_total,inner_share_pct,na_reason,p_total,p_inner,p_graph";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:?}", x)).unwrap_or_default()
}

/// Full-precision CSV row (floats in round-trip form, empty for undefined).
pub fn decomposition_csv_row(name: &str, r: &DecompositionReport) -> String {
    let p = |t: &Option<super::TTest>| opt(t.as_ref().and_then(|t| t.p));
    [
        name.to_string(),
        format!("{:?}", r.vanilla.mean),
        format!("{:?}", r.vanilla.std),
        format!("{:?}", r.frozen.mean),
        format!("{:?}", r.frozen.std),
        format!("{:?}", r.bilevel.mean),
        format!("{:?}", r.bilevel.std),
        format!("{:?}", r.delta_inner),
        format!("{:?}", r.delta_graph),
        format!("{:?}", r.delta_total),
        opt(r.inner_share_pct),
        r.na_reason
            .map(|n| serde_json::to_value(n).expect("enum serializes").as_str().unwrap_or("").to_string())
            .unwrap_or_default(),
        p(&r.t_total),
        p(&r.t_inner),
        p(&r.t_graph),
    ]
    .join(",")
}
