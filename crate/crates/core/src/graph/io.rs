use std::fmt::Write as _;

use super::{Coords, Graph};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Serializes as a `n=<count>` header followed by `i j w` lines. Weights use
/// shortest round-trip formatting, so parsing restores them bit for bit.
pub fn write_edge_list(g: &Graph) -> String {
    let mut s = format!("n={}\n", g.n());
    for e in g.edges() {
        writeln!(s, "{} {} {}", e.i, e.j, e.w).expect("write to string");
    }
    s
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn read_edge_list(text: &str) -> Result<Graph> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let n: usize = header
        .strip_prefix("n=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| parse_err(ln, format!("expected n=<count>, got {:?}", header)))?;
    let mut edges = Vec::new();
    for (ln, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(ln, format!("expected 'i j w', got {:?}", l)));
        }
        let i: usize = f[0].parse().map_err(|_| parse_err(ln, "bad node index"))?;
        let j: usize = f[1].parse().map_err(|_| parse_err(ln, "bad node index"))?;
        let w: f64 = f[2].parse().map_err(|_| parse_err(ln, "bad weight"))?;
        edges.push((i, j, w));
    }
    Graph::new(n, edges)
}

fn csv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    content_lines(text)
        .map(|(ln, l)| (ln, l.split(',').map(str::trim).collect::<Vec<_>>()))
        // skip a header row whose first cell is not an integer
        .filter(|(ln, f)| !(*ln == 1 && f[0].parse::<usize>().is_err()))
}

fn place<T: Clone>(rows: Vec<(usize, T)>, line_of: &[usize]) -> Result<Vec<T>> {
    let n = rows.len();
    let mut out: Vec<Option<T>> = vec![None; n];
    for (k, (id, v)) in rows.into_iter().enumerate() {
        if id >= n {
            return Err(parse_err(line_of[k], format!("id {} outside 0..{}", id, n)));
        }
        if out[id].is_some() {
            return Err(parse_err(line_of[k], format!("duplicate id {}", id)));
        }
        out[id] = Some(v);
    }
    Ok(out.into_iter().map(|v| v.expect("ids form a permutation")).collect())
}

/// `id,lat,lon` rows.
pub fn read_coords_csv(text: &str) -> Result<Coords> {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (ln, f) in csv_rows(text) {
        if f.len() != 3 {
            return Err(parse_err(ln, "expected id,lat,lon"));
        }
        let id = f[0].parse().map_err(|_| parse_err(ln, "bad id"))?;
        let lat = f[1].parse().map_err(|_| parse_err(ln, "bad latitude"))?;
        let lon = f[2].parse().map_err(|_| parse_err(ln, "bad longitude"))?;
        rows.push((id, (lat, lon)));
        lines.push(ln);
    }
    Ok(Coords::LatLon(place(rows, &lines)?))
}

/// `id,label` rows.
pub fn read_labels_csv(text: &str) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (ln, f) in csv_rows(text) {
        if f.len() != 2 {
            return Err(parse_err(ln, "expected id,label"));
        }
        let id = f[0].parse().map_err(|_| parse_err(ln, "bad id"))?;
        let lab = f[1].parse().map_err(|_| parse_err(ln, "bad label"))?;
        rows.push((id, lab));
        lines.push(ln);
    }
    place(rows, &lines)
}

/// `id,f1,...,fk` rows.
pub fn read_features_csv(text: &str) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut width = None;
    for (ln, f) in csv_rows(text) {
        if f.len() < 2 {
            return Err(parse_err(ln, "expected id,f1,...,fk"));
        }
        if *width.get_or_insert(f.len() - 1) != f.len() - 1 {
            return Err(parse_err(ln, "ragged feature row"));
        }
        let id = f[0].parse().map_err(|_| parse_err(ln, "bad id"))?;
        let vals = f[1..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| parse_err(ln, "bad feature value")))
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, vals));
        lines.push(ln);
    }
    let rows = place(rows, &lines)?;
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edge_list_parses() {
        let g = read_edge_list("n=3\n0 1 0.5\n# note\n2 1 1e-3\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.weight(1, 2), Some(1e-3));
        assert!(read_edge_list("3\n0 1 1").is_err());
        assert!(matches!(read_edge_list("n=3\n0 1").unwrap_err(), Error::Parse { line: 2, .. }));
        assert!(read_edge_list("n=2\n0 0 1").is_err());
    }

    #[test]
    fn csv_readers() {
        let c = read_coords_csv("id,lat,lon\n1,34.1,-118.2\n0,34.0,-118.0\n").unwrap();
        assert_eq!(c, Coords::LatLon(vec![(34.0, -118.0), (34.1, -118.2)]));
        assert_eq!(read_labels_csv("0,2\n1,0\n").unwrap(), vec![2, 0]);
        let f = read_features_csv("id,a,b\n0,1,2\n1,3,4\n").unwrap();
        assert_eq!(f.shape(), &[2, 2]);
        assert_eq!(f.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(read_labels_csv("0,1\n0,1\n").is_err());
        assert!(read_features_csv("0,1,2\n1,3\n").is_err());
    }

    proptest! {
        #[test]
        fn edge_list_round_trip_is_bit_exact(
            ws in prop::collection::vec(any::<u64>(), 1..40),
        ) {
            let n = 12;
            let mut edges = Vec::new();
            let mut k = 0;
            'outer: for i in 0..n {
                for j in (i + 1)..n {
                    if k == ws.len() { break 'outer; }
                    // arbitrary finite non-negative bit patterns
                    let w = f64::from_bits(ws[k] >> 2);
                    edges.push((i, j, w));
                    k += 1;
                }
            }
            let g = Graph::new(n, edges).unwrap();
            let back = read_edge_list(&write_edge_list(&g)).unwrap();
            prop_assert_eq!(back.edges().len(), g.edges().len());
            for (a, b) in back.edges().iter().zip(g.edges()) {
                prop_assert_eq!(a.w.to_bits(), b.w.to_bits());
            }
        }
    }
}
