//! File formats: waveform CSV, step-record JSON lines, Matrix Market and the
//! Krylov convergence trace.

use std::io::{self, BufRead, Write};

use exprb_core::sparse::CsrMatrix;
use exprb_core::{MnaSystem, StepRecord, TransientResult};

/// Node voltages (all non-ground nodes) in index order.
pub fn node_columns(sys: &MnaSystem) -> Vec<(String, usize)> {
    sys.unknown_names()[..sys.n_nodes()]
        .iter()
        .enumerate()
        .map(|(i, name)| (name.clone(), i))
        .collect()
}

/// Resolves recorded node names, case-insensitively. Empty selects every node.
pub fn select_columns(sys: &MnaSystem, names: &[String]) -> Result<Vec<(String, usize)>, String> {
    if names.is_empty() {
        return Ok(node_columns(sys));
    }
    names
        .iter()
        .map(|n| {
            let key = n.to_ascii_lowercase();
            sys.node_index(&key)
                .map(|i| (key.clone(), i))
                .ok_or_else(|| format!("unknown node `{n}`"))
        })
        .collect()
}

fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `time,<node>...` with 17 significant digits per value.
pub fn write_waveform_csv<W: Write>(
    out: W,
    result: &TransientResult,
    columns: &[(String, usize)],
) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (t, x) in result.times.iter().zip(&result.states) {
        let mut row = vec![sig17(*t)];
        row.extend(columns.iter().map(|&(_, i)| sig17(x[i])));
        w.write_record(&row)?;
    }
    w.flush()
}

/// One JSON object per step record.
pub fn write_records_jsonl<W: Write>(mut out: W, records: &[StepRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes `step,j,h_sub,residual,h_next`, one row per Arnoldi check.
pub fn write_trace_csv<W: Write>(out: W, records: &[StepRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "j", "h_sub", "residual", "h_next"])?;
    for (k, r) in records.iter().enumerate() {
        for row in &r.krylov_trace {
            w.write_record([
                k.to_string(),
                row.j.to_string(),
                sig17(row.h_sub),
                sig17(row.residual),
                sig17(row.h_next),
            ])?;
        }
    }
    w.flush()
}

/// Matrix Market coordinate format, 1-based indices.
pub fn write_matrix_market<W: Write>(mut out: W, a: &CsrMatrix) -> io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for (r, c, v) in a.iter() {
        writeln!(out, "{} {} {:e}", r + 1, c + 1, v)?;
    }
    out.flush()
}

/// Reads a coordinate `real general` Matrix Market file.
pub fn read_matrix_market<R: BufRead>(input: R) -> Result<CsrMatrix, String> {
    let mut lines = input.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| e.to_string())?,
        None => return Err("empty file".into()),
    };
    let lower = header.to_ascii_lowercase();
    if !lower.starts_with("%%matrixmarket matrix coordinate real general") {
        return Err(format!("unsupported header `{header}`"));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for (no, line) in lines {
        let line = line.map_err(|e| e.to_string())?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        let bad = || format!("line {}: malformed `{t}`", no + 1);
        if f.len() != 3 {
            return Err(bad());
        }
        match size {
            None => {
                let p = |s: &str| s.parse::<usize>().map_err(|_| bad());
                size = Some((p(f[0])?, p(f[1])?, p(f[2])?));
            }
            Some((nr, nc, _)) => {
                let r: usize = f[0].parse().map_err(|_| bad())?;
                let c: usize = f[1].parse().map_err(|_| bad())?;
                let v: f64 = f[2].parse().map_err(|_| bad())?;
                if r == 0 || c == 0 || r > nr || c > nc {
                    return Err(format!("line {}: index out of range", no + 1));
                }
                entries.push((r - 1, c - 1, v));
            }
        }
    }
    let (nr, nc, nnz) = size.ok_or("missing size line")?;
    if entries.len() != nnz {
        return Err(format!("expected {nnz} entries, found {}", entries.len()));
    }
    Ok(CsrMatrix::from_triplets(nr, nc, &entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{build_mna, parse_netlist};
    use exprb_core::integrate::{transient, StepControl};
    use exprb_core::Method;

    #[test]
    fn matrix_market_round_trip() {
        let a = CsrMatrix::from_dense(&[&[1.0, 0.0, -2.5], &[0.0, 0.0, 0.0], &[1e-300, 3.0, 0.0]]);
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n3 3 4\n1 1 1e0\n"));
        let b = read_matrix_market(&buf[..]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_market_rejects_bad_input() {
        assert!(read_matrix_market(&b"%%MatrixMarket matrix array real general\n"[..]).is_err());
        assert!(read_matrix_market(
            &b"%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n"[..]
        )
        .is_err());
        assert!(read_matrix_market(
            &b"%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n"[..]
        )
        .is_err());
    }

    #[test]
    fn waveform_csv_layout() {
        let doc = parse_netlist("V1 in 0 1\nR1 in out 1\nC1 out 0 1\n").unwrap();
        let sys = build_mna(&doc).unwrap();
        let res = transient(&sys, Method::Er, &StepControl::default(), 1.0, 0.1).unwrap();
        let cols = select_columns(&sys, &["OUT".to_string()]).unwrap();
        let mut buf = Vec::new();
        write_waveform_csv(&mut buf, &res, &cols).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,out"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0.0000000000000000e0");
        let mut prev = -1.0;
        for l in text.lines().skip(1) {
            let t: f64 = l.split(',').next().unwrap().parse().unwrap();
            assert!(t > prev);
            prev = t;
        }
        assert!(select_columns(&sys, &["nope".to_string()]).is_err());
    }

    #[test]
    fn records_are_json_lines() {
        let rec = StepRecord {
            t: 1.0,
            h_accepted: 0.5,
            lu_count: 1,
            krylov_dims: vec![3, 4],
            ..StepRecord::default()
        };
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &[rec.clone(), rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: StepRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.krylov_dims, vec![3, 4]);
        assert!(!text.contains("krylov_trace"));
    }
}
