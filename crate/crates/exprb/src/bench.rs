//! Method comparison against a tiny-step BENR reference.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use exprb_core::integrate::{cost_report, transient, StepControl};
use exprb_core::{Method, MnaSystem, TransientResult};
use serde::Serialize;

use crate::output::write_records_jsonl;

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub methods: Vec<Method>,
    pub t_stop: f64,
    /// First-step suggestion for the adaptive runs.
    pub h_hint: f64,
    pub ctl: StepControl,
    /// Fixed BENR step of the reference run.
    pub h_ref: f64,
    /// Unknown indices compared against the reference.
    pub nodes: Vec<usize>,
    /// Run methods concurrently; timings then come from a second, serial pass.
    pub parallel: bool,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.methods.is_empty() {
            return Err("no methods selected".into());
        }
        if !(self.t_stop > 0.0 && self.h_hint > 0.0 && self.h_ref > 0.0) {
            return Err("t_stop, step hint and h_ref must be positive".into());
        }
        if self.h_ref > self.h_hint / 10.0 {
            return Err(format!(
                "reference step {:e} must not exceed a tenth of the step hint {:e}",
                self.h_ref, self.h_hint
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    /// `None` when the run succeeded, otherwise the failure reason.
    pub failure: Option<String>,
    pub steps: usize,
    pub nr_avg: f64,
    pub m_avg: f64,
    pub lu_total: usize,
    pub rejects: usize,
    pub wall_s: f64,
    /// BENR wall time over this method's wall time.
    pub speedup: Option<f64>,
    pub max_err: f64,
    pub rms_err: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub reference_steps: usize,
    pub rows: Vec<BenchRow>,
    pub results: Vec<(Method, Option<TransientResult>)>,
}

/// Max and RMS deviation of `res` from `reference` over the samples of `res`.
pub fn waveform_error(
    res: &TransientResult,
    reference: &TransientResult,
    nodes: &[usize],
) -> (f64, f64) {
    let mut max = 0.0f64;
    let mut sq = 0.0;
    let mut count = 0usize;
    for (t, x) in res.times.iter().zip(&res.states) {
        for &i in nodes {
            let d = (x[i] - reference.interpolate(i, *t)).abs();
            max = max.max(d);
            sq += d * d;
            count += 1;
        }
    }
    let rms = if count == 0 {
        0.0
    } else {
        (sq / count as f64).sqrt()
    };
    (max, rms)
}

fn timed(
    sys: &MnaSystem,
    m: Method,
    spec: &BenchSpec,
) -> (exprb_core::Result<TransientResult>, Duration) {
    let start = Instant::now();
    let r = transient(sys, m, &spec.ctl, spec.t_stop, spec.h_hint);
    (r, start.elapsed())
}

pub fn run_bench(sys: &MnaSystem, spec: &BenchSpec) -> Result<BenchReport, String> {
    spec.validate()?;
    let ref_ctl = StepControl {
        fixed_step: true,
        ..spec.ctl
    };
    let reference = transient(sys, Method::Benr, &ref_ctl, spec.t_stop, spec.h_ref)
        .map_err(|e| format!("reference run failed: {e}"))?;

    let mut runs: Vec<(exprb_core::Result<TransientResult>, Duration)> = if spec.parallel {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = spec
                .methods
                .iter()
                .map(|&m| s.spawn(move || timed(sys, m, spec)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench worker panicked"))
                .collect()
        });
        results
            .into_iter()
            .zip(&spec.methods)
            .map(|((r, _), &m)| {
                let wall = if r.is_ok() {
                    timed(sys, m, spec).1
                } else {
                    Duration::ZERO
                };
                (r, wall)
            })
            .collect()
    } else {
        spec.methods.iter().map(|&m| timed(sys, m, spec)).collect()
    };

    let benr_wall = spec
        .methods
        .iter()
        .zip(&runs)
        .find(|(m, (r, _))| **m == Method::Benr && r.is_ok())
        .map(|(_, (_, d))| d.as_secs_f64());

    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (&m, (r, wall)) in spec.methods.iter().zip(runs.drain(..)) {
        let wall_s = wall.as_secs_f64();
        match r.map_err(|e| e.to_string()).and_then(|res| {
            cost_report(&res.records)
                .map(|c| (res, c))
                .map_err(|e| e.to_string())
        }) {
            Ok((res, cost)) => {
                let (max_err, rms_err) = waveform_error(&res, &reference, &spec.nodes);
                rows.push(BenchRow {
                    method: m.name().into(),
                    failure: None,
                    steps: cost.steps,
                    nr_avg: cost.nr_avg,
                    m_avg: cost.m_avg,
                    lu_total: cost.lu_total,
                    rejects: cost.rejects,
                    wall_s,
                    speedup: benr_wall.map(|b| b / wall_s.max(1e-12)),
                    max_err,
                    rms_err,
                });
                results.push((m, Some(res)));
            }
            Err(reason) => {
                rows.push(BenchRow {
                    method: m.name().into(),
                    failure: Some(reason),
                    steps: 0,
                    nr_avg: 0.0,
                    m_avg: 0.0,
                    lu_total: 0,
                    rejects: 0,
                    wall_s: 0.0,
                    speedup: None,
                    max_err: f64::NAN,
                    rms_err: f64::NAN,
                });
                results.push((m, None));
            }
        }
    }
    Ok(BenchReport {
        reference_steps: reference.records.len(),
        rows,
        results,
    })
}

impl BenchRow {
    fn status(&self) -> String {
        match &self.failure {
            None => "OK".into(),
            Some(r) => format!("FAILED({r})"),
        }
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into());
        if self.failure.is_some() {
            let mut c = vec![self.method.clone(), self.status()];
            c.extend(std::iter::repeat_n("-".to_string(), 9));
            return c;
        }
        vec![
            self.method.clone(),
            self.status(),
            self.steps.to_string(),
            format!("{:.3}", self.nr_avg),
            format!("{:.3}", self.m_avg),
            self.lu_total.to_string(),
            self.rejects.to_string(),
            format!("{:.6}", self.wall_s),
            opt(self.speedup),
            format!("{:.3e}", self.max_err),
            format!("{:.3e}", self.rms_err),
        ]
    }
}

const COLUMNS: [&str; 11] = [
    "method", "status", "steps", "nr_avg", "m_avg", "lu_total", "rejects", "wall_s", "speedup",
    "max_err", "rms_err",
];

impl BenchReport {
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.cells())?;
        }
        w.flush()
    }

    /// Writes `bench.csv`, `bench.txt` and one `records_<method>.jsonl` per
    /// successful method into `dir`.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("bench.csv"))?)?;
        std::fs::write(dir.join("bench.txt"), self.to_string())?;
        for (m, res) in &self.results {
            if let Some(res) = res {
                let name = format!("records_{}.jsonl", m.name().to_ascii_lowercase());
                let f = io::BufWriter::new(std::fs::File::create(dir.join(name))?);
                write_records_jsonl(f, &res.records)?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<String>> = self.rows.iter().map(BenchRow::cells).collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|k| {
                rows.iter()
                    .map(|r| r[k].len())
                    .chain([COLUMNS[k].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        writeln!(f, "reference: BENR, {} fixed steps", self.reference_steps)?;
        let line = |cells: Vec<&str>| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(f, "{}", line(COLUMNS.to_vec()))?;
        for r in &rows {
            writeln!(f, "{}", line(r.iter().map(String::as_str).collect()))?;
        }
        Ok(())
    }
}
