//! Hyperparameter sweeps: one experiment per point of a cartesian grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::{Child, Command, Stdio};

use log::{info, warn};
use ringfed_core::metrics::Report;
use ringfed_core::seed::{derive_seed, tag};

use crate::error::{CliError, CliResult};
use crate::settings::{spec, Settings};

/// Keys a grid may not vary.
const FIXED: &[&str] = &["out", "format"];

/// Learning rate, momentum and decay grid used for tuning every algorithm.
pub fn table3_grid() -> Vec<(String, Vec<String>)> {
    let vals = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    vec![
        ("lr".into(), vals(&["1e-4", "5e-4", "1e-3", "5e-3"])),
        ("momentum".into(), vals(&["0.9", "1.0"])),
        ("lr-decay".into(), vals(&["0.98", "0.99", "1.0"])),
    ]
}

/// Parses `key=v1,v2,...`.
pub fn parse_grid_entry(raw: &str) -> CliResult<(String, Vec<String>)> {
    let (k, vs) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("grid entry '{raw}' is not key=v1,v2,...")))?;
    let values: Vec<String> = vs
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage(format!("grid entry '{raw}' has no values")));
    }
    Ok((k.trim().to_ascii_lowercase().replace('_', "-"), values))
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: Settings,
    /// Varied keys in order; the first key varies slowest.
    pub grid: Vec<(String, Vec<String>)>,
}

/// One grid point with its fully determined settings.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub assignments: Vec<(String, String)>,
    pub settings: Settings,
}

impl SweepSpec {
    pub fn new(base: Settings, grid: Vec<(String, Vec<String>)>) -> CliResult<Self> {
        let mut merged: Vec<(String, Vec<String>)> = Vec::new();
        for (k, vs) in grid {
            if spec(&k).is_none() {
                return Err(CliError::Usage(format!("unknown grid key '{k}'")));
            }
            if FIXED.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("'{k}' cannot be varied in a sweep")));
            }
            match merged.iter_mut().find(|(mk, _)| *mk == k) {
                Some(slot) => slot.1 = vs,
                None => merged.push((k, vs)),
            }
        }
        Ok(SweepSpec { base, grid: merged })
    }

    pub fn len(&self) -> usize {
        self.grid.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in row-major order. Each point's seed is derived from the
    /// base seed (or the point's own `seed` value) and its index.
    pub fn points(&self) -> CliResult<Vec<SweepPoint>> {
        let n = self.len();
        let mut points = Vec::with_capacity(n);
        for index in 0..n {
            let mut rem = index;
            let mut assignments = Vec::with_capacity(self.grid.len());
            for (k, vs) in self.grid.iter().rev() {
                assignments.push((k.clone(), vs[rem % vs.len()].clone()));
                rem /= vs.len();
            }
            assignments.reverse();
            let mut settings = self.base.clone();
            for (k, v) in &assignments {
                settings.set(k, v.clone())?;
            }
            let base_seed: u64 = settings
                .get("seed")
                .unwrap_or("0")
                .parse()
                .map_err(|e| CliError::Usage(format!("invalid seed: {e}")))?;
            settings.set("seed", derive_seed(base_seed, &[tag::SWEEP, index as u64]).to_string())?;
            points.push(SweepPoint {
                index,
                assignments,
                settings,
            });
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub algorithm: String,
    pub assignments: Vec<(String, String)>,
    pub seed: String,
    pub outcome: Result<RunSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rnd_to_target: Option<usize>,
    pub max_accuracy: f64,
    pub tail_mean: f64,
    pub tail_stdev: f64,
}

/// Runs one point in this process and writes its JSON report.
pub type InProcessRunner<'a> = dyn FnMut(&Settings, &Path) -> CliResult<()> + 'a;

pub fn run_sweep(
    spec: &SweepSpec,
    out_dir: &Path,
    parallel: usize,
    runner: &mut InProcessRunner<'_>,
) -> CliResult<Vec<SweepRow>> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", out_dir.display()))
    })?;
    let points = spec.points()?;
    eprintln!("sweep: {} run(s) into {}", points.len(), out_dir.display());

    let paths = |p: &SweepPoint| {
        let stem = format!("run-{:03}", p.index);
        (out_dir.join(format!("{stem}.cfg")), out_dir.join(format!("{stem}.json")), out_dir.join(format!("{stem}.log")))
    };
    for p in &points {
        let (cfg, _, _) = paths(p);
        std::fs::write(&cfg, p.settings.to_text())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", cfg.display())))?;
    }

    let mut failures: BTreeMap<usize, String> = BTreeMap::new();
    if parallel <= 1 {
        for p in &points {
            let (_, report, _) = paths(p);
            info!("sweep point {} of {}", p.index + 1, points.len());
            if let Err(e) = runner(&p.settings, &report) {
                warn!("run {} failed: {e}", p.index);
                failures.insert(p.index, e.to_string());
            }
        }
    } else {
        let exe = std::env::current_exe()
            .map_err(|e| CliError::Runtime(format!("cannot locate own executable: {e}")))?;
        let mut queue = points.iter();
        let mut running: Vec<(usize, Child)> = Vec::new();
        loop {
            while running.len() < parallel {
                let Some(p) = queue.next() else { break };
                let (cfg, report, logf) = paths(p);
                let log = std::fs::File::create(&logf)
                    .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", logf.display())))?;
                let child = Command::new(&exe)
                    .arg("--config")
                    .arg(&cfg)
                    .arg("--out")
                    .arg(&report)
                    .arg("--format")
                    .arg("json")
                    .stdout(Stdio::null())
                    .stderr(log)
                    .spawn()
                    .map_err(|e| CliError::Runtime(format!("cannot spawn run {}: {e}", p.index)))?;
                running.push((p.index, child));
            }
            if running.is_empty() {
                break;
            }
            let (index, mut child) = running.remove(0);
            let status = child
                .wait()
                .map_err(|e| CliError::Runtime(format!("run {index}: {e}")))?;
            if !status.success() {
                failures.insert(index, format!("exited with {status}; see run-{index:03}.log"));
            }
        }
    }

    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| {
            let (_, report, _) = paths(p);
            let outcome = match failures.get(&p.index) {
                Some(msg) => Err(msg.clone()),
                None => read_summary(&report),
            };
            SweepRow {
                index: p.index,
                algorithm: p.settings.get("algorithm").unwrap_or("").to_string(),
                assignments: p.assignments.clone(),
                seed: p.settings.get("seed").unwrap_or("").to_string(),
                outcome,
            }
        })
        .collect();

    write_text(&out_dir.join("sweep.csv"), &sweep_table(&rows))?;
    write_text(&out_dir.join("best.csv"), &best_table(&rows))?;
    Ok(rows)
}

fn read_summary(path: &Path) -> Result<RunSummary, String> {
    let report = Report::read_json(path).map_err(|e| e.to_string())?;
    let s = report
        .summary
        .ok_or_else(|| format!("{} has no summary", path.display()))?;
    Ok(RunSummary {
        rnd_to_target: s.rnd_to_target,
        max_accuracy: s.max_accuracy,
        tail_mean: s.tail_mean,
        tail_stdev: s.tail_stdev,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn fmt_row(out: &mut String, row: &SweepRow) {
    let vals: Vec<&str> = row
        .assignments
        .iter()
        .filter(|(k, _)| k != "algorithm")
        .map(|(_, v)| v.as_str())
        .collect();
    let _ = write!(out, "{},{},", row.index, row.algorithm);
    for v in vals {
        let _ = write!(out, "{v},");
    }
    let _ = write!(out, "{},", row.seed);
    match &row.outcome {
        Ok(s) => {
            let rnd = s.rnd_to_target.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "ok,{rnd},{:.6},{:.6},{:.6}",
                s.max_accuracy, s.tail_mean, s.tail_stdev
            );
        }
        Err(e) => {
            let _ = writeln!(out, "failed: {},,,,", e.replace(',', ";"));
        }
    }
}

fn header(rows: &[SweepRow]) -> String {
    let keys: Vec<&str> = rows
        .first()
        .map(|r| {
            r.assignments
                .iter()
                .map(|(k, _)| k.as_str())
                .filter(|k| *k != "algorithm")
                .collect()
        })
        .unwrap_or_default();
    let mut h = String::from("index,algorithm,");
    for k in keys {
        h.push_str(k);
        h.push(',');
    }
    h.push_str("run_seed,status,rnd_to_target,max_accuracy,tail_mean,tail_stdev\n");
    h
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = header(rows);
    for r in rows {
        fmt_row(&mut out, r);
    }
    out
}

/// The successful run with the highest tail mean for each algorithm; ties
/// go to the lower index.
pub fn best_rows(rows: &[SweepRow]) -> Vec<&SweepRow> {
    let mut best: BTreeMap<&str, &SweepRow> = BTreeMap::new();
    for r in rows {
        let Ok(s) = &r.outcome else { continue };
        match best.get(r.algorithm.as_str()) {
            Some(b) if matches!(&b.outcome, Ok(bs) if bs.tail_mean >= s.tail_mean) => {}
            _ => {
                best.insert(&r.algorithm, r);
            }
        }
    }
    best.into_values().collect()
}

pub fn best_table(rows: &[SweepRow]) -> String {
    let mut out = header(rows);
    for r in best_rows(rows) {
        fmt_row(&mut out, r);
    }
    out
}
