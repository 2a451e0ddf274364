//! Per-round metrics and the summary quantities computed from them.

mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use report::{emit, write_csv, Report, ReportFormat, CSV_HEADER};

/// Test-set evaluation of the global model after a round, with cumulative
/// communication counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub uplink_units: u64,
    pub downlink_units: u64,
    pub peer_units: u64,
}

/// Records in strictly increasing round order with nondecreasing counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MetricsRecord>", into = "Vec<MetricsRecord>")]
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<MetricsRecord>) -> Result<Self> {
        let mut log = MetricsLog::new();
        for r in records {
            log.push(r)?;
        }
        Ok(log)
    }

    pub fn push(&mut self, rec: MetricsRecord) -> Result<()> {
        if let Some(prev) = self.records.last() {
            if rec.round <= prev.round {
                return Err(Error::Report(format!(
                    "round {} recorded after round {}",
                    rec.round, prev.round
                )));
            }
            if rec.uplink_units < prev.uplink_units
                || rec.downlink_units < prev.downlink_units
                || rec.peer_units < prev.peer_units
            {
                return Err(Error::Report(format!(
                    "communication counters decreased at round {}",
                    rec.round
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_accuracy).collect()
    }

    pub fn max_accuracy(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.test_accuracy)
            .reduce(f64::max)
    }
}

impl TryFrom<Vec<MetricsRecord>> for MetricsLog {
    type Error = Error;

    fn try_from(records: Vec<MetricsRecord>) -> Result<Self> {
        MetricsLog::from_records(records)
    }
}

impl From<MetricsLog> for Vec<MetricsRecord> {
    fn from(log: MetricsLog) -> Self {
        log.records
    }
}

/// First round whose test accuracy reaches `target`.
pub fn rounds_to_target(log: &MetricsLog, target: f64) -> Option<usize> {
    log.records
        .iter()
        .find(|r| r.test_accuracy >= target)
        .map(|r| r.round)
}

/// Communication cost relative to a baseline: the ratio of rounds needed to
/// reach `target`. Both reaching it at round 0 counts as parity.
pub fn cc_ratio(log: &MetricsLog, baseline: &MetricsLog, target: f64) -> Option<f64> {
    let ours = rounds_to_target(log, target)?;
    let theirs = rounds_to_target(baseline, target)?;
    match (ours, theirs) {
        (0, 0) => Some(1.0),
        (_, 0) => None,
        (a, b) => Some(a as f64 / b as f64),
    }
}

/// Sample mean and sample standard deviation of the last `window`
/// accuracies. A single-record window has zero spread.
pub fn tail_stats(log: &MetricsLog, window: usize) -> Result<(f64, f64)> {
    if window == 0 {
        return Err(Error::Report("tail window must be positive".into()));
    }
    if log.len() < window {
        return Err(Error::Report(format!(
            "log of {} records is shorter than tail window {window}",
            log.len()
        )));
    }
    let tail: Vec<f64> = log.records[log.len() - window..]
        .iter()
        .map(|r| r.test_accuracy)
        .collect();
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = tail.len() as f64;
    let mean = (tail.iter().sum::<f64>() / n).clamp(lo, hi);
    let stdev = if tail.len() < 2 {
        0.0
    } else {
        (tail.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((mean, stdev))
}

/// Headline numbers for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub target_accuracy: f64,
    /// Rounds to reach the target; absent if never reached.
    pub rnd_to_target: Option<usize>,
    pub max_accuracy: f64,
    /// Cost relative to a baseline run; absent without one.
    pub cc_ratio: Option<f64>,
    pub tail_window: usize,
    pub tail_mean: f64,
    pub tail_stdev: f64,
}

impl SummaryStats {
    /// Runs shorter than `window` are summarized over the whole log.
    pub fn compute(
        log: &MetricsLog,
        target: f64,
        window: usize,
        baseline: Option<&MetricsLog>,
    ) -> Result<Self> {
        let max_accuracy = log
            .max_accuracy()
            .ok_or_else(|| Error::Report("cannot summarize an empty log".into()))?;
        let tail_window = window.min(log.len()).max(1);
        let (tail_mean, tail_stdev) = tail_stats(log, tail_window)?;
        Ok(SummaryStats {
            target_accuracy: target,
            rnd_to_target: rounds_to_target(log, target),
            max_accuracy,
            cc_ratio: baseline.and_then(|b| cc_ratio(log, b, target)),
            tail_window,
            tail_mean,
            tail_stdev,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn log_of(accs: &[f64]) -> MetricsLog {
        MetricsLog::from_records(
            accs.iter()
                .enumerate()
                .map(|(i, &a)| MetricsRecord {
                    round: i,
                    test_accuracy: a,
                    test_loss: 1.0 - a,
                    uplink_units: 3 * i as u64,
                    downlink_units: 10 * i as u64,
                    peer_units: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Log whose accuracy first reaches 0.9 at `rnd`.
    fn reaching_at(rnd: usize) -> MetricsLog {
        log_of(&(0..=rnd + 3).map(|r| if r >= rnd { 0.91 } else { 0.5 }).collect::<Vec<_>>())
    }

    #[test]
    fn rounds_to_target_cases() {
        assert_eq!(rounds_to_target(&reaching_at(38), 0.9), Some(38));
        assert_eq!(rounds_to_target(&reaching_at(38), 0.95), None);
        assert_eq!(rounds_to_target(&log_of(&[0.95, 0.2]), 0.9), Some(0));
    }

    #[test]
    fn cc_ratio_cases() {
        let r = cc_ratio(&reaching_at(82), &reaching_at(48), 0.9).unwrap();
        assert_eq!(format!("{r:.2}"), "1.71");
        let r = cc_ratio(&reaching_at(8), &reaching_at(38), 0.9).unwrap();
        assert_eq!(format!("{r:.2}"), "0.21");
        let l = reaching_at(17);
        assert_eq!(cc_ratio(&l, &l, 0.9), Some(1.0));
        assert_eq!(cc_ratio(&log_of(&[0.95]), &log_of(&[0.95]), 0.9), Some(1.0));
        assert_eq!(cc_ratio(&l, &log_of(&[0.1, 0.2]), 0.9), None);
    }

    #[test]
    fn tail_stats_cases() {
        assert_eq!(tail_stats(&log_of(&[0.1, 0.75, 0.75, 0.75]), 3).unwrap(), (0.75, 0.0));
        let (m, s) = tail_stats(&log_of(&[0.3, 0.74, 0.76]), 2).unwrap();
        // oracle: two-value sample stdev = |a - b| / sqrt(2)
        assert!((m - 0.75).abs() < 1e-15);
        assert!((s - 0.02 / 2f64.sqrt()).abs() < 1e-12);
        let all = tail_stats(&log_of(&[0.2, 0.4]), 2).unwrap();
        assert!((all.0 - 0.3).abs() < 1e-15);
        assert!(matches!(tail_stats(&log_of(&[0.2]), 2), Err(Error::Report(_))));
        assert!(tail_stats(&log_of(&[0.2]), 0).is_err());
    }

    #[test]
    fn log_invariants_enforced() {
        let mut log = log_of(&[0.1, 0.2]);
        let mut r = *log.last().unwrap();
        assert!(log.push(r).is_err());
        r.round += 1;
        r.uplink_units -= 1;
        assert!(log.push(r).is_err());
    }

    #[test]
    fn summary_handles_short_logs() {
        let s = SummaryStats::compute(&log_of(&[0.5, 0.92, 0.9]), 0.9, 50, None).unwrap();
        assert_eq!(s.rnd_to_target, Some(1));
        assert_eq!(s.tail_window, 3);
        assert_eq!(s.max_accuracy, 0.92);
        assert!(s.cc_ratio.is_none());
        assert!(SummaryStats::compute(&MetricsLog::new(), 0.9, 5, None).is_err());
    }
}
