//! Evaluation report structure, emission (JSON and CSV), and reload
//! with a self-consistency check.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decompose::{aggregate_accuracy, AccuracySummary, ParallelGroup, ScoreRecord};
use crate::harness::HarnessError;
use crate::metrics::{
    compression_report, percentile_stats, CompressionReport, EfficiencyReport, LatencyStats,
};
use crate::speculative::SpecTrace;

/// Everything measured for one evaluation entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<ParallelGroup>,
    pub function_correct: bool,
    pub overall_correct: bool,
    /// Whether the sequential baseline's JSON output parsed and matched.
    pub baseline_correct: bool,
    /// Baseline output tokens (stop token included).
    pub n_baseline: usize,
    /// Total tokens across parallel heads.
    pub n_parallel_total: usize,
    /// Longest head's token count.
    pub n_bottleneck: usize,
    /// Batched decode steps of the parallel run.
    pub forward_passes: usize,
    pub t_baseline: f64,
    pub t_parallel: f64,
    pub t_parallel_fixed_batch: f64,
    /// Measured `t_baseline / t_parallel`.
    pub speedup: f64,
    /// Closed-form speedup from the latency model at the same overhead.
    pub speedup_formula: f64,
    /// Compression numerator/denominator, set on both-correct entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottleneck_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms_baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms_parallel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speculative: Option<SpecTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode_error: Option<String>,
}

impl EntryRecord {
    fn score_record(&self) -> ScoreRecord {
        ScoreRecord {
            entry_id: self.id.clone(),
            function_correct: self.function_correct,
            overall_correct: self.overall_correct,
        }
    }
}

/// Aggregated results of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// "simulated" or "wallclock".
    pub mode: String,
    pub shuffle_seed: u64,
    pub overhead_factor: f64,
    pub accuracy: AccuracySummary,
    pub latency_baseline: LatencyStats,
    pub latency_parallel: LatencyStats,
    pub speedup: LatencyStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<CompressionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<EfficiencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speculative: Option<SpecTrace>,
    pub entries: Vec<EntryRecord>,
}

impl EvalReport {
    /// Recomputes every aggregate from the per-entry records and
    /// compares to the stored values. Loading goes through this check.
    pub fn verify_self_consistency(&self) -> Result<(), HarnessError> {
        let scored: Vec<(ScoreRecord, Option<ParallelGroup>)> = self
            .entries
            .iter()
            .map(|e| (e.score_record(), e.group.clone()))
            .collect();
        let accuracy = aggregate_accuracy(&scored)?;
        if accuracy != self.accuracy {
            return Err(HarnessError::Inconsistent(format!(
                "accuracy {accuracy:?} != stored {:?}",
                self.accuracy
            )));
        }
        let wall = self.mode == "wallclock";
        let baseline_times: Vec<f64> = self
            .entries
            .iter()
            .map(|e| if wall { e.wall_ms_baseline.unwrap_or(0.0) } else { e.t_baseline })
            .collect();
        let parallel_times: Vec<f64> = self
            .entries
            .iter()
            .map(|e| if wall { e.wall_ms_parallel.unwrap_or(0.0) } else { e.t_parallel })
            .collect();
        let speedups: Vec<f64> = self.entries.iter().map(|e| e.speedup).collect();
        let latency_baseline = percentile_stats(&baseline_times)?;
        let latency_parallel = percentile_stats(&parallel_times)?;
        let speedup = percentile_stats(&speedups)?;
        if latency_baseline != self.latency_baseline
            || latency_parallel != self.latency_parallel
            || speedup != self.speedup
        {
            return Err(HarnessError::Inconsistent("latency statistics differ".into()));
        }
        let samples: Vec<crate::codec::CompressionSample> = self
            .entries
            .iter()
            .filter_map(|e| {
                Some(crate::codec::CompressionSample {
                    baseline_tokens: e.baseline_tokens?,
                    bottleneck_tokens: e.bottleneck_tokens?,
                    ratio: e.compression_ratio?,
                })
            })
            .collect();
        let compression = if samples.is_empty() {
            None
        } else {
            Some(compression_report(&samples)?)
        };
        if compression != self.compression {
            return Err(HarnessError::Inconsistent("compression report differs".into()));
        }
        let spec_traces: Vec<SpecTrace> =
            self.entries.iter().filter_map(|e| e.speculative).collect();
        let speculative = if spec_traces.is_empty() {
            None
        } else {
            Some(SpecTrace::aggregate(&spec_traces))
        };
        if speculative != self.speculative {
            return Err(HarnessError::Inconsistent("speculative aggregate differs".into()));
        }
        Ok(())
    }
}

pub fn emit_report_json(report: &EvalReport, path: &Path) -> Result<(), HarnessError> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, report)?;
    writeln!(file)?;
    Ok(())
}

/// Loads a JSON report and verifies it is self-consistent.
pub fn load_report(path: &Path) -> Result<EvalReport, HarnessError> {
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(path)?)?;
    report.verify_self_consistency()?;
    Ok(report)
}

fn fmt_opt<T: std::fmt::Display>(value: &Option<T>) -> String {
    value.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one flat CSV table per report section into `dir`:
/// `entries.csv`, `latency.csv`, `compression.csv`, `efficiency.csv`.
pub fn emit_report_csv(report: &EvalReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;

    let mut entries = String::from(
        "id,group_id,group_index,group_size,function_correct,overall_correct,baseline_correct,decode_error\n",
    );
    for e in &report.entries {
        let (gid, gidx, gsize) = match &e.group {
            Some(g) => (g.id.clone(), g.index.to_string(), g.size.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        entries.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.id,
            gid,
            gidx,
            gsize,
            e.function_correct,
            e.overall_correct,
            e.baseline_correct,
            fmt_opt(&e.decode_error).replace(',', ";"),
        ));
    }
    fs::write(dir.join("entries.csv"), entries)?;

    let mut latency = String::from("id,N_total,N_bottleneck,t_baseline,t_parallel,speedup\n");
    for e in &report.entries {
        latency.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.id, e.n_baseline, e.n_bottleneck, e.t_baseline, e.t_parallel, e.speedup
        ));
    }
    fs::write(dir.join("latency.csv"), latency)?;

    let mut compression = String::from("id,baseline_tokens,bottleneck_tokens,cr\n");
    for e in &report.entries {
        if e.compression_ratio.is_some() {
            compression.push_str(&format!(
                "{},{},{},{}\n",
                e.id,
                fmt_opt(&e.baseline_tokens),
                fmt_opt(&e.bottleneck_tokens),
                fmt_opt(&e.compression_ratio)
            ));
        }
    }
    fs::write(dir.join("compression.csv"), compression)?;

    let mut efficiency = String::from("batch,per_token_time,efficiency,overhead\n");
    if let Some(table) = &report.efficiency {
        for row in &table.rows {
            efficiency.push_str(&format!(
                "{},{},{},{}\n",
                row.batch, row.per_token_time, row.efficiency, row.overhead
            ));
        }
    }
    fs::write(dir.join("efficiency.csv"), efficiency)?;
    Ok(())
}

/// Writes a standalone efficiency sweep as CSV.
pub fn emit_efficiency_csv(table: &EfficiencyReport, path: &Path) -> Result<(), HarnessError> {
    let mut text = String::from("batch,per_token_time,efficiency,overhead\n");
    for row in &table.rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.batch, row.per_token_time, row.efficiency, row.overhead
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, ok: bool, t_base: f64, t_par: f64) -> EntryRecord {
        EntryRecord {
            id: id.into(),
            group: None,
            function_correct: ok,
            overall_correct: ok,
            baseline_correct: ok,
            n_baseline: 30,
            n_parallel_total: 12,
            n_bottleneck: 6,
            forward_passes: 6,
            t_baseline: t_base,
            t_parallel: t_par,
            t_parallel_fixed_batch: t_par,
            speedup: t_base / t_par,
            speedup_formula: t_base / t_par,
            baseline_tokens: ok.then_some(30),
            bottleneck_tokens: ok.then_some(6),
            compression_ratio: ok.then_some(5.0),
            wall_ms_baseline: None,
            wall_ms_parallel: None,
            speculative: None,
            decode_error: None,
        }
    }

    fn sample_report() -> EvalReport {
        let entries = vec![record("a", true, 40.0, 16.0), record("b", true, 50.0, 20.0)];
        let scored: Vec<_> = entries
            .iter()
            .map(|e| (e.score_record(), e.group.clone()))
            .collect();
        let accuracy = aggregate_accuracy(&scored).unwrap();
        let latency_baseline = percentile_stats(&[40.0, 50.0]).unwrap();
        let latency_parallel = percentile_stats(&[16.0, 20.0]).unwrap();
        let speedup = percentile_stats(&[2.5, 2.5]).unwrap();
        let samples: Vec<_> = entries
            .iter()
            .map(|e| crate::codec::CompressionSample {
                baseline_tokens: e.baseline_tokens.unwrap(),
                bottleneck_tokens: e.bottleneck_tokens.unwrap(),
                ratio: e.compression_ratio.unwrap(),
            })
            .collect();
        EvalReport {
            mode: "simulated".into(),
            shuffle_seed: 0,
            overhead_factor: 1.0,
            accuracy,
            latency_baseline,
            latency_parallel,
            speedup,
            compression: Some(compression_report(&samples).unwrap()),
            efficiency: None,
            speculative: None,
            entries,
        }
    }

    #[test]
    fn json_round_trip_and_consistency() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        emit_report_json(&report, &path).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(loaded, report);
    }

    #[test]
    fn tampered_aggregate_fails_consistency() {
        let mut report = sample_report();
        report.accuracy.overall = 0.25;
        assert!(report.verify_self_consistency().is_err());
    }

    #[test]
    fn latency_csv_has_pinned_columns() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        emit_report_csv(&report, dir.path()).unwrap();
        let latency = fs::read_to_string(dir.path().join("latency.csv")).unwrap();
        let mut lines = latency.lines();
        assert_eq!(
            lines.next().unwrap(),
            "id,N_total,N_bottleneck,t_baseline,t_parallel,speedup"
        );
        assert_eq!(lines.next().unwrap(), "a,30,6,40,16,2.5");
        assert_eq!(latency.lines().count(), 3);
    }

    #[test]
    fn empty_report_emits_headers_only() {
        let report = EvalReport {
            mode: "simulated".into(),
            shuffle_seed: 0,
            overhead_factor: 1.0,
            accuracy: aggregate_accuracy(&[]).unwrap(),
            latency_baseline: percentile_stats(&[0.0]).unwrap(),
            latency_parallel: percentile_stats(&[0.0]).unwrap(),
            speedup: percentile_stats(&[1.0]).unwrap(),
            compression: None,
            efficiency: None,
            speculative: None,
            entries: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report_csv(&report, dir.path()).unwrap();
        for name in ["entries.csv", "latency.csv", "compression.csv", "efficiency.csv"] {
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().count(), 1, "{name} should be header-only");
        }
    }
}
