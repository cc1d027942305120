//! The quantitative formulas: latency models, compression ratio, batch
//! efficiency, percentile statistics, and combined speedup.
//!
//! All times are dimensionless simulated units unless a caller feeds in
//! wall-clock measurements. Percentiles use the nearest-rank definition
//! (the ceil(p*n)-th order statistic), which is deterministic and
//! interpolation-free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::CostModel;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("head count list must be nonempty")]
    EmptyHeads,
    #[error("bottleneck token count must be positive")]
    ZeroBottleneck,
    #[error("batch-efficiency input must include batch size 1")]
    MissingBaselineBatch,
    #[error("per-token times must be positive")]
    NonPositiveTime,
    #[error("sample set must be nonempty")]
    EmptySamples,
}

/// Closed-form latency constants: prefill time, per-token decode time,
/// and the multiplicative parallelization overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub t_prefill: f64,
    pub t_decode: f64,
    #[serde(default = "default_overhead_factor")]
    pub overhead_factor: f64,
}

/// Average per-token overhead measured for 8-way batched decoding.
pub fn default_overhead_factor() -> f64 {
    1.082
}

impl LatencyModel {
    pub fn new(t_prefill: f64, t_decode: f64) -> Self {
        LatencyModel {
            t_prefill,
            t_decode,
            overhead_factor: default_overhead_factor(),
        }
    }

    pub fn with_overhead(mut self, overhead_factor: f64) -> Self {
        self.overhead_factor = overhead_factor;
        self
    }
}

/// Sequential end-to-end latency: `T_p + N * T_d`.
pub fn latency_baseline(model: &LatencyModel, total_tokens: usize) -> f64 {
    model.t_prefill + total_tokens as f64 * model.t_decode
}

/// Parallel end-to-end latency, dominated by the longest head:
/// `T_p + max(N_i) * T_d * overhead`.
pub fn latency_parallel(model: &LatencyModel, tokens_per_head: &[usize]) -> Result<f64, MetricsError> {
    let longest = tokens_per_head.iter().copied().max().ok_or(MetricsError::EmptyHeads)?;
    Ok(model.t_prefill + longest as f64 * model.t_decode * model.overhead_factor)
}

/// Baseline tokens divided by bottleneck-head tokens.
pub fn compression_ratio(baseline_tokens: f64, bottleneck_tokens: f64) -> Result<f64, MetricsError> {
    if bottleneck_tokens <= 0.0 {
        return Err(MetricsError::ZeroBottleneck);
    }
    Ok(baseline_tokens / bottleneck_tokens)
}

/// Product of the compression ratio and the speculative forward-pass
/// reduction: the two accelerations act on different axes.
pub fn combined_speedup(compression: f64, spec_reduction: f64) -> f64 {
    compression * spec_reduction
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Nearest-rank percentile summary of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean: f64,
}

pub fn percentile_stats(samples: &[f64]) -> Result<LatencyStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("latency samples must not be NaN"));
    Ok(LatencyStats {
        p50: nearest_rank(&sorted, 0.50),
        p90: nearest_rank(&sorted, 0.90),
        p95: nearest_rank(&sorted, 0.95),
        p99: nearest_rank(&sorted, 0.99),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

/// Mean and nearest-rank P50/P90 of one report column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
}

fn column_stats(values: &[f64]) -> Result<ColumnStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("column values must not be NaN"));
    Ok(ColumnStats {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: nearest_rank(&sorted, 0.50),
        p90: nearest_rank(&sorted, 0.90),
    })
}

/// Aggregated compression statistics over a both-correct sample subset.
///
/// The mean ratio is reported two ways because they genuinely differ:
/// `mean_of_ratios` averages per-sample ratios, `ratio_of_means` divides
/// the mean baseline count by the mean bottleneck count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub samples: usize,
    pub baseline_tokens: ColumnStats,
    pub bottleneck_tokens: ColumnStats,
    pub ratio: ColumnStats,
    pub mean_of_ratios: f64,
    pub ratio_of_means: f64,
}

/// Builds the aggregate report from per-sample token counts.
pub fn compression_report(
    samples: &[crate::codec::CompressionSample],
) -> Result<CompressionReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if samples.iter().any(|s| s.bottleneck_tokens == 0) {
        return Err(MetricsError::ZeroBottleneck);
    }
    let baseline: Vec<f64> = samples.iter().map(|s| s.baseline_tokens as f64).collect();
    let bottleneck: Vec<f64> = samples.iter().map(|s| s.bottleneck_tokens as f64).collect();
    let ratios: Vec<f64> = samples.iter().map(|s| s.ratio).collect();
    let baseline_stats = column_stats(&baseline)?;
    let bottleneck_stats = column_stats(&bottleneck)?;
    let ratio_stats = column_stats(&ratios)?;
    Ok(CompressionReport {
        samples: samples.len(),
        baseline_tokens: baseline_stats,
        bottleneck_tokens: bottleneck_stats,
        ratio: ratio_stats,
        mean_of_ratios: ratio_stats.mean,
        ratio_of_means: baseline_stats.mean / bottleneck_stats.mean,
    })
}

/// One batch size of the scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub batch: usize,
    pub per_token_time: f64,
    /// `T_d(1) / T_d(B)`; 1.0 means batching is free.
    pub efficiency: f64,
    /// `T_d(B) / T_d(1) - 1`, the same data as relative overhead.
    pub overhead: f64,
}

/// Per-token decode efficiency across batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
}

/// Builds the efficiency table from measured per-token times. Batch
/// size 1 must be present; it anchors the definition.
pub fn batch_efficiency(times: &[(usize, f64)]) -> Result<EfficiencyReport, MetricsError> {
    if times.iter().any(|&(_, t)| t <= 0.0) {
        return Err(MetricsError::NonPositiveTime);
    }
    let base = times
        .iter()
        .find(|&&(b, _)| b == 1)
        .map(|&(_, t)| t)
        .ok_or(MetricsError::MissingBaselineBatch)?;
    let mut rows: Vec<EfficiencyRow> = times
        .iter()
        .map(|&(batch, per_token_time)| EfficiencyRow {
            batch,
            per_token_time,
            efficiency: base / per_token_time,
            overhead: per_token_time / base - 1.0,
        })
        .collect();
    rows.sort_by_key(|r| r.batch);
    Ok(EfficiencyReport { rows })
}

/// Evaluates the roofline cost model over a batch list and reports the
/// resulting efficiency curve.
pub fn efficiency_sweep(cost: &CostModel, batches: &[usize]) -> Result<EfficiencyReport, MetricsError> {
    let mut times: Vec<(usize, f64)> = batches.iter().map(|&b| (b, cost.step_time(b))).collect();
    if !times.iter().any(|&(b, _)| b == 1) {
        times.push((1, cost.step_time(1)));
    }
    batch_efficiency(&times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_latency_is_linear() {
        let model = LatencyModel::new(10.0, 1.0).with_overhead(1.0);
        assert_eq!(latency_baseline(&model, 36), 46.0);
        assert_eq!(latency_baseline(&model, 0), 10.0);
    }

    #[test]
    fn parallel_latency_tracks_longest_head() {
        let model = LatencyModel::new(10.0, 1.0).with_overhead(1.0);
        let heads = [6, 3, 1, 1, 1, 1, 1];
        assert_eq!(latency_parallel(&model, &heads).unwrap(), 16.0);

        let with_overhead = model.with_overhead(1.082);
        let t = latency_parallel(&with_overhead, &heads).unwrap();
        assert!((t - 16.492).abs() < 1e-9);

        assert_eq!(latency_parallel(&model, &[]).err(), Some(MetricsError::EmptyHeads));
    }

    #[test]
    fn default_overhead_is_the_measured_average() {
        let model = LatencyModel::new(0.0, 1.0);
        assert!((model.overhead_factor - 1.082).abs() < 1e-12);
    }

    #[test]
    fn compression_ratio_reference_values() {
        // Reported mean row: 44.1 baseline vs 8.7 compressed.
        let mean = compression_ratio(44.1, 8.7).unwrap();
        assert!(mean > 5.06 && mean < 5.07);
        // Median row divides exactly.
        assert_eq!(compression_ratio(36.0, 6.0).unwrap(), 6.0);
        assert_eq!(compression_ratio(12.0, 12.0).unwrap(), 1.0);
        assert_eq!(compression_ratio(1.0, 0.0).err(), Some(MetricsError::ZeroBottleneck));
    }

    #[test]
    fn compression_ratio_decreases_in_bottleneck() {
        let mut prev = f64::INFINITY;
        for bottleneck in 1..50 {
            let cr = compression_ratio(100.0, bottleneck as f64).unwrap();
            assert!(cr < prev);
            prev = cr;
        }
    }

    #[test]
    fn combined_speedup_reference() {
        let combined = combined_speedup(4.5, 3.24);
        assert!((combined - 14.58).abs() < 0.001);
        assert!((combined - 14.6).abs() < 0.05);
        assert_eq!(combined_speedup(1.0, 2.5), 2.5);
        assert_eq!(combined_speedup(1.0, 1.0), 1.0);
    }

    #[test]
    fn nearest_rank_percentiles_by_hand() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let stats = percentile_stats(&samples).unwrap();
        assert_eq!(stats.p50, 50.0);
        assert_eq!(stats.p90, 90.0);
        assert_eq!(stats.p95, 95.0);
        assert_eq!(stats.p99, 99.0);
        assert_eq!(stats.mean, 50.5);
    }

    #[test]
    fn single_sample_percentiles_collapse() {
        let stats = percentile_stats(&[7.25]).unwrap();
        assert_eq!(stats.p50, 7.25);
        assert_eq!(stats.p99, 7.25);
        assert_eq!(stats.mean, 7.25);
        assert_eq!(percentile_stats(&[]).err(), Some(MetricsError::EmptySamples));
    }

    #[test]
    fn tail_consistency_ratio_reference() {
        // Sample set shaped so P50 = 51.0 and P90 = 74.5 under nearest rank.
        let samples = [40.0, 45.0, 48.0, 50.0, 51.0, 60.0, 65.0, 70.0, 74.5, 90.0];
        let stats = percentile_stats(&samples).unwrap();
        assert_eq!(stats.p50, 51.0);
        assert_eq!(stats.p90, 74.5);
        assert!((stats.p90 / stats.p50 - 1.4608).abs() < 1e-3);
    }

    #[test]
    fn percentiles_are_permutation_invariant_and_monotone() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut samples: Vec<f64> = (0..137).map(|i| ((i * 23) % 71) as f64 / 3.0).collect();
        let reference = percentile_stats(&samples).unwrap();
        for _ in 0..10 {
            samples.shuffle(&mut rng);
            let stats = percentile_stats(&samples).unwrap();
            assert_eq!(stats, reference);
            assert!(stats.p50 <= stats.p90);
            assert!(stats.p90 <= stats.p95);
            assert!(stats.p95 <= stats.p99);
            let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(stats.mean >= min && stats.mean <= max);
        }
    }

    #[test]
    fn efficiency_plateau_then_decline() {
        let cost = CostModel {
            t_prefill_per_token: 0.1,
            t_mem: 1.0,
            t_compute_per_seq: 0.05,
            parallel_overhead: 1.0,
        };
        let report = efficiency_sweep(&cost, &[1, 2, 4, 8, 16, 32, 64, 128]).unwrap();
        let eff: Vec<f64> = report.rows.iter().map(|r| r.efficiency).collect();
        assert_eq!(eff[0], 1.0);
        for row in &report.rows {
            if (row.batch as f64) <= cost.knee() {
                assert_eq!(row.efficiency, 1.0, "batch {}", row.batch);
            }
        }
        assert!((eff[5] - 0.625).abs() < 1e-9);
        assert!((eff[7] - 0.15625).abs() < 1e-9);
        for pair in eff.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn efficiency_definition_reproduces_reference_row() {
        // A per-token time 1/0.930 of the B=1 time prints as 93.0%.
        let report = batch_efficiency(&[(1, 2.0), (8, 2.0 / 0.930)]).unwrap();
        assert!((report.rows[1].efficiency - 0.930).abs() < 1e-12);
        // The same data viewed as overhead: +8.2% maps to 1/1.082.
        let report = batch_efficiency(&[(1, 2.0), (8, 2.0 * 1.082)]).unwrap();
        assert!((report.rows[1].overhead - 0.082).abs() < 1e-12);
    }

    #[test]
    fn efficiency_requires_batch_one_and_positive_times() {
        assert_eq!(
            batch_efficiency(&[(2, 1.0)]).err(),
            Some(MetricsError::MissingBaselineBatch)
        );
        assert_eq!(
            batch_efficiency(&[(1, 0.0)]).err(),
            Some(MetricsError::NonPositiveTime)
        );
    }

    #[test]
    fn compression_report_emits_both_aggregations() {
        use crate::codec::CompressionSample;
        let samples = vec![
            CompressionSample {
                baseline_tokens: 40,
                bottleneck_tokens: 8,
                ratio: 5.0,
            },
            CompressionSample {
                baseline_tokens: 60,
                bottleneck_tokens: 10,
                ratio: 6.0,
            },
            CompressionSample {
                baseline_tokens: 30,
                bottleneck_tokens: 10,
                ratio: 3.0,
            },
        ];
        let report = compression_report(&samples).unwrap();
        assert_eq!(report.samples, 3);
        assert!((report.mean_of_ratios - (5.0 + 6.0 + 3.0) / 3.0).abs() < 1e-12);
        let ratio_of_means = (40.0 + 60.0 + 30.0) / (8.0 + 10.0 + 10.0);
        assert!((report.ratio_of_means - ratio_of_means).abs() < 1e-12);
        assert_eq!(report.baseline_tokens.p50, 40.0);
        assert_eq!(report.bottleneck_tokens.p90, 10.0);
    }

    #[test]
    fn speedup_identity_against_simulator() {
        use crate::backend::{build_scripted_backend, ScriptEntry};
        use crate::scheduler::{generate_parallel, generate_sequential_baseline, StopConfig};
        use crate::tokens::{ByteTokenizer, Head};

        let tok = ByteTokenizer::new();
        let table = *tok.table();
        let prompt = tok.tokenize("spd");
        let head_targets = [
            (Head::Function, "funky</function>"),
            (Head::Arg(1), "value-one</arg1>"),
            (Head::Arg(2), "<|null|>"),
        ];
        let mut entries: Vec<ScriptEntry> = head_targets
            .iter()
            .map(|(h, text)| ScriptEntry {
                prefix: prompt.clone(),
                head: Some(table.id_of(h.open_token())),
                target: tok.tokenize(text),
            })
            .collect();
        let mut baseline_target = tok.tokenize(&"j".repeat(24));
        baseline_target.push(table.eos_id());
        entries.push(ScriptEntry {
            prefix: prompt.clone(),
            head: None,
            target: baseline_target,
        });
        let backend = build_scripted_backend(entries).unwrap();

        // Zero-ish prefill isolates the decode-term identity.
        let cost = CostModel {
            t_prefill_per_token: 1e-12,
            t_mem: 1.0,
            t_compute_per_seq: 0.05,
            parallel_overhead: 1.0,
        };
        let stop = StopConfig::dual(&table, 64);
        let heads = [Head::Function, Head::Arg(1), Head::Arg(2)];
        let (_, par) = generate_parallel(&backend, &prompt, &tok, &heads, &stop, &cost).unwrap();
        let (_, seq) = generate_sequential_baseline(&backend, &prompt, &stop, &cost).unwrap();

        let measured = seq.total_time / par.total_time;
        let model = LatencyModel::new(0.0, cost.t_mem).with_overhead(1.0);
        let formula = latency_baseline(&model, seq.total_tokens)
            / latency_parallel(&model, &par.tokens_per_head).unwrap();
        assert!((measured - formula).abs() / formula < 1e-9);

        // The closed forms also match the simulator's absolute times
        // once the model carries the measured prefill.
        let timed = LatencyModel::new(seq.prefill_time, cost.t_mem).with_overhead(1.0);
        assert!((latency_baseline(&timed, seq.total_tokens) - seq.total_time).abs() < 1e-9);
        assert!(
            (latency_parallel(&timed, &par.tokens_per_head).unwrap() - par.total_time).abs() < 1e-9
        );
    }
}
