//! Measurement harness: throughput (QPS) for direct feedforward scoring and
//! throughput plus p50/p99 latency through the service.
//!
//! All timing uses the monotonic clock. Runs are strictly single-threaded,
//! and a warmup prefix is excluded so model-load and first-touch costs never
//! pollute the samples. Per-pair timing includes tokenization and feature
//! extraction; reports record that via `timing_note`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Scorer;
use crate::service::ScoreClient;

/// Warmup iterations excluded from every measurement.
pub const DEFAULT_WARMUP: usize = 100;

/// Scores one question/answer pair; the unit of work a benchmark times.
pub trait PairScorer {
    fn score_pair(&mut self, question: &str, answer: &str) -> Result<f64>;
}

impl PairScorer for Scorer<'_> {
    fn score_pair(&mut self, question: &str, answer: &str) -> Result<f64> {
        Ok(Scorer::score_pair(self, question, answer))
    }
}

impl PairScorer for ScoreClient {
    fn score_pair(&mut self, question: &str, answer: &str) -> Result<f64> {
        self.get_score(question, answer)
    }
}

/// One benchmark result, shaped like a row of the throughput/latency tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub approach: String,
    pub machine: String,
    pub qps: f64,
    pub p50_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub n_samples: usize,
    pub warmup_excluded: bool,
    /// Methodological note: what the per-pair timing region covers.
    pub timing_note: String,
}

const TIMING_NOTE: &str = "per-pair timing includes tokenization and feature extraction";

/// CPU model plus OS/arch; results are meaningless without provenance.
pub fn machine_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines().find_map(|line| {
                line.strip_prefix("model name")
                    .and_then(|rest| rest.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!(
        "{cpu} ({} {})",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Nearest-rank percentile: the ceil(p/100 · n)-th smallest sample.
pub fn percentile(samples: &[Duration], p: f64) -> Result<Duration> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("percentile: no samples".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile: p must be in (0, 100], got {p}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort();
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

fn run_warmup(
    pairs: &[(String, String)],
    scorer: &mut dyn PairScorer,
    warmup: usize,
) -> Result<()> {
    for i in 0..warmup {
        let (q, a) = &pairs[i % pairs.len()];
        scorer.score_pair(q, a)?;
    }
    Ok(())
}

/// Throughput-only measurement: one single-threaded pass over the pairs,
/// `qps = n / elapsed`. Timing starts after the warmup.
pub fn run_throughput(
    pairs: &[(String, String)],
    scorer: &mut dyn PairScorer,
    approach: &str,
    warmup: usize,
) -> Result<LatencyReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("run_throughput: no pairs".into()));
    }
    run_warmup(pairs, scorer, warmup)?;
    let start = Instant::now();
    for (completed, (q, a)) in pairs.iter().enumerate() {
        scorer.score_pair(q, a).map_err(|e| Error::BenchAborted {
            completed,
            cause: Box::new(e),
        })?;
    }
    let elapsed = start.elapsed();
    Ok(LatencyReport {
        approach: approach.to_string(),
        machine: machine_description(),
        qps: pairs.len() as f64 / elapsed.as_secs_f64(),
        p50_ms: None,
        p99_ms: None,
        n_samples: pairs.len(),
        warmup_excluded: true,
        timing_note: TIMING_NOTE.to_string(),
    })
}

/// Throughput plus per-request latency percentiles. Each request's wall time
/// is sampled individually; the warmup requests never enter the samples.
pub fn run_latency(
    pairs: &[(String, String)],
    scorer: &mut dyn PairScorer,
    approach: &str,
    warmup: usize,
) -> Result<LatencyReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("run_latency: no pairs".into()));
    }
    run_warmup(pairs, scorer, warmup)?;
    let mut samples = Vec::with_capacity(pairs.len());
    let run_start = Instant::now();
    for (q, a) in pairs {
        let t = Instant::now();
        scorer.score_pair(q, a).map_err(|e| Error::BenchAborted {
            completed: samples.len(),
            cause: Box::new(e),
        })?;
        samples.push(t.elapsed());
    }
    let elapsed = run_start.elapsed();
    let p50 = percentile(&samples, 50.0)?;
    let p99 = percentile(&samples, 99.0)?;
    Ok(LatencyReport {
        approach: approach.to_string(),
        machine: machine_description(),
        qps: samples.len() as f64 / elapsed.as_secs_f64(),
        p50_ms: Some(p50.as_secs_f64() * 1e3),
        p99_ms: Some(p99.as_secs_f64() * 1e3),
        n_samples: samples.len(),
        warmup_excluded: true,
        timing_note: TIMING_NOTE.to_string(),
    })
}

/// Latency benchmark through the wire protocol: a single-threaded client
/// issues one request at a time over a persistent connection.
pub fn run_service_bench(
    pairs: &[(String, String)],
    endpoint: &str,
    warmup: usize,
) -> Result<LatencyReport> {
    let mut client = ScoreClient::connect(endpoint)?;
    run_latency(pairs, &mut client, "service", warmup)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    JsonLines,
}

/// Render reports as an aligned table (latency cells blank for
/// throughput-only rows) or as one JSON object per line.
pub fn emit_report(reports: &[LatencyReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::JsonLines => {
            let mut out = String::new();
            for report in reports {
                out.push_str(&serde_json::to_string(report).expect("report serializes"));
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            let header = ["Machine", "Approach", "Throughput (QPS)", "p50", "p99"];
            let rows: Vec<[String; 5]> = reports
                .iter()
                .map(|r| {
                    [
                        r.machine.clone(),
                        r.approach.clone(),
                        format!("{:.2}", r.qps),
                        r.p50_ms.map(|v| format!("{v:.2}")).unwrap_or_default(),
                        r.p99_ms.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    ]
                })
                .collect();
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in &rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.len());
                }
            }
            let mut out = String::new();
            let emit_row = |cells: &[String], out: &mut String| {
                let line: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect();
                out.push_str(line.join(" | ").trim_end());
                out.push('\n');
            };
            emit_row(&header.map(String::from), &mut out);
            for row in &rows {
                emit_row(row.as_slice(), &mut out);
            }
            out
        }
    }
}

/// Structure-level reproduction of the service-overhead comparison: the
/// percentage throughput lost by interposing the wire protocol.
pub fn emit_comparison(direct: &LatencyReport, service: &LatencyReport) -> String {
    let overhead = (direct.qps - service.qps) / direct.qps * 100.0;
    format!(
        "direct:  {:.2} QPS\nservice: {:.2} QPS\nservice overhead: {:.1}%\n",
        direct.qps, service.qps, overhead
    )
}

/// Parse the json-lines format back into reports.
pub fn parse_json_lines(text: &str) -> Result<Vec<LatencyReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidArgument(format!("bad report line: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct SleepScorer {
        delay: Duration,
    }

    impl PairScorer for SleepScorer {
        fn score_pair(&mut self, _q: &str, _a: &str) -> Result<f64> {
            std::thread::sleep(self.delay);
            Ok(0.5)
        }
    }

    /// Slow for the first `slow_calls` invocations, then instant.
    struct SlowStartScorer {
        calls: usize,
        slow_calls: usize,
        slow_delay: Duration,
    }

    impl PairScorer for SlowStartScorer {
        fn score_pair(&mut self, _q: &str, _a: &str) -> Result<f64> {
            self.calls += 1;
            if self.calls <= self.slow_calls {
                std::thread::sleep(self.slow_delay);
            }
            Ok(0.5)
        }
    }

    fn pairs(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("q{i}"), format!("a{i}"))).collect()
    }

    #[test]
    fn percentile_nearest_rank_examples() {
        let samples: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        assert_eq!(
            percentile(&samples, 50.0).unwrap(),
            Duration::from_millis(50)
        );
        assert_eq!(
            percentile(&samples, 99.0).unwrap(),
            Duration::from_millis(99)
        );
        assert_eq!(
            percentile(&samples, 100.0).unwrap(),
            Duration::from_millis(100)
        );
        let single = [Duration::from_millis(7)];
        for p in [0.1, 50.0, 99.9, 100.0] {
            assert_eq!(percentile(&single, p).unwrap(), Duration::from_millis(7));
        }
    }

    #[test]
    fn percentile_rejects_bad_input() {
        assert!(percentile(&[], 50.0).is_err());
        let s = [Duration::from_millis(1)];
        assert!(percentile(&s, 0.0).is_err());
        assert!(percentile(&s, 101.0).is_err());
    }

    #[test]
    fn throughput_from_controlled_stub() {
        let mut scorer = SleepScorer {
            delay: Duration::from_millis(10),
        };
        // 10 pairs, small warmup to keep the test quick
        let report = run_throughput(&pairs(10), &mut scorer, "stub", 2).unwrap();
        assert!(
            report.qps >= 80.0 && report.qps <= 100.0,
            "qps = {}",
            report.qps
        );
        assert!(report.p50_ms.is_none() && report.p99_ms.is_none());
        assert!(report.warmup_excluded);
    }

    #[test]
    fn throughput_roughly_independent_of_pair_count() {
        let mut scorer = SleepScorer {
            delay: Duration::from_millis(2),
        };
        let r1 = run_throughput(&pairs(20), &mut scorer, "stub", 0).unwrap();
        let r2 = run_throughput(&pairs(40), &mut scorer, "stub", 0).unwrap();
        let ratio = (r1.qps - r2.qps).abs() / r1.qps;
        assert!(ratio < 0.20, "qps drifted {ratio}");
    }

    #[test]
    fn empty_pairs_rejected() {
        let mut scorer = SleepScorer {
            delay: Duration::ZERO,
        };
        assert!(run_throughput(&[], &mut scorer, "stub", 0).is_err());
        assert!(run_latency(&[], &mut scorer, "stub", 0).is_err());
    }

    #[test]
    fn latency_percentiles_bound_the_stub_delay() {
        let mut scorer = SleepScorer {
            delay: Duration::from_millis(5),
        };
        let report = run_latency(&pairs(20), &mut scorer, "stub", 2).unwrap();
        let p50 = report.p50_ms.unwrap();
        let p99 = report.p99_ms.unwrap();
        assert!(p50 >= 5.0, "p50 = {p50}");
        assert!(p50 <= p99);
        assert_eq!(report.n_samples, 20);
    }

    #[test]
    fn warmup_calls_never_enter_samples() {
        // First 100 calls take 20 ms; afterwards instant. With warmup=100 the
        // slow prefix must be invisible in the percentiles.
        let mut scorer = SlowStartScorer {
            calls: 0,
            slow_calls: 100,
            slow_delay: Duration::from_millis(20),
        };
        let report = run_latency(&pairs(50), &mut scorer, "stub", DEFAULT_WARMUP).unwrap();
        assert!(
            report.p99_ms.unwrap() < 20.0,
            "slow warmup leaked into samples: p99 = {:?}",
            report.p99_ms
        );
    }

    #[test]
    fn aborted_run_reports_progress() {
        struct FailAfter {
            remaining: usize,
        }
        impl PairScorer for FailAfter {
            fn score_pair(&mut self, _: &str, _: &str) -> Result<f64> {
                if self.remaining == 0 {
                    return Err(Error::Remote("boom".into()));
                }
                self.remaining -= 1;
                Ok(0.5)
            }
        }
        let mut scorer = FailAfter { remaining: 7 };
        let err = run_latency(&pairs(20), &mut scorer, "stub", 0).unwrap_err();
        match err {
            Error::BenchAborted { completed, .. } => assert_eq!(completed, 7),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn table_format_blanks_missing_latency() {
        let report = LatencyReport {
            approach: "direct".into(),
            machine: "test-machine".into(),
            qps: 1234.5,
            p50_ms: None,
            p99_ms: None,
            n_samples: 10,
            warmup_excluded: true,
            timing_note: TIMING_NOTE.into(),
        };
        let table = emit_report(&[report], ReportFormat::Table);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("Machine"));
        assert!(lines[1].contains("1234.50"));

        let empty = emit_report(&[], ReportFormat::Table);
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn json_lines_round_trip() {
        let mk = |approach: &str, p50: Option<f64>| LatencyReport {
            approach: approach.into(),
            machine: "m".into(),
            qps: 10.0,
            p50_ms: p50,
            p99_ms: p50.map(|v| v * 2.0),
            n_samples: 3,
            warmup_excluded: true,
            timing_note: TIMING_NOTE.into(),
        };
        let reports = vec![mk("direct", None), mk("service", Some(1.25))];
        let text = emit_report(&reports, ReportFormat::JsonLines);
        assert_eq!(text.lines().count(), 2);
        let back = parse_json_lines(&text).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn comparison_prints_overhead_percentage() {
        let mk = |approach: &str, qps: f64| LatencyReport {
            approach: approach.into(),
            machine: "m".into(),
            qps,
            p50_ms: None,
            p99_ms: None,
            n_samples: 1,
            warmup_excluded: true,
            timing_note: TIMING_NOTE.into(),
        };
        let text = emit_comparison(&mk("direct", 1226.49), &mk("service", 1150.86));
        assert!(text.contains("overhead"));
        assert!(text.contains("6.2%"), "{text}");
    }

    proptest! {
        #[test]
        fn percentile_permutation_invariant_and_monotone(
            mut millis in proptest::collection::vec(0u64..10_000, 1..60),
            p1 in 1u32..=100,
            p2 in 1u32..=100,
        ) {
            let samples: Vec<Duration> = millis.iter().copied().map(Duration::from_millis).collect();
            let lo = p1.min(p2) as f64;
            let hi = p1.max(p2) as f64;
            let v_lo = percentile(&samples, lo).unwrap();
            let v_hi = percentile(&samples, hi).unwrap();
            prop_assert!(v_lo <= v_hi);
            prop_assert!(*samples.iter().min().unwrap() <= v_lo);

            millis.reverse();
            let reversed: Vec<Duration> = millis.iter().copied().map(Duration::from_millis).collect();
            prop_assert_eq!(percentile(&reversed, lo).unwrap(), v_lo);
        }
    }
}
