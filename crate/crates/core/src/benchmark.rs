//! Synthetic benchmark: every method on every generated dataset, averaged.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learning::TrainConfig;
use crate::methods::{train_with_selection, Method};
use crate::metrics::{evaluate, BagPrediction, MetricsReport};
use crate::synthgen::{GeneratedDataset, SynthConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
        }
    }
}

/// Outcome of one method on one dataset. A failed fit keeps `error` and
/// leaves `report` empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub alpha: Option<f64>,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
    pub train_secs: f64,
    pub iterations: usize,
    /// Test bags with a frame prediction above the bag prediction.
    pub max_rule_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetResult {
    pub index: usize,
    pub runs: Vec<MethodRun>,
}

impl DatasetResult {
    pub fn run(&self, method: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

pub fn run_method(method: Method, ds: &GeneratedDataset, config: &TrainConfig) -> MethodRun {
    let start = Instant::now();
    let outcome = train_with_selection(method, &ds.train, &ds.val, config).and_then(|sel| {
        let preds = sel.model.predict_dataset(&ds.test);
        let violations = preds.iter().filter(|p| p.frames.iter().any(|f| *f > p.bag)).count();
        let preds: Vec<BagPrediction> = preds.into_iter().map(Into::into).collect();
        let report = evaluate(&preds, &ds.test)?;
        Ok((sel, report, violations))
    });
    let train_secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((sel, report, violations)) => MethodRun {
            method,
            alpha: Some(sel.alpha),
            report: Some(report),
            error: None,
            train_secs,
            iterations: sel.trace.iterations,
            max_rule_violations: violations,
        },
        Err(e) => {
            log::warn!("{} failed on dataset {}: {e}", method.display_name(), ds.index);
            MethodRun {
                method,
                alpha: None,
                report: None,
                error: Some(e.to_string()),
                train_secs,
                iterations: 0,
                max_rule_violations: 0,
            }
        }
    }
}

pub fn run_dataset(ds: &GeneratedDataset, methods: &[Method], config: &TrainConfig) -> DatasetResult {
    DatasetResult {
        index: ds.index,
        runs: methods.iter().map(|&m| run_method(m, ds, config)).collect(),
    }
}

/// Generates the suite and runs every method on each dataset in turn.
/// `on_dataset` sees each result as soon as it is ready.
pub fn run_benchmark(
    config: &BenchmarkConfig,
    mut on_dataset: impl FnMut(&GeneratedDataset, &DatasetResult) -> Result<()>,
) -> Result<Vec<DatasetResult>> {
    config.synth.validate()?;
    config.train.validate()?;
    let mut out = Vec::with_capacity(config.synth.num_datasets);
    for index in 0..config.synth.num_datasets {
        let ds = crate::synthgen::generate_dataset(&config.synth, index)?;
        let result = run_dataset(&ds, &config.methods, &config.train);
        on_dataset(&ds, &result)?;
        out.push(result);
    }
    Ok(out)
}

/// Per-method means over datasets. A metric averages over the datasets
/// where it is defined; `None` if it is defined nowhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Option<Method>,
    pub datasets: usize,
    pub failures: usize,
    pub frame_corr: Option<f64>,
    pub frame_mae: Option<f64>,
    pub frame_icc: Option<f64>,
    pub seq_corr: Option<f64>,
    pub seq_mae: Option<f64>,
    pub seq_icc: Option<f64>,
    pub seq_acc: Option<f64>,
    pub seq_f1: Option<f64>,
    pub max_rule_violations: usize,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn summarize(results: &[DatasetResult], methods: &[Method]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&m| {
            let runs: Vec<&MethodRun> = results.iter().filter_map(|r| r.run(m)).collect();
            let reports: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
            let frame = |f: fn(&crate::metrics::ContinuousScores) -> Option<f64>| {
                mean_of(reports.iter().map(|r| r.frame.as_ref().and_then(f)))
            };
            let seq =
                |f: fn(&crate::metrics::SequenceScores) -> Option<f64>| mean_of(reports.iter().map(|r| f(&r.sequence)));
            SummaryRow {
                method: Some(m),
                datasets: reports.len(),
                failures: runs.len() - reports.len(),
                frame_corr: frame(|s| s.corr),
                frame_mae: frame(|s| Some(s.mae)),
                frame_icc: frame(|s| s.icc),
                seq_corr: seq(|s| s.corr),
                seq_mae: seq(|s| Some(s.mae)),
                seq_icc: seq(|s| s.icc),
                seq_acc: seq(|s| Some(s.acc)),
                seq_f1: seq(|s| Some(s.f1_macro)),
                max_rule_violations: runs.iter().map(|r| r.max_rule_violations).sum(),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Aligned text table with frame {CORR, MAE, ICC} and sequence
/// {CORR, MAE, ICC, ACC, F1} columns.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} {:>6} | {:>4}",
        "", "CORR", "MAE", "ICC", "CORR", "MAE", "ICC", "ACC", "F1", "n"
    );
    let _ = writeln!(s, "{:<8} | {:^20} | {:^34} |", "method", "frame", "sequence");
    let _ = writeln!(s, "{}", "-".repeat(76));
    for r in rows {
        let name = r.method.map_or("", |m| m.display_name());
        let _ = writeln!(
            s,
            "{:<8} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} {:>6} | {:>4}",
            name,
            cell(r.frame_corr),
            cell(r.frame_mae),
            cell(r.frame_icc),
            cell(r.seq_corr),
            cell(r.seq_mae),
            cell(r.seq_icc),
            cell(r.seq_acc),
            cell(r.seq_f1),
            r.datasets
        );
    }
    s
}

/// Table for a single report.
pub fn render_report(report: &MetricsReport) -> String {
    let frame = report.frame.as_ref();
    let row = SummaryRow {
        datasets: 1,
        frame_corr: frame.and_then(|f| f.corr),
        frame_mae: frame.map(|f| f.mae),
        frame_icc: frame.and_then(|f| f.icc),
        seq_corr: report.sequence.corr,
        seq_mae: Some(report.sequence.mae),
        seq_icc: report.sequence.icc,
        seq_acc: Some(report.sequence.acc),
        seq_f1: Some(report.sequence.f1_macro),
        ..Default::default()
    };
    render_summary(&[row])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ContinuousScores, SequenceScores};

    fn run(method: Method, icc: Option<f64>, acc: f64) -> MethodRun {
        MethodRun {
            method,
            alpha: Some(1.0),
            report: Some(MetricsReport {
                frame: Some(ContinuousScores {
                    corr: icc,
                    icc,
                    mae: 1.0 - acc,
                }),
                sequence: SequenceScores {
                    acc,
                    mae: 0.5,
                    ..Default::default()
                },
                frames: 10,
                sequences: 2,
            }),
            error: None,
            train_secs: 0.0,
            iterations: 1,
            max_rule_violations: 0,
        }
    }

    #[test]
    fn summary_is_mean_over_defined_values() {
        let failed = MethodRun {
            report: None,
            error: Some("boom".into()),
            ..run(Method::Mir, None, 0.0)
        };
        let results = vec![
            DatasetResult {
                index: 0,
                runs: vec![run(Method::Midorf, Some(0.5), 0.2), failed],
            },
            DatasetResult {
                index: 1,
                runs: vec![run(Method::Midorf, None, 0.6), run(Method::Mir, Some(0.1), 0.3)],
            },
        ];
        let rows = summarize(&results, &[Method::Midorf, Method::Mir]);
        assert_eq!(rows[0].datasets, 2);
        assert_eq!(rows[0].frame_icc, Some(0.5));
        assert!((rows[0].seq_acc.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(rows[0].seq_icc, None);
        assert_eq!((rows[1].datasets, rows[1].failures), (1, 1));
        assert_eq!(rows[1].seq_acc, Some(0.3));
        let table = render_summary(&rows);
        assert!(table.contains("MI-DORF") && table.contains("0.400"));
    }
}
