use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport, RunMode};
use crate::datagen::{carve_test, split_pool, DatasetSplit, ImageSlice, MaskLabel};
use crate::nets::build_reference_generator;
use crate::trainer::{eval_on_test, train, TrainConfig};

/// Which ratio the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Labeled,
    Unlabeled,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepAxis::Labeled => write!(f, "labeled"),
            SweepAxis::Unlabeled => write!(f, "unlabeled"),
        }
    }
}

/// One sweep row request: a ratio value, or the fully supervised baseline
/// (the `baseline` token on the unlabeled axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioPoint {
    Baseline,
    Value(f64),
}

impl RatioPoint {
    pub fn parse(token: &str) -> Result<Self, String> {
        if token.eq_ignore_ascii_case("baseline") {
            return Ok(RatioPoint::Baseline);
        }
        token
            .parse::<f64>()
            .map(RatioPoint::Value)
            .map_err(|_| format!("ratio `{token}` is neither a number nor `baseline`"))
    }

    pub fn label(&self) -> String {
        match self {
            RatioPoint::Baseline => "baseline".to_string(),
            RatioPoint::Value(v) => format_ratio(*v),
        }
    }
}

fn format_ratio(v: f64) -> String {
    // trim to a short stable form: 0.3, 0.5, 1
    let s = format!("{v}");
    s
}

/// Aggregated results of one ratio row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio_label: String,
    pub mode: RunMode,
    pub per_seed: Vec<MetricsReport>,
    /// iou, dice, recall, precision
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// Labeled ratio fixed on the unlabeled axis (the Table II protocol).
pub const UNLABELED_AXIS_LABELED_RATIO: f64 = 0.3;

fn metrics_of(report: &MetricsReport) -> [f64; 4] {
    [report.iou, report.dice, report.recall, report.precision]
}

fn mean_std(per_seed: &[MetricsReport]) -> ([f64; 4], [f64; 4]) {
    let n = per_seed.len() as f64;
    let mut mean = [0.0; 4];
    for r in per_seed {
        for (m, v) in mean.iter_mut().zip(metrics_of(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = [0.0; 4];
    if per_seed.len() > 1 {
        for r in per_seed {
            for ((s, v), m) in std.iter_mut().zip(metrics_of(r)).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / (n - 1.0)).sqrt();
        }
    }
    (mean, std)
}

/// Runs the sweep protocol: the test set is carved once from the pool (so
/// every cell shares it), then each (ratio, seed) cell builds its own
/// labeled/unlabeled split, trains to `cfg.iterations`, and evaluates the
/// final model on the shared test set.
///
/// Labeled axis: vary `labeled_ratio` with the whole remainder unlabeled.
/// Unlabeled axis: fix `labeled_ratio` at 30%, vary `unlabeled_ratio`;
/// `baseline` rows train fully supervised on the same labeled set.
pub fn run_ratio_sweep(
    pairs: Vec<(ImageSlice, MaskLabel)>,
    axis: SweepAxis,
    ratios: &[RatioPoint],
    seeds: &[u64],
    cfg: &TrainConfig,
    test_fraction: f64,
    data_seed: u64,
) -> Result<SweepResult, EvalError> {
    if ratios.is_empty() {
        return Err(EvalError::Empty("ratio list"));
    }
    if seeds.is_empty() {
        return Err(EvalError::Empty("seed list"));
    }
    let (test, pool) = carve_test(pairs, test_fraction, data_seed)?;
    let mut rows = Vec::with_capacity(ratios.len());
    for ratio in ratios {
        let (labeled_ratio, unlabeled_ratio, mode) = match (axis, ratio) {
            (SweepAxis::Labeled, RatioPoint::Value(r)) => (*r, 1.0, RunMode::SemiSupervised),
            (SweepAxis::Labeled, RatioPoint::Baseline) => {
                return Err(EvalError::Empty(
                    "`baseline` applies to the unlabeled axis only",
                ))
            }
            (SweepAxis::Unlabeled, RatioPoint::Value(r)) => {
                (UNLABELED_AXIS_LABELED_RATIO, *r, RunMode::SemiSupervised)
            }
            (SweepAxis::Unlabeled, RatioPoint::Baseline) => {
                (UNLABELED_AXIS_LABELED_RATIO, 0.0, RunMode::FullySupervised)
            }
        };
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let (labeled, unlabeled) =
                split_pool(pool.clone(), labeled_ratio, unlabeled_ratio, seed)?;
            let split = DatasetSplit {
                labeled,
                unlabeled,
                test: test.clone(),
                labeled_ratio,
                unlabeled_ratio,
            };
            let mut cell_cfg = cfg.clone();
            cell_cfg.seed = seed;
            let wrap = |source: crate::trainer::TrainError| EvalError::Sweep {
                ratio: ratio.label(),
                seed,
                source: Box::new(source),
            };
            let generator = build_reference_generator(1, 2, cell_cfg.base_width, seed)
                .map_err(|e| wrap(e.into()))?;
            let (state, _outcome) = train(&split, &cell_cfg, generator, None).map_err(wrap)?;
            let m = eval_on_test(&state.generator, &split.test, cell_cfg.batch_size)
                .map_err(wrap)?;
            per_seed.push(MetricsReport {
                iou: m.iou,
                dice: m.dice,
                recall: m.recall,
                precision: m.precision,
                n_test_slices: split.test.len(),
                labeled_ratio,
                unlabeled_ratio,
                mode,
                seed,
            });
        }
        let (mean, std) = mean_std(&per_seed);
        rows.push(SweepRow {
            ratio_label: ratio.label(),
            mode,
            per_seed,
            mean,
            std,
        });
    }
    Ok(SweepResult { axis, rows })
}

/// Writes `sweep.csv` (per-seed rows plus `mean`/`std` aggregate rows, four
/// fractional digits) and `sweep_<axis>.png` under `out_dir`.
pub fn emit_report(result: &SweepResult, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir).map_err(|e| EvalError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    let mut csv = String::from("axis,ratio,mode,seed,iou,dice,recall,precision\n");
    for row in &result.rows {
        for r in &row.per_seed {
            csv.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
                result.axis, row.ratio_label, row.mode, r.seed, r.iou, r.dice, r.recall, r.precision
            ));
        }
        for (name, vals) in [("mean", &row.mean), ("std", &row.std)] {
            csv.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
                result.axis,
                row.ratio_label,
                row.mode,
                name,
                vals[0],
                vals[1],
                vals[2],
                vals[3]
            ));
        }
    }
    let csv_path = out_dir.join("sweep.csv");
    fs::write(&csv_path, csv).map_err(|e| EvalError::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;

    let plot_path = out_dir.join(format!("sweep_{}.png", result.axis));
    let labels: Vec<String> = result.rows.iter().map(|r| r.ratio_label.clone()).collect();
    let series = [
        ("iou", result.rows.iter().map(|r| r.mean[0]).collect::<Vec<_>>()),
        ("dice", result.rows.iter().map(|r| r.mean[1]).collect::<Vec<_>>()),
        ("recall", result.rows.iter().map(|r| r.mean[2]).collect::<Vec<_>>()),
        ("precision", result.rows.iter().map(|r| r.mean[3]).collect::<Vec<_>>()),
    ];
    super::plot::render_metric_lines(&plot_path, &format!("sweep {}", result.axis), &labels, &series)
        .map_err(|e| EvalError::Io {
            path: plot_path.display().to_string(),
            source: e,
        })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_tokens_parse() {
        assert_eq!(RatioPoint::parse("baseline").unwrap(), RatioPoint::Baseline);
        assert_eq!(RatioPoint::parse("0.5").unwrap(), RatioPoint::Value(0.5));
        assert!(RatioPoint::parse("huh").is_err());
    }

    #[test]
    fn mean_and_std_aggregate_correctly() {
        let report = |dice: f64, seed: u64| MetricsReport {
            iou: dice / 2.0,
            dice,
            recall: dice,
            precision: dice,
            n_test_slices: 10,
            labeled_ratio: 0.3,
            unlabeled_ratio: 1.0,
            mode: RunMode::SemiSupervised,
            seed,
        };
        let rows = vec![report(0.5, 1), report(0.7, 2)];
        let (mean, std) = mean_std(&rows);
        assert!((mean[1] - 0.6).abs() < 1e-12);
        // sample std of {0.5, 0.7}
        assert!((std[1] - (0.02f64).sqrt()).abs() < 1e-12);
        let (_, std1) = mean_std(&rows[..1]);
        assert_eq!(std1, [0.0; 4], "single seed has zero std");
    }
}
