use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::run::StepRecord;
use super::TrainError;
use crate::eval::MetricValues;

pub const CSV_HEADER: &str =
    "iteration,l_ce,l_dice,l_fm,l_st,l_d,gated_in_fraction,test_iou,test_dice,test_recall,test_precision";

/// Append-only metrics stream: one row per logged iteration, eval columns
/// filled only at eval points. Fixed 6-decimal formatting keeps reruns
/// byte-comparable.
pub struct MetricsCsv {
    out: BufWriter<File>,
    path: String,
}

impl MetricsCsv {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let file = File::create(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut w = MetricsCsv {
            out: BufWriter::new(file),
            path: path.display().to_string(),
        };
        w.write_line(CSV_HEADER)?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<(), TrainError> {
        writeln!(self.out, "{line}").map_err(|e| TrainError::Io {
            path: self.path.clone(),
            source: e,
        })
    }

    pub fn row(&mut self, rec: &StepRecord, eval: Option<&MetricValues>) -> Result<(), TrainError> {
        let eval_cols = match eval {
            Some(m) => format!(
                "{:.6},{:.6},{:.6},{:.6}",
                m.iou, m.dice, m.recall, m.precision
            ),
            None => ",,,".to_string(),
        };
        let line = format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            rec.iteration,
            rec.l_ce,
            rec.l_dice,
            rec.l_fm,
            rec.l_st,
            rec.l_d,
            rec.gated_fraction_window,
            eval_cols
        );
        self.write_line(&line)
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush().map_err(|e| TrainError::Io {
            path: self.path.clone(),
            source: e,
        })
    }
}
