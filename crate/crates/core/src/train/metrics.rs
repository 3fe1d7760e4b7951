//! Metrics artifacts: the per-step CSV stream, run summary JSON, and
//! evaluation reports (accuracy + confusion matrix).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Append-only per-step metrics writer.
///
/// Produces a CSV with header `step,lr,total,comp_<name>,...` where the
/// component columns come from the loss breakdown of the first row. Steps
/// must arrive in increasing order. Float fields use Rust's shortest
/// round-trip formatting, so identical runs produce identical bytes.
pub struct MetricsWriter {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
    component_names: Option<Vec<String>>,
    last_step: Option<usize>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| TrainError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = std::fs::File::create(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            file: std::io::BufWriter::new(file),
            component_names: None,
            last_step: None,
        })
    }

    /// Appends one step row. The first call fixes the component column set;
    /// later calls must supply the same components in the same order.
    pub fn write_step(
        &mut self,
        step: usize,
        lr: f64,
        total: f64,
        components: &[(String, f64)],
    ) -> Result<(), TrainError> {
        let io = |source| TrainError::Io {
            path: self.path.clone(),
            source,
        };
        if let Some(prev) = self.last_step {
            if step <= prev {
                return Err(TrainError::BadConfig {
                    detail: format!("metrics step {step} not after {prev}"),
                });
            }
        }
        match &self.component_names {
            None => {
                let names: Vec<String> = components.iter().map(|(n, _)| n.clone()).collect();
                let mut header = String::from("step,lr,total");
                for n in &names {
                    header.push_str(",comp_");
                    header.push_str(n);
                }
                writeln!(self.file, "{header}").map_err(io)?;
                self.component_names = Some(names);
            }
            Some(names) => {
                let got: Vec<&String> = components.iter().map(|(n, _)| n).collect();
                if got.len() != names.len() || !names.iter().zip(&got).all(|(a, b)| a == *b) {
                    return Err(TrainError::BadConfig {
                        detail: format!("metrics components changed mid-run: {got:?}"),
                    });
                }
            }
        }
        let mut row = format!("{step},{lr:e},{total:e}");
        for (_, v) in components {
            row.push(',');
            row.push_str(&format!("{v:e}"));
        }
        writeln!(self.file, "{row}").map_err(io)?;
        self.last_step = Some(step);
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), TrainError> {
        self.file.flush().map_err(|source| TrainError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// End-of-run summary, written as pretty JSON next to the checkpoint.
/// `wall_clock_s` is informational and excluded from determinism contracts.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunSummary {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Named accuracies (e.g. "probe_tissue_sparse_test").
    pub accuracies: BTreeMap<String, f64>,
    /// Per-epoch branch checksums, hex, "a:b" pairs.
    pub epoch_checksums: Vec<String>,
    pub wall_clock_s: f64,
}

impl RunSummary {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, json).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| TrainError::BadConfig {
            detail: format!("summary parse error: {e}"),
        })
    }
}

/// Counts class confusions: `out[true][pred] += 1`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Array2<usize> {
    assert_eq!(y_true.len(), y_pred.len(), "label/prediction length");
    let mut m = Array2::zeros((n_classes, n_classes));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[[t, p]] += 1;
    }
    m
}

/// Top-1 micro accuracy: trace over total count.
pub fn accuracy_from_confusion(confusion: &Array2<usize>) -> f64 {
    let total: usize = confusion.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let correct: usize = (0..confusion.nrows()).map(|i| confusion[[i, i]]).sum();
    correct as f64 / total as f64
}

/// An evaluation outcome on one split.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Array2<usize>,
}

impl EvalReport {
    pub fn from_predictions(
        y_true: &[usize],
        y_pred: &[usize],
        n_classes: usize,
    ) -> Result<Self, TrainError> {
        if y_true.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let confusion = confusion_matrix(y_true, y_pred, n_classes);
        Ok(Self {
            accuracy: accuracy_from_confusion(&confusion),
            confusion,
        })
    }
}
