use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{mean_std, welch_t_test, Metrics};
use crate::error::{Result, TmmError};

/// Per-fold metrics of one task with their summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub task: String,
    pub folds: Vec<Metrics>,
}

impl MetricsReport {
    pub fn new(task: impl Into<String>, folds: Vec<Metrics>) -> Self {
        Self {
            task: task.into(),
            folds,
        }
    }

    pub fn acc(&self) -> Vec<f64> {
        self.folds.iter().map(|m| m.acc).collect()
    }

    pub fn f1(&self) -> Vec<f64> {
        self.folds.iter().map(|m| m.f1).collect()
    }

    pub fn auc(&self) -> Vec<f64> {
        self.folds.iter().map(|m| m.auc).collect()
    }

    /// `(mean, std)` of ACC, F1 and AUC.
    pub fn summary(&self) -> [(f64, f64); 3] {
        [mean_std(&self.acc()), mean_std(&self.f1()), mean_std(&self.auc())]
    }

    /// Welch p-values of ACC, F1 and AUC against `baseline`.
    pub fn t_test(&self, baseline: &MetricsReport) -> Result<[f64; 3]> {
        Ok([
            welch_t_test(&self.acc(), &baseline.acc())?,
            welch_t_test(&self.f1(), &baseline.f1())?,
            welch_t_test(&self.auc(), &baseline.auc())?,
        ])
    }

    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for (f, m) in self.folds.iter().enumerate() {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", self.task, f, m.acc, m.f1, m.auc);
        }
        s
    }

    pub const CSV_HEADER: &'static str = "task,fold,acc,f1,auc";

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| TmmError::io(path, e))
    }

    /// One line: task, then ACC, F1 and AUC as percentages `mean±std`.
    pub fn summary_line(&self) -> String {
        let [acc, f1, auc] = self.summary();
        let pct = |(m, s): (f64, f64)| format!("{:.1}±{:.1}", 100.0 * m, 100.0 * s);
        format!("{:<24} ACC {:>10}  F1 {:>10}  AUC {:>10}", self.task, pct(acc), pct(f1), pct(auc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricsReport {
        MetricsReport::new(
            "nc_vs_ad",
            vec![
                Metrics { acc: 0.9, f1: 0.8, auc: 0.95 },
                Metrics { acc: 1.0, f1: 1.0, auc: 1.0 },
            ],
        )
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            report().to_csv(),
            "task,fold,acc,f1,auc\nnc_vs_ad,0,0.900000,0.800000,0.950000\nnc_vs_ad,1,1.000000,1.000000,1.000000\n"
        );
    }

    #[test]
    fn summary_values() {
        let [acc, _, _] = report().summary();
        assert!((acc.0 - 0.95).abs() < 1e-15);
        assert!((acc.1 - (0.005f64).sqrt()).abs() < 1e-15);
        assert!(report().summary_line().contains("95.0±7.1"));
    }
}
