//! Feature-ablation ROI ranking and connectivity export for viewers.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Array;
use crate::error::{Result, TmmError};
use crate::model::{Model, Prediction};
use crate::rri::correlation_matrix;
use crate::train::accuracy;

/// Importance of one ROI of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct BiomarkerScore {
    pub roi: String,
    pub modality: String,
    pub roi_index: usize,
    pub modality_index: usize,
    /// Accuracy lost when the feature is replaced by its training mean.
    pub score: f64,
    /// Mean drop of the true-class probability, used to order equal scores.
    pub prob_drop: f64,
}

/// Every (ROI, modality) pair, most important first.
#[derive(Clone, Debug, PartialEq)]
pub struct BiomarkerRanking {
    pub entries: Vec<BiomarkerScore>,
}

impl BiomarkerRanking {
    pub const CSV_HEADER: &'static str = "rank,roi,modality,acc_drop,prob_drop";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{:.6},{:.9}", i + 1, e.roi, e.modality, e.score, e.prob_drop);
        }
        s
    }

    /// The `k` highest ranked ROIs of one modality.
    pub fn top_in_modality(&self, modality: &str, k: usize) -> Vec<&BiomarkerScore> {
        self.entries.iter().filter(|e| e.modality == modality).take(k).collect()
    }

    /// Distinct ROIs in rank order with the best score each reached.
    pub fn top_rois(&self, k: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for e in &self.entries {
            if out.len() == k {
                break;
            }
            if !out.iter().any(|&(r, _)| r == e.roi_index) {
                out.push((e.roi_index, e.score));
            }
        }
        out
    }
}

fn true_class_mean(pred: &Prediction, labels: &[usize]) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| pred.probs.get2(i, y)).sum();
    total / labels.len() as f64
}

/// Ranks every (ROI, modality) feature by the accuracy lost on the given
/// samples when that feature is replaced by its training-set mean.
///
/// Equal accuracy drops are ordered by the drop in mean true-class
/// probability, then by modality and ROI index.
pub fn feature_ablation_rank(model: &Model, features: &[Array], labels: &[usize]) -> Result<BiomarkerRanking> {
    if features.len() != model.modalities.len() {
        return Err(TmmError::Dimension(format!(
            "{} feature matrices for a model with {} modalities",
            features.len(),
            model.modalities.len()
        )));
    }
    if labels.is_empty() || features.iter().any(|f| f.rows() != labels.len()) {
        return Err(TmmError::Dimension("ablation needs one label per evaluated sample".into()));
    }
    let base = model.predict(features)?;
    let base_acc = accuracy(&base.labels(), labels);
    let base_prob = true_class_mean(&base, labels);
    let mut entries = Vec::with_capacity(features.len() * model.roi_ids.len());
    for (m, name) in model.modalities.iter().enumerate() {
        for (r, roi) in model.roi_ids.iter().enumerate() {
            let mut ablated = features.to_vec();
            let fill = model.normalizers[m].mean[r];
            for i in 0..labels.len() {
                ablated[m].set2(i, r, fill);
            }
            let pred = model.predict(&ablated)?;
            entries.push(BiomarkerScore {
                roi: roi.clone(),
                modality: name.clone(),
                roi_index: r,
                modality_index: m,
                score: base_acc - accuracy(&pred.labels(), labels),
                prob_drop: base_prob - true_class_mean(&pred, labels),
            });
        }
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.prob_drop.total_cmp(&a.prob_drop))
            .then(a.modality_index.cmp(&b.modality_index))
            .then(a.roi_index.cmp(&b.roi_index))
    });
    Ok(BiomarkerRanking { entries })
}

/// Top ROIs with their pairwise correlations, in viewer node/edge form.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityExport {
    pub labels: Vec<String>,
    pub sizes: Vec<f64>,
    pub color: usize,
    pub weights: Array,
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    let trimmed = s.trim_end_matches('0');
    let out = if trimmed.ends_with('.') { format!("{trimmed}0") } else { trimmed.to_string() };
    if out == "-0.0" { "0.0".into() } else { out }
}

impl ConnectivityExport {
    /// Correlations between the `selected` columns of `columns`; `selected`
    /// pairs a column index with its importance, which sets the node size.
    pub fn new(columns: &Array, roi_ids: &[String], selected: &[(usize, f64)], color: usize) -> Result<Self> {
        if selected.is_empty() || selected.len() > columns.cols() {
            return Err(TmmError::Config(format!(
                "top_k must be between 1 and {}, got {}",
                columns.cols(),
                selected.len()
            )));
        }
        if let Some(&(bad, _)) = selected.iter().find(|&&(c, _)| c >= columns.cols()) {
            return Err(TmmError::Config(format!("ROI index {bad} out of range")));
        }
        let idx: Vec<usize> = selected.iter().map(|s| s.0).collect();
        let sub = Array::new(
            &[columns.rows(), idx.len()],
            (0..columns.rows())
                .flat_map(|i| idx.iter().map(move |&j| (i, j)))
                .map(|(i, j)| columns.get2(i, j))
                .collect(),
        )?;
        let weights = if idx.len() == 1 { Array::identity(1) } else { correlation_matrix(&sub)? };
        Ok(Self {
            labels: idx.iter().map(|&j| roi_ids[j].clone()).collect(),
            sizes: selected.iter().map(|s| s.1).collect(),
            color,
            weights,
        })
    }

    /// One line per ROI: `x y z color size label`, nodes on a ring of radius 100.
    pub fn node_text(&self) -> String {
        let k = self.labels.len();
        let mut s = String::from(
            "# x y z color size label\n# coordinates are a synthetic ring layout (radius 100), not atlas positions\n",
        );
        for (i, label) in self.labels.iter().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            let _ = writeln!(
                s,
                "{} {} 0.0 {} {} {}",
                fmt_num(100.0 * angle.cos()),
                fmt_num(100.0 * angle.sin()),
                self.color,
                fmt_num(self.sizes[i]),
                label
            );
        }
        s
    }

    /// The `top_k × top_k` correlation matrix, whitespace separated.
    pub fn edge_text(&self) -> String {
        let k = self.labels.len();
        let mut s = String::new();
        for i in 0..k {
            let row: Vec<String> = (0..k).map(|j| fmt_num(self.weights.get2(i, j))).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, node_path: &Path, edge_path: &Path) -> Result<()> {
        std::fs::write(node_path, self.node_text()).map_err(|e| TmmError::io(node_path, e))?;
        std::fs::write(edge_path, self.edge_text()).map_err(|e| TmmError::io(edge_path, e))
    }
}
