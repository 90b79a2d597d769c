//! Datasets: CSV ingestion, the synthetic generator and fold splits.

mod csv_io;
mod split;
mod synthetic;

use std::path::Path;

pub use csv_io::{load_labels, load_table, save_labels, save_table, Table};
pub use split::{stratified_split, FoldSplit};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticSpec};

use crate::autodiff::Array;
use crate::error::{Result, TmmError};
use crate::rri::{ExpressionMatrix, FeatureMatrix};

const EXPRESSION_FILE: &str = "expression.csv";
const LABELS_FILE: &str = "labels.csv";
const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
const MODALITY_PREFIX: &str = "modality_";

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Loaded,
    Synthetic { seed: u64 },
}

/// Expression matrix, one feature matrix per modality and class labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub expression: ExpressionMatrix,
    pub modalities: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        expression: ExpressionMatrix,
        modalities: Vec<FeatureMatrix>,
        labels: Vec<usize>,
        sample_ids: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let first = modalities
            .first()
            .ok_or_else(|| TmmError::Data("a dataset needs at least one modality".into()))?;
        let n = first.n_samples();
        for m in &modalities {
            if m.roi_ids != expression.roi_ids {
                return Err(TmmError::Data(format!(
                    "modality {} ROI ids differ from the expression matrix",
                    m.modality
                )));
            }
            if m.n_samples() != n {
                return Err(TmmError::Data(format!(
                    "modality {} has {} samples, expected {n}",
                    m.modality,
                    m.n_samples()
                )));
            }
        }
        let mut names: Vec<&str> = modalities.iter().map(|m| m.modality.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(TmmError::Data("duplicate modality names".into()));
        }
        if labels.len() != n || sample_ids.len() != n {
            return Err(TmmError::Data(format!(
                "{} labels and {} sample ids for {n} samples",
                labels.len(),
                sample_ids.len()
            )));
        }
        let classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            expression,
            modalities,
            labels,
            sample_ids,
            classes,
            provenance,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_rois(&self) -> usize {
        self.expression.roi_ids.len()
    }

    pub fn roi_ids(&self) -> &[String] {
        &self.expression.roi_ids
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.modality.clone()).collect()
    }

    /// Feature rows `idx` of every modality.
    pub fn features(&self, idx: &[usize]) -> Vec<Array> {
        self.modalities.iter().map(|m| m.values.select_rows(idx)).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// The same samples restricted to a subset of modalities, in the given order.
    pub fn with_modalities(&self, keep: &[usize]) -> Result<Self> {
        let mods = keep
            .iter()
            .map(|&m| {
                self.modalities
                    .get(m)
                    .cloned()
                    .ok_or_else(|| TmmError::Config(format!("no modality with index {m}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            self.expression.clone(),
            mods,
            self.labels.clone(),
            self.sample_ids.clone(),
            self.provenance.clone(),
        )
    }

    /// Writes `expression.csv`, `modality_<name>.csv` and `labels.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TmmError::io(dir, e))?;
        save_table(
            &dir.join(EXPRESSION_FILE),
            &Table {
                columns: self.expression.roi_ids.clone(),
                row_ids: Some(self.expression.gene_ids.clone()),
                values: self.expression.values.clone(),
            },
            "gene_id",
        )?;
        for m in &self.modalities {
            save_table(
                &dir.join(format!("{MODALITY_PREFIX}{}.csv", m.modality)),
                &Table {
                    columns: m.roi_ids.clone(),
                    row_ids: Some(self.sample_ids.clone()),
                    values: m.values.clone(),
                },
                "sample_id",
            )?;
        }
        save_labels(&dir.join(LABELS_FILE), &self.sample_ids, &self.labels)
    }

    /// Reads a directory written by [`Dataset::save`]; modalities are taken
    /// in file-name order.
    pub fn load(dir: &Path) -> Result<Self> {
        let expr = load_table(&dir.join(EXPRESSION_FILE))?;
        let gene_ids = expr
            .row_ids
            .clone()
            .unwrap_or_else(|| (0..expr.values.rows()).map(|g| format!("g{g}")).collect());
        let expression = ExpressionMatrix::new(expr.values, gene_ids, expr.columns)?;
        let mut files: Vec<(String, std::path::PathBuf)> = std::fs::read_dir(dir)
            .map_err(|e| TmmError::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                let m = name.strip_prefix(MODALITY_PREFIX)?.strip_suffix(".csv")?.to_string();
                Some((m, e.path()))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(TmmError::Data(format!(
                "no {MODALITY_PREFIX}*.csv files in {}",
                dir.display()
            )));
        }
        let (ids, labels) = load_labels(&dir.join(LABELS_FILE))?;
        let mut modalities = Vec::with_capacity(files.len());
        for (name, path) in files {
            let t = load_table(&path)?;
            if let Some(rows) = &t.row_ids {
                if rows != &ids {
                    return Err(TmmError::Data(format!(
                        "{} sample ids do not match {LABELS_FILE}",
                        path.display()
                    )));
                }
            }
            modalities.push(FeatureMatrix::new(t.values, t.columns, name)?);
        }
        Self::new(expression, modalities, labels, ids, Provenance::Loaded)
    }
}

impl GroundTruth {
    pub fn save_to_dir(&self, dir: &Path, roi_ids: &[String], modalities: &[String]) -> Result<()> {
        self.save(&dir.join(GROUND_TRUTH_FILE), roi_ids, modalities)
    }
}
