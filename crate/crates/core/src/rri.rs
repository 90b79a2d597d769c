//! Region–region interaction (RRI) graphs.
//!
//! Edges connect two ROIs when the Pearson correlation of their columns
//! reaches the threshold. The transcriptomic graph correlates ROIs across
//! genes; each radiomic graph correlates ROIs across samples of one
//! imaging modality. Every node carries a self-loop.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{Array, Pattern};
use crate::error::{Result, TmmError};

/// Gene expression, genes × ROIs.
#[derive(Clone, Debug)]
pub struct ExpressionMatrix {
    pub values: Array,
    pub gene_ids: Vec<String>,
    pub roi_ids: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(values: Array, gene_ids: Vec<String>, roi_ids: Vec<String>) -> Result<Self> {
        if values.ndim() != 2 || values.rows() != gene_ids.len() || values.cols() != roi_ids.len() {
            return Err(TmmError::Dimension(format!(
                "expression values {:?} with {} genes and {} ROIs",
                values.shape(),
                gene_ids.len(),
                roi_ids.len()
            )));
        }
        for (j, roi) in roi_ids.iter().enumerate() {
            if is_constant(&values.column(j)) {
                return Err(TmmError::ZeroVariance(format!(
                    "expression of ROI '{roi}' (column {j}) is constant"
                )));
            }
        }
        Ok(Self {
            values,
            gene_ids,
            roi_ids,
        })
    }
}

/// ROI-level imaging measurements, samples × ROIs, for one modality.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub values: Array,
    pub roi_ids: Vec<String>,
    pub modality: String,
}

impl FeatureMatrix {
    pub fn new(values: Array, roi_ids: Vec<String>, modality: impl Into<String>) -> Result<Self> {
        if values.ndim() != 2 || values.cols() != roi_ids.len() {
            return Err(TmmError::Dimension(format!(
                "feature values {:?} with {} ROI ids",
                values.shape(),
                roi_ids.len()
            )));
        }
        Ok(Self {
            values,
            roi_ids,
            modality: modality.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    pub fn n_rois(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EdgeSource {
    Transcriptomic,
    Modality(String),
}

impl fmt::Display for EdgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeSource::Transcriptomic => f.write_str("transcriptomic"),
            EdgeSource::Modality(m) => write!(f, "{m}"),
        }
    }
}

/// Binary symmetric adjacency with self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMatrix {
    order: usize,
    adjacency: Vec<bool>,
    pattern: Arc<Pattern>,
    pub threshold: f64,
    pub source: EdgeSource,
}

impl EdgeMatrix {
    fn assemble(order: usize, adjacency: Vec<bool>, threshold: f64, source: EdgeSource) -> Self {
        // the diagonal is always set, so no row is empty
        let pattern = Arc::new(Pattern::from_mask(&adjacency, order).expect("self-loops on every row"));
        Self {
            order,
            adjacency,
            pattern,
            threshold,
            source,
        }
    }

    /// Builds from an explicit adjacency; the diagonal is forced on.
    pub fn from_adjacency(order: usize, mut adjacency: Vec<bool>, threshold: f64, source: EdgeSource) -> Result<Self> {
        if adjacency.len() != order * order {
            return Err(TmmError::Dimension(format!(
                "adjacency of {} entries for order {order}",
                adjacency.len()
            )));
        }
        for i in 0..order {
            adjacency[i * order + i] = true;
            for j in 0..i {
                if adjacency[i * order + j] != adjacency[j * order + i] {
                    return Err(TmmError::Data(format!("adjacency not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self::assemble(order, adjacency, threshold, source))
    }

    /// Only self-loops.
    pub fn self_loops(order: usize, source: EdgeSource) -> Self {
        let mut adjacency = vec![false; order * order];
        for i in 0..order {
            adjacency[i * order + i] = true;
        }
        Self::assemble(order, adjacency, f64::INFINITY, source)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.order + j]
    }

    /// Row-major adjacency, usable as an attention mask.
    pub fn mask(&self) -> &[bool] {
        &self.adjacency
    }

    /// Row-compressed form of the adjacency.
    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    /// Undirected edges excluding self-loops.
    pub fn edge_count(&self) -> usize {
        (0..self.order)
            .map(|i| (0..i).filter(|&j| self.has_edge(i, j)).count())
            .sum()
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.order).filter(move |&v| self.has_edge(u, v))
    }

    /// Whitespace separated 0/1 matrix, one row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.order * self.order * 2);
        for i in 0..self.order {
            let row: Vec<&str> = (0..self.order)
                .map(|j| if self.has_edge(i, j) { "1" } else { "0" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Same graph with nodes relabelled: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.order;
        let mut adjacency = vec![false; d * d];
        for i in 0..d {
            for j in 0..d {
                adjacency[i * d + j] = self.has_edge(perm[i], perm[j]);
            }
        }
        Self::assemble(d, adjacency, self.threshold, self.source.clone())
    }
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Pearson correlation coefficient, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(TmmError::Dimension(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if is_constant(x) || is_constant(y) {
        return Err(TmmError::ZeroVariance("pearson input is constant".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise correlation of all columns of a `rows × d` matrix.
pub fn correlation_matrix(columns: &Array) -> Result<Array> {
    let d = columns.cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| columns.column(j)).collect();
    for (j, c) in cols.iter().enumerate() {
        if is_constant(c) {
            return Err(TmmError::ZeroVariance(format!("column {j} is constant")));
        }
    }
    let mut r = Array::identity(d);
    for i in 0..d {
        for j in 0..i {
            let v = pearson(&cols[i], &cols[j])?;
            r.set2(i, j, v);
            r.set2(j, i, v);
        }
    }
    Ok(r)
}

/// Thresholds column correlations: edge `(i, j)` iff `r(i, j) >= threshold`.
///
/// Negative correlations never produce edges, however strong.
pub fn build_edge_matrix(columns: &Array, threshold: f64, source: EdgeSource) -> Result<EdgeMatrix> {
    if columns.ndim() != 2 || columns.cols() < 2 || columns.rows() < 2 {
        return Err(TmmError::Dimension(format!(
            "edge construction needs at least a 2×2 matrix, got {:?}",
            columns.shape()
        )));
    }
    let r = correlation_matrix(columns)?;
    let d = columns.cols();
    let adjacency = (0..d * d)
        .map(|k| k / d == k % d || r.data()[k] >= threshold)
        .collect();
    Ok(EdgeMatrix::assemble(d, adjacency, threshold, source))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Transcriptomic,
    Radiomic,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Transcriptomic => "T-RRI",
            View::Radiomic => "R-RRI",
        })
    }
}

/// One sample's graph under one view of one modality.
#[derive(Clone, Debug)]
pub struct SampleGraph {
    pub edges: Arc<EdgeMatrix>,
    /// `d × f` node features.
    pub node_features: Array,
    pub sample: usize,
    pub view: View,
    pub modality: String,
}

/// Builds the (T-RRI, R-RRI) graph pair of every sample of one modality.
pub fn assemble_sample_graphs(
    features: &FeatureMatrix,
    transcriptomic: &Arc<EdgeMatrix>,
    radiomic: &Arc<EdgeMatrix>,
) -> Result<Vec<(SampleGraph, SampleGraph)>> {
    let d = features.n_rois();
    for e in [transcriptomic, radiomic] {
        if e.order() != d {
            return Err(TmmError::Dimension(format!(
                "edge matrix of order {} for {d} ROIs",
                e.order()
            )));
        }
    }
    (0..features.n_samples())
        .map(|i| {
            let x = Array::new(&[d, 1], features.values.row(i).to_vec())?;
            let graph = |edges: &Arc<EdgeMatrix>, view| SampleGraph {
                edges: Arc::clone(edges),
                node_features: x.clone(),
                sample: i,
                view,
                modality: features.modality.clone(),
            };
            Ok((
                graph(transcriptomic, View::Transcriptomic),
                graph(radiomic, View::Radiomic),
            ))
        })
        .collect()
}
