//! Plain-text model files: configuration, ROI and modality names,
//! normalisers, fitted graphs and every parameter at full precision.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::Array;
use crate::config::{model_lines, set_model_key};
use crate::error::{Result, TmmError};
use crate::model::{Model, ModelConfig, ModelGraphs, Normalizer};
use crate::rri::{EdgeMatrix, EdgeSource};

const MAGIC: &str = "tmm-model 1";

fn floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn write_graph(out: &mut String, g: &EdgeMatrix) {
    let _ = writeln!(out, "[graph {}]", g.source);
    let _ = writeln!(out, "threshold = {:?}", g.threshold);
    for i in 0..g.order() {
        let row: String = (0..g.order()).map(|j| if g.has_edge(i, j) { '1' } else { '0' }).collect();
        let _ = writeln!(out, "row = {row}");
    }
}

pub fn model_to_text(model: &Model) -> String {
    let mut out = format!("{MAGIC}\n[model]\n");
    out.push_str(&model_lines(&model.config));
    out.push_str("[names]\n");
    let _ = writeln!(out, "modalities = {}", model.modalities.join(" "));
    let _ = writeln!(out, "rois = {}", model.roi_ids.join(" "));
    for (name, norm) in model.modalities.iter().zip(&model.normalizers) {
        let _ = writeln!(out, "[normalizer {name}]");
        let _ = writeln!(out, "mean = {}", floats(&norm.mean));
        let _ = writeln!(out, "std = {}", floats(&norm.std));
    }
    write_graph(&mut out, &model.graphs.transcriptomic);
    for g in &model.graphs.radiomic {
        write_graph(&mut out, g);
    }
    for (name, p) in model.param_names().iter().zip(model.params()) {
        let _ = writeln!(out, "[param {name}]");
        let shape: Vec<String> = p.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "shape = {}", shape.join(" "));
        let _ = writeln!(out, "values = {}", floats(p.data()));
    }
    out
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_text(model)).map_err(|e| TmmError::io(path, e))
}

#[derive(Default)]
struct GraphDraft {
    source: String,
    threshold: f64,
    rows: Vec<Vec<bool>>,
}

impl GraphDraft {
    fn finish(self) -> Result<EdgeMatrix> {
        let d = self.rows.len();
        if self.rows.iter().any(|r| r.len() != d) {
            return Err(TmmError::Data(format!("graph {} is not square", self.source)));
        }
        let source = match self.source.as_str() {
            "transcriptomic" => EdgeSource::Transcriptomic,
            m => EdgeSource::Modality(m.to_string()),
        };
        EdgeMatrix::from_adjacency(d, self.rows.concat(), self.threshold, source)
    }
}

enum Section {
    None,
    Model,
    Names,
    Normalizer,
    Graph,
    Param,
}

pub fn model_from_text(text: &str, origin: &Path) -> Result<Model> {
    let mut lines = text.lines().enumerate();
    let fail = |line: usize, message: String| TmmError::Parse {
        path: origin.display().to_string(),
        line: line as u64,
        message,
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(fail(1, format!("not a model file (expected '{MAGIC}')"))),
    }
    let mut config = ModelConfig::default();
    let (mut modalities, mut rois) = (Vec::new(), Vec::new());
    let mut normalizers: Vec<Normalizer> = Vec::new();
    let mut graphs: Vec<GraphDraft> = Vec::new();
    let mut params: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut section = Section::None;
    for (no, line) in lines {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let (kind, name) = header.split_once(' ').unwrap_or((header, ""));
            section = match kind {
                "model" => Section::Model,
                "names" => Section::Names,
                "normalizer" => {
                    normalizers.push(Normalizer { mean: Vec::new(), std: Vec::new() });
                    Section::Normalizer
                }
                "graph" => {
                    graphs.push(GraphDraft { source: name.to_string(), ..GraphDraft::default() });
                    Section::Graph
                }
                "param" => {
                    params.push((name.to_string(), Vec::new(), Vec::new()));
                    Section::Param
                }
                _ => return Err(fail(line_no, format!("unknown section [{header}]"))),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| fail(line_no, format!("expected 'key = value', got '{line}'")))?;
        let nums = |v: &str| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|x| x.parse().map_err(|_| fail(line_no, format!("bad number '{x}'"))))
                .collect()
        };
        match (&section, key) {
            (Section::Model, _) => set_model_key(&mut config, key, value).map_err(|m| fail(line_no, m))?,
            (Section::Names, "modalities") => modalities = value.split_whitespace().map(String::from).collect(),
            (Section::Names, "rois") => rois = value.split_whitespace().map(String::from).collect(),
            (Section::Normalizer, "mean") => normalizers.last_mut().expect("open section").mean = nums(value)?,
            (Section::Normalizer, "std") => normalizers.last_mut().expect("open section").std = nums(value)?,
            (Section::Graph, "threshold") => {
                graphs.last_mut().expect("open section").threshold =
                    value.parse().map_err(|_| fail(line_no, format!("bad threshold '{value}'")))?
            }
            (Section::Graph, "row") => graphs
                .last_mut()
                .expect("open section")
                .rows
                .push(value.chars().map(|c| c == '1').collect()),
            (Section::Param, "shape") => {
                params.last_mut().expect("open section").1 = value
                    .split_whitespace()
                    .map(|x| x.parse().map_err(|_| fail(line_no, format!("bad extent '{x}'"))))
                    .collect::<Result<_>>()?
            }
            (Section::Param, "values") => params.last_mut().expect("open section").2 = nums(value)?,
            _ => return Err(fail(line_no, format!("unexpected key '{key}'"))),
        }
    }
    if graphs.len() != modalities.len() + 1 || normalizers.len() != modalities.len() {
        return Err(TmmError::Data(format!(
            "model file has {} graphs and {} normalisers for {} modalities",
            graphs.len(),
            normalizers.len(),
            modalities.len()
        )));
    }
    let mut graphs = graphs.into_iter().map(GraphDraft::finish);
    let transcriptomic = Arc::new(graphs.next().expect("checked above")?);
    let radiomic = graphs.map(|g| g.map(Arc::new)).collect::<Result<Vec<_>>>()?;
    let mut model = Model::new(
        config,
        modalities,
        rois,
        normalizers,
        ModelGraphs { transcriptomic, radiomic },
        0,
    )?;
    let named = params
        .into_iter()
        .map(|(name, shape, values)| Ok((name, Array::new(&shape, values)?)))
        .collect::<Result<Vec<_>>>()?;
    model.set_params(named)?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| TmmError::io(path, e))?;
    model_from_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::gat::EncoderConfig;
    use crate::model::ConfidenceMode;
    use crate::train::{fit, TrainConfig};

    #[test]
    fn round_trip_reproduces_predictions_exactly() {
        let spec = SyntheticSpec { n: 40, d: 6, n_genes: 30, n_blocks: 2, informative_rois: 2, modalities: 2, ..SyntheticSpec::default() };
        let (ds, _) = generate_synthetic(&spec, 5).unwrap();
        let cfg = ModelConfig {
            encoder: EncoderConfig { levels: 3, heads: 2, head_dim: 3 },
            att_dim: 4,
            conf_hidden: 4,
            confidence: ConfidenceMode::Tcp,
            ..ModelConfig::default()
        };
        let idx: Vec<usize> = (0..30).collect();
        let (model, _) = fit(&ds, &idx, &cfg, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        let text = model_to_text(&model);
        let back = model_from_text(&text, Path::new("m.txt")).unwrap();
        assert_eq!(model_to_text(&back), text);
        assert_eq!(back.config, model.config);
        let all: Vec<usize> = (0..40).collect();
        let (a, b) = (model.predict(&ds.features(&all)).unwrap(), back.predict(&ds.features(&all)).unwrap());
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(model_from_text("hello\n", Path::new("x")), Err(TmmError::Parse { line: 1, .. })));
        let bad = format!("{MAGIC}\n[model]\nviews = sideways\n");
        assert!(matches!(model_from_text(&bad, Path::new("x")), Err(TmmError::Parse { line: 3, .. })));
    }
}
