//! Line-oriented `key = value` run configuration with `[spec]`, `[model]`
//! and `[train]` sections.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::SyntheticSpec;
use crate::error::{Result, TmmError};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Everything a CLI run needs besides file paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub spec: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Folds of cross-validation.
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("invalid value '{value}' for {key}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |message: String| TmmError::Parse {
                path: origin.display().to_string(),
                line: no as u64 + 1,
                message,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["spec", "model", "train"].contains(&section.as_str()) {
                    return Err(fail(format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected 'key = value', got '{line}'")))?;
            cfg.set(&section, key.trim(), value.trim()).map_err(fail)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TmmError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.folds < 2 {
            return Err(TmmError::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        let (s, m, t) = (&mut self.spec, &mut self.model, &mut self.train);
        match (section, key) {
            ("spec", "n") => s.n = parse(key, value)?,
            ("spec", "d") => s.d = parse(key, value)?,
            ("spec", "n_genes") => s.n_genes = parse(key, value)?,
            ("spec", "modalities") => s.modalities = parse(key, value)?,
            ("spec", "classes") => s.classes = parse(key, value)?,
            ("spec", "n_blocks") => s.n_blocks = parse(key, value)?,
            ("spec", "informative_rois") => s.informative_rois = parse(key, value)?,
            ("spec", "class_effect") => s.class_effect = parse(key, value)?,
            ("spec", "sigma_lo") => s.sigma_lo = parse(key, value)?,
            ("spec", "sigma_hi") => s.sigma_hi = parse(key, value)?,
            ("spec", "class_sizes") => {
                let sizes: Vec<usize> = parse_list(key, value)?;
                s.class_sizes = (!sizes.is_empty()).then_some(sizes);
            }
            ("spec", "modality_scale") => s.modality_scale = parse_list(key, value)?,
            ("model", _) => set_model_key(m, key, value)?,
            ("train", "learning_rate") => t.learning_rate = parse(key, value)?,
            ("train", "weight_decay") => t.weight_decay = parse(key, value)?,
            ("train", "epochs") => t.epochs = parse(key, value)?,
            ("train", "eta1") => t.eta1 = parse(key, value)?,
            ("train", "eta2") => t.eta2 = parse(key, value)?,
            ("train", "seed") => t.seed = parse(key, value)?,
            ("train", "beta1") => t.beta1 = parse(key, value)?,
            ("train", "beta2") => t.beta2 = parse(key, value)?,
            ("train", "adam_eps") => t.adam_eps = parse(key, value)?,
            ("train", "folds") => self.folds = parse(key, value)?,
            ("", _) => return Err(format!("key '{key}' outside of a section")),
            _ => return Err(format!("unknown key '{key}' in [{section}]")),
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_text(&self) -> String {
        let (s, m, t) = (&self.spec, &self.model, &self.train);
        let mut out = String::from("[spec]\n");
        let _ = writeln!(out, "n = {}", s.n);
        let _ = writeln!(out, "d = {}", s.d);
        let _ = writeln!(out, "n_genes = {}", s.n_genes);
        let _ = writeln!(out, "modalities = {}", s.modalities);
        let _ = writeln!(out, "classes = {}", s.classes);
        let _ = writeln!(out, "n_blocks = {}", s.n_blocks);
        let _ = writeln!(out, "informative_rois = {}", s.informative_rois);
        let _ = writeln!(out, "class_effect = {}", s.class_effect);
        let _ = writeln!(out, "sigma_lo = {}", s.sigma_lo);
        let _ = writeln!(out, "sigma_hi = {}", s.sigma_hi);
        let _ = writeln!(out, "class_sizes = {}", s.class_sizes.as_deref().map(join).unwrap_or_default());
        let _ = writeln!(out, "modality_scale = {}", join(&s.modality_scale));
        out.push_str("\n[model]\n");
        out.push_str(&model_lines(m));
        out.push_str("\n[train]\n");
        let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(out, "epochs = {}", t.epochs);
        let _ = writeln!(out, "eta1 = {}", t.eta1);
        let _ = writeln!(out, "eta2 = {}", t.eta2);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "beta1 = {}", t.beta1);
        let _ = writeln!(out, "beta2 = {}", t.beta2);
        let _ = writeln!(out, "adam_eps = {}", t.adam_eps);
        let _ = writeln!(out, "folds = {}", self.folds);
        out
    }
}

/// Applies one `[model]` key.
pub(crate) fn set_model_key(m: &mut ModelConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "levels" => m.encoder.levels = parse(key, value)?,
        "heads" => m.encoder.heads = parse(key, value)?,
        "head_dim" => m.encoder.head_dim = parse(key, value)?,
        "att_dim" => m.att_dim = parse(key, value)?,
        "conf_hidden" => m.conf_hidden = parse(key, value)?,
        "classes" => m.classes = parse(key, value)?,
        "views" => m.views = value.parse().map_err(|e| format!("{e}"))?,
        "confidence" => m.confidence = value.parse().map_err(|e| format!("{e}"))?,
        "lambda_t" => m.lambda_t = parse(key, value)?,
        "lambda_r" => m.lambda_r = parse(key, value)?,
        _ => return Err(format!("unknown key '{key}' in [model]")),
    }
    Ok(())
}

/// The `[model]` section body.
pub(crate) fn model_lines(m: &ModelConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "levels = {}", m.encoder.levels);
    let _ = writeln!(out, "heads = {}", m.encoder.heads);
    let _ = writeln!(out, "head_dim = {}", m.encoder.head_dim);
    let _ = writeln!(out, "att_dim = {}", m.att_dim);
    let _ = writeln!(out, "conf_hidden = {}", m.conf_hidden);
    let _ = writeln!(out, "classes = {}", m.classes);
    let _ = writeln!(out, "views = {}", m.views);
    let _ = writeln!(out, "confidence = {}", m.confidence);
    let _ = writeln!(out, "lambda_t = {}", m.lambda_t);
    let _ = writeln!(out, "lambda_r = {}", m.lambda_r);
    out
}
