//! Optimisation, evaluation and cross-validation.

mod metrics;
mod report;

use std::sync::Arc;

pub use metrics::{accuracy, auc, f1_score, mean_std, multiclass_auc, welch_t_test, Metrics};
pub use report::MetricsReport;

use crate::autodiff::{Array, Gradients, ParamId, Tape};
use crate::data::{stratified_split, Dataset};
use crate::error::{Result, TmmError};
use crate::model::{Model, ModelConfig, ModelGraphs, Normalizer};
use crate::rri::{build_edge_matrix, EdgeSource};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 300,
            eta1: 1.0,
            eta2: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(TmmError::Config("learning rate and epochs must be positive".into()));
        }
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0 && self.weight_decay >= 0.0) {
            return Err(TmmError::Config("loss weights and weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(TmmError::Config("Adam moments need β in [0, 1) and ε > 0".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates of every parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Array>,
    v: Vec<Array>,
    step: i32,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        Self {
            m: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> i32 {
        self.step
    }
}

/// One Adam update with decoupled weight decay. Parameters are indexed by
/// their [`ParamId`]; nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut [Array], grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        let g = grads
            .get(ParamId(i))
            .ok_or_else(|| TmmError::Dimension(format!("no gradient for parameter {i}")))?;
        if g.shape() != p.shape() {
            return Err(TmmError::Dimension(format!(
                "gradient {:?} for parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(TmmError::Numeric(format!("non-finite gradient for parameter {i}")));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step);
    let bc2 = 1.0 - cfg.beta2.powi(state.step);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads.get(ParamId(i)).expect("checked above").data();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.adam_eps);
            *x = *x * decay - cfg.learning_rate * update;
        }
    }
    Ok(())
}

/// Graphs and normalisers from the training samples: the transcriptomic
/// graph from the expression matrix, one radiomic graph per modality.
pub fn fit_graphs(dataset: &Dataset, train_idx: &[usize], cfg: &ModelConfig) -> Result<(ModelGraphs, Vec<Normalizer>)> {
    let transcriptomic = Arc::new(build_edge_matrix(
        &dataset.expression.values,
        cfg.lambda_t,
        EdgeSource::Transcriptomic,
    )?);
    let mut radiomic = Vec::with_capacity(dataset.modalities.len());
    let mut normalizers = Vec::with_capacity(dataset.modalities.len());
    for m in &dataset.modalities {
        let x = m.values.select_rows(train_idx);
        radiomic.push(Arc::new(build_edge_matrix(&x, cfg.lambda_r, EdgeSource::Modality(m.modality.clone()))?));
        normalizers.push(Normalizer::fit(&x)?);
    }
    Ok((ModelGraphs { transcriptomic, radiomic }, normalizers))
}

/// Full-batch training of `model`; returns the loss of every epoch.
pub fn train_model(model: &mut Model, features: &[Array], labels: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut state = AdamState::new(model.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let diverged = |e: TmmError| TmmError::Diverged {
            epoch,
            message: e.to_string(),
        };
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, features, Some(labels)).map_err(diverged)?;
        let loss = Model::total_loss(&mut tape, &fwd, cfg.eta1, cfg.eta2).map_err(diverged)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(diverged(TmmError::Numeric(format!("loss is {value}"))));
        }
        history.push(value);
        let grads = tape.backward(loss).map_err(diverged)?;
        adam_step(model.params_mut(), &grads, &mut state, cfg).map_err(diverged)?;
    }
    Ok(history)
}

/// Builds graphs on `train_idx`, initialises a model from `cfg.seed` and
/// trains it.
pub fn fit(dataset: &Dataset, train_idx: &[usize], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Model, Vec<f64>)> {
    let train_labels = dataset.labels_of(train_idx);
    if train_labels.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(TmmError::Data("training samples contain a single class".into()));
    }
    let model_cfg = ModelConfig {
        classes: model_cfg.classes.max(dataset.classes),
        ..model_cfg.clone()
    };
    let (graphs, normalizers) = fit_graphs(dataset, train_idx, &model_cfg)?;
    let mut model = Model::new(
        model_cfg,
        dataset.modality_names(),
        dataset.roi_ids().to_vec(),
        normalizers,
        graphs,
        cfg.seed,
    )?;
    let history = train_model(&mut model, &dataset.features(train_idx), &train_labels, cfg)?;
    Ok((model, history))
}

pub fn evaluate(model: &Model, features: &[Array], labels: &[usize]) -> Result<Metrics> {
    let pred = model.predict(features)?;
    let classes = model.config.classes;
    Ok(Metrics {
        acc: accuracy(&pred.labels(), labels),
        f1: f1_score(&pred.labels(), labels, classes),
        auc: multiclass_auc(pred.probs.data(), labels, classes)?,
    })
}

/// Stratified `k`-fold cross-validation; fold `f` trains with seed
/// `cfg.seed + f`.
pub fn cross_validate(dataset: &Dataset, k: usize, model_cfg: &ModelConfig, cfg: &TrainConfig, task: &str) -> Result<MetricsReport> {
    let split = stratified_split(&dataset.labels, k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let train_idx = split.train(f);
        let test_idx = split.test(f);
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(f as u64),
            ..cfg.clone()
        };
        let (model, _) = fit(dataset, &train_idx, model_cfg, &fold_cfg)?;
        folds.push(evaluate(&model, &dataset.features(test_idx), &dataset.labels_of(test_idx))?);
    }
    Ok(MetricsReport::new(task, folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::gat::EncoderConfig;

    fn one_param_grads(g: f64) -> Gradients {
        let mut t = Tape::new();
        let p = t.param(ParamId(0), Array::scalar(0.0));
        let l = t.affine(p, g, 0.0).unwrap();
        t.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_only_decays() {
        let cfg = TrainConfig::default();
        let mut params = vec![Array::scalar(2.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &one_param_grads(0.0), &mut state, &cfg).unwrap();
        assert_eq!(params[0].item(), 2.0 * (1.0 - 1e-3 * 1e-4));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut params = vec![Array::scalar(0.5)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &one_param_grads(1.0), &mut state, &cfg).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        assert!((params[0].item() - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = vec![Array::scalar(1.0)];
            let mut s = AdamState::new(&p);
            for g in [0.3, -1.2, 2.5] {
                adam_step(&mut p, &one_param_grads(g), &mut s, &cfg).unwrap();
            }
            p[0].item()
        };
        assert_eq!(run().to_bits(), run().to_bits());

        let mut params = vec![Array::scalar(1.0)];
        let mut s = AdamState::new(&params);
        let mut bad = Gradients::default();
        bad.insert(ParamId(0), Array::scalar(f64::NAN));
        assert!(matches!(adam_step(&mut params, &bad, &mut s, &cfg), Err(TmmError::Numeric(_))));
        assert_eq!(params[0].item(), 1.0);
        assert_eq!(s.step(), 0);
    }

    fn separable_toy() -> Dataset {
        let spec = SyntheticSpec {
            n: 40,
            d: 6,
            n_genes: 30,
            modalities: 2,
            n_blocks: 2,
            informative_rois: 3,
            class_effect: 4.0,
            sigma_lo: 0.2,
            sigma_hi: 0.4,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, 11).unwrap().0
    }

    fn toy_model_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig { levels: 3, heads: 2, head_dim: 4 },
            att_dim: 8,
            conf_hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn separable_toy_is_fitted_and_reproducible() {
        let ds = separable_toy();
        let idx: Vec<usize> = (0..ds.n_samples()).collect();
        let cfg = TrainConfig { seed: 3, epochs: 300, ..TrainConfig::default() };
        let (model, history) = fit(&ds, &idx, &toy_model_config(), &cfg).unwrap();
        let m = evaluate(&model, &ds.features(&idx), &ds.labels).unwrap();
        assert_eq!(m.acc, 1.0);
        // smoothed loss never rises across 50-epoch windows
        let smooth: Vec<f64> = history.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
        for i in (0..smooth.len().saturating_sub(50)).step_by(10) {
            assert!(smooth[i + 50] <= smooth[i], "epoch {i}");
        }
        let (_, again) = fit(&ds, &idx, &toy_model_config(), &cfg).unwrap();
        assert_eq!(history, again);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let ds = separable_toy();
        let idx: Vec<usize> = (0..ds.n_samples()).filter(|&i| ds.labels[i] == 0).collect();
        assert!(matches!(fit(&ds, &idx, &toy_model_config(), &TrainConfig::default()), Err(TmmError::Data(_))));
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = separable_toy();
        let idx: Vec<usize> = (0..ds.n_samples()).collect();
        let cfg = TrainConfig { learning_rate: 1e200, epochs: 5, ..TrainConfig::default() };
        match fit(&ds, &idx, &toy_model_config(), &cfg) {
            Err(TmmError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("{other:?}"),
        }
    }
}
