//! The full network: per-modality GAT encoders on both graph views,
//! cross-view fusion, confidence weighting and cross-modal fusion.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, ParamId, Tape, Var};
use crate::confidence::{
    confidence_loss, confidence_targets, perceptron, squared_gap, ConfidenceNets, PerceptronVars,
};
use crate::error::{Result, TmmError};
use crate::fusion::{
    cross_modal_fuse, cross_view_fuse, final_classifier, linear, modality_classifier, self_attend,
    AttentionVars, LinearVars,
};
use crate::gat::{encode_batch, EncoderConfig, HeadVars};
use crate::rri::EdgeMatrix;

/// Which graph views feed each modality's representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewSet {
    Both,
    TranscriptomicOnly,
    RadiomicOnly,
    Neither,
}

impl ViewSet {
    pub fn from_flags(transcriptomic: bool, radiomic: bool) -> Self {
        match (transcriptomic, radiomic) {
            (true, true) => ViewSet::Both,
            (true, false) => ViewSet::TranscriptomicOnly,
            (false, true) => ViewSet::RadiomicOnly,
            (false, false) => ViewSet::Neither,
        }
    }

    pub fn uses_transcriptomic(self) -> bool {
        matches!(self, ViewSet::Both | ViewSet::TranscriptomicOnly)
    }

    pub fn uses_radiomic(self) -> bool {
        matches!(self, ViewSet::Both | ViewSet::RadiomicOnly)
    }
}

impl FromStr for ViewSet {
    type Err = TmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ViewSet::Both),
            "t-rri" | "t" => Ok(ViewSet::TranscriptomicOnly),
            "r-rri" | "r" => Ok(ViewSet::RadiomicOnly),
            "none" | "neither" => Ok(ViewSet::Neither),
            _ => Err(TmmError::Config(format!("unknown view set {s:?}"))),
        }
    }
}

impl fmt::Display for ViewSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewSet::Both => "both",
            ViewSet::TranscriptomicOnly => "t-rri",
            ViewSet::RadiomicOnly => "r-rri",
            ViewSet::Neither => "none",
        })
    }
}

/// How each modality's trust weight is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfidenceMode {
    /// Harmonic TCP/FCP estimate regressed onto the TFCP target.
    Tfcp,
    /// TCP estimate alone, regressed onto the TCP target.
    Tcp,
    /// Plain perceptron trained only through the downstream loss.
    Nn,
}

impl FromStr for ConfidenceMode {
    type Err = TmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfcp" => Ok(ConfidenceMode::Tfcp),
            "tcp" => Ok(ConfidenceMode::Tcp),
            "nn" => Ok(ConfidenceMode::Nn),
            _ => Err(TmmError::Config(format!("unknown confidence mode {s:?}"))),
        }
    }
}

impl fmt::Display for ConfidenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceMode::Tfcp => "TFCP",
            ConfidenceMode::Tcp => "TCP",
            ConfidenceMode::Nn => "NN",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub att_dim: usize,
    pub conf_hidden: usize,
    pub classes: usize,
    pub views: ViewSet,
    pub confidence: ConfidenceMode,
    pub lambda_t: f64,
    pub lambda_r: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            att_dim: 32,
            conf_hidden: 32,
            classes: 2,
            views: ViewSet::Both,
            confidence: ConfidenceMode::Tfcp,
            lambda_t: 0.2,
            lambda_r: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.att_dim == 0 || self.conf_hidden == 0 {
            return Err(TmmError::Config("attention and confidence widths must be positive".into()));
        }
        if self.classes < 2 {
            return Err(TmmError::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        for (name, l) in [("lambda_t", self.lambda_t), ("lambda_r", self.lambda_r)] {
            if !(l > -1.0 && l <= 1.0) {
                return Err(TmmError::Config(format!("{name} = {l} outside (-1, 1]")));
            }
        }
        Ok(())
    }

    /// Width of a modality representation `Z`.
    pub fn modal_dim(&self) -> usize {
        match self.views {
            ViewSet::Both => 2 * self.att_dim,
            _ => self.att_dim,
        }
    }

    /// Width of the fused representation `U`.
    pub fn fused_dim(&self, modalities: usize) -> usize {
        if modalities < 2 {
            self.att_dim
        } else {
            modalities * (modalities - 1) * self.att_dim
        }
    }
}

/// Per-ROI standardisation fitted on training samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(values: &Array) -> Result<Self> {
        let n = values.rows() as f64;
        let mut mean = Vec::with_capacity(values.cols());
        let mut std = Vec::with_capacity(values.cols());
        for c in 0..values.cols() {
            let col = values.column(c);
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            if v <= 0.0 {
                return Err(TmmError::ZeroVariance(format!("feature column {c} is constant")));
            }
            mean.push(m);
            std.push(v.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &Array) -> Result<Array> {
        if values.cols() != self.mean.len() {
            return Err(TmmError::Dimension(format!(
                "{} feature columns, normaliser fitted on {}",
                values.cols(),
                self.mean.len()
            )));
        }
        let d = self.mean.len();
        let mut out = values.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            *x = (*x - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }
}

/// Edge matrices a model was fitted with.
#[derive(Clone, Debug)]
pub struct ModelGraphs {
    pub transcriptomic: Arc<EdgeMatrix>,
    pub radiomic: Vec<Arc<EdgeMatrix>>,
}

type Lin = (usize, usize);
type Perc = (Lin, Lin);
type Triple = [usize; 3];

#[derive(Clone, Debug)]
enum ConfLayout {
    Tfcp { classifier: Lin, tcp: Perc, fcp: Perc },
    Tcp { classifier: Lin, tcp: Perc },
    Nn { net: Perc },
}

#[derive(Clone, Debug)]
struct ModalityLayout {
    t_layers: Vec<Vec<(usize, usize)>>,
    r_layers: Vec<Vec<(usize, usize)>>,
    proj_t: Option<Triple>,
    proj_r: Option<Triple>,
    proj_self: Option<Triple>,
    aux: Lin,
    conf: ConfLayout,
}

#[derive(Clone, Debug)]
struct Layout {
    modalities: Vec<ModalityLayout>,
    fusion: Vec<Triple>,
    head: Lin,
}

struct Builder<'a> {
    params: Vec<Array>,
    names: Vec<String>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-limit..limit)).collect();
        self.push(name, Array::new(&[rows, cols], data).expect("positive extents"))
    }

    fn bias(&mut self, name: String, len: usize) -> usize {
        self.push(name, Array::zeros(&[len]))
    }

    fn push(&mut self, name: String, a: Array) -> usize {
        self.params.push(a);
        self.names.push(name);
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, f_in: usize, f_out: usize) -> Lin {
        (self.weight(format!("{name}.w"), f_in, f_out), self.bias(format!("{name}.b"), f_out))
    }

    fn perceptron(&mut self, name: &str, f_in: usize, hidden: usize) -> Perc {
        (self.linear(&format!("{name}.hidden"), f_in, hidden), self.linear(&format!("{name}.out"), hidden, 1))
    }

    fn triple(&mut self, name: &str, f_in: usize, f_att: usize) -> Triple {
        [
            self.weight(format!("{name}.q"), f_in, f_att),
            self.weight(format!("{name}.k"), f_in, f_att),
            self.weight(format!("{name}.v"), f_in, f_att),
        ]
    }

    fn encoder(&mut self, name: &str, cfg: &EncoderConfig) -> Vec<Vec<(usize, usize)>> {
        let mut f_in = 1;
        (0..cfg.levels)
            .map(|l| {
                let heads = (0..cfg.heads)
                    .map(|k| {
                        let w = self.weight(format!("{name}.l{l}.h{k}.w"), f_in, cfg.head_dim);
                        let a = self.weight(format!("{name}.l{l}.h{k}.a"), 2 * cfg.head_dim, 1);
                        (w, a)
                    })
                    .collect();
                f_in = cfg.layer_width();
                heads
            })
            .collect()
    }
}

fn build_layout(cfg: &ModelConfig, modalities: &[String], rng: &mut ChaCha8Rng) -> (Layout, Vec<Array>, Vec<String>) {
    let mut b = Builder {
        params: Vec::new(),
        names: Vec::new(),
        rng,
    };
    let f_view = cfg.encoder.output_dim();
    let f_z = cfg.modal_dim();
    let mut mods = Vec::with_capacity(modalities.len());
    for m in modalities {
        let t_layers = if cfg.views.uses_transcriptomic() { b.encoder(&format!("{m}.gat_t"), &cfg.encoder) } else { Vec::new() };
        let r_layers = if cfg.views.uses_radiomic() { b.encoder(&format!("{m}.gat_r"), &cfg.encoder) } else { Vec::new() };
        let (proj_t, proj_r, proj_self) = match cfg.views {
            ViewSet::Both => (
                Some(b.triple(&format!("{m}.att_t"), f_view, cfg.att_dim)),
                Some(b.triple(&format!("{m}.att_r"), f_view, cfg.att_dim)),
                None,
            ),
            ViewSet::TranscriptomicOnly | ViewSet::RadiomicOnly => (None, None, Some(b.triple(&format!("{m}.att_self"), f_view, cfg.att_dim))),
            ViewSet::Neither => (None, None, Some(b.triple(&format!("{m}.att_self"), 1, cfg.att_dim))),
        };
        let aux = b.linear(&format!("{m}.aux"), f_z, cfg.classes);
        let conf = match cfg.confidence {
            ConfidenceMode::Tfcp => ConfLayout::Tfcp {
                classifier: b.linear(&format!("{m}.conf_cls"), f_z, cfg.classes),
                tcp: b.perceptron(&format!("{m}.theta_t"), f_z, cfg.conf_hidden),
                fcp: b.perceptron(&format!("{m}.theta_f"), f_z, cfg.conf_hidden),
            },
            ConfidenceMode::Tcp => ConfLayout::Tcp {
                classifier: b.linear(&format!("{m}.conf_cls"), f_z, cfg.classes),
                tcp: b.perceptron(&format!("{m}.theta_t"), f_z, cfg.conf_hidden),
            },
            ConfidenceMode::Nn => ConfLayout::Nn {
                net: b.perceptron(&format!("{m}.conf_nn"), f_z, cfg.conf_hidden),
            },
        };
        mods.push(ModalityLayout {
            t_layers,
            r_layers,
            proj_t,
            proj_r,
            proj_self,
            aux,
            conf,
        });
    }
    let big_m = modalities.len();
    let fusion = if big_m < 2 {
        vec![b.triple("fusion.self", f_z, cfg.att_dim)]
    } else {
        let mut v = Vec::with_capacity(big_m * (big_m - 1));
        for m in modalities {
            for j in modalities.iter().filter(|j| *j != m) {
                v.push(b.triple(&format!("fusion.{m}.{j}"), f_z, cfg.att_dim));
            }
        }
        v
    };
    let head = b.linear("head", cfg.fused_dim(big_m), cfg.classes);
    let layout = Layout {
        modalities: mods,
        fusion,
        head,
    };
    (layout, b.params, b.names)
}

/// Tape handles and loss terms of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Per-modality trust weights `[n, 1]`.
    pub weights: Vec<Var>,
    /// Per-modality TCP and FCP estimates, where the mode produces them.
    pub tcp_hat: Vec<Option<Var>>,
    pub fcp_hat: Vec<Option<Var>>,
    pub gat_losses: Vec<Var>,
    pub conf_losses: Vec<Var>,
    pub final_loss: Option<Var>,
}

/// Evaluated predictions with the per-modality confidence estimates.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub probs: Array,
    pub weights: Vec<Vec<f64>>,
    pub tcp_hat: Vec<Option<Vec<f64>>>,
    pub fcp_hat: Vec<Option<Vec<f64>>>,
}

impl Prediction {
    pub fn labels(&self) -> Vec<usize> {
        (0..self.probs.rows())
            .map(|i| {
                let row = self.probs.row(i);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect()
    }

    /// Probability of class 1, the score used for AUC.
    pub fn positive_scores(&self) -> Vec<f64> {
        (0..self.probs.rows()).map(|i| self.probs.get2(i, 1)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub modalities: Vec<String>,
    pub roi_ids: Vec<String>,
    pub normalizers: Vec<Normalizer>,
    pub graphs: ModelGraphs,
    params: Vec<Array>,
    names: Vec<String>,
    layout: Layout,
}

fn head_vars(v: &[Var], layers: &[Vec<(usize, usize)>]) -> Vec<Vec<HeadVars>> {
    layers
        .iter()
        .map(|l| l.iter().map(|&(w, a)| HeadVars { w: v[w], a: v[a] }).collect())
        .collect()
}

fn lin(v: &[Var], (w, b): Lin) -> LinearVars {
    LinearVars { w: v[w], b: v[b] }
}

fn perc(v: &[Var], (h, o): Perc) -> PerceptronVars {
    PerceptronVars {
        hidden: lin(v, h),
        out: lin(v, o),
    }
}

fn att(v: &[Var], t: Triple) -> AttentionVars {
    AttentionVars {
        q: v[t[0]],
        k: v[t[1]],
        v: v[t[2]],
    }
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(
        config: ModelConfig,
        modalities: Vec<String>,
        roi_ids: Vec<String>,
        normalizers: Vec<Normalizer>,
        graphs: ModelGraphs,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if modalities.is_empty() {
            return Err(TmmError::Config("a model needs at least one modality".into()));
        }
        let d = roi_ids.len();
        if normalizers.len() != modalities.len() || graphs.radiomic.len() != modalities.len() {
            return Err(TmmError::Dimension(format!(
                "{} modalities with {} normalisers and {} radiomic graphs",
                modalities.len(),
                normalizers.len(),
                graphs.radiomic.len()
            )));
        }
        if graphs.transcriptomic.order() != d
            || graphs.radiomic.iter().any(|g| g.order() != d)
            || normalizers.iter().any(|n| n.mean.len() != d)
        {
            return Err(TmmError::Dimension(format!("graphs or normalisers disagree with {d} ROIs")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params, names) = build_layout(&config, &modalities, &mut rng);
        Ok(Self {
            config,
            modalities,
            roi_ids,
            normalizers,
            graphs,
            params,
            names,
            layout,
        })
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array::len).sum()
    }

    /// Replaces every parameter, checking names and shapes.
    pub fn set_params(&mut self, named: Vec<(String, Array)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(TmmError::Data(format!(
                "{} parameters supplied, model has {}",
                named.len(),
                self.params.len()
            )));
        }
        for (i, (name, a)) in named.into_iter().enumerate() {
            if name != self.names[i] || a.shape() != self.params[i].shape() {
                return Err(TmmError::Data(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    a.shape(),
                    self.names[i],
                    self.params[i].shape()
                )));
            }
            self.params[i] = a;
        }
        Ok(())
    }

    fn check_features(&self, features: &[Array]) -> Result<usize> {
        if features.len() != self.modalities.len() {
            return Err(TmmError::Dimension(format!(
                "{} feature matrices for {} modalities",
                features.len(),
                self.modalities.len()
            )));
        }
        let n = features[0].rows();
        for f in features {
            if f.ndim() != 2 || f.rows() != n || f.cols() != self.roi_ids.len() {
                return Err(TmmError::Dimension(format!(
                    "feature matrix {:?}, expected [{n}, {}]",
                    f.shape(),
                    self.roi_ids.len()
                )));
            }
        }
        Ok(n)
    }

    /// Records the network on `tape`. `features` are raw per-modality
    /// `[n, d]` matrices; with labels the loss terms are recorded as well.
    pub fn forward(&self, tape: &mut Tape, features: &[Array], labels: Option<&[usize]>) -> Result<Forward> {
        let v: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect();
        self.forward_with(tape, &v, features, labels)
    }

    /// As [`Model::forward`], with the parameters already on the tape in
    /// the model's parameter order.
    pub fn forward_with(&self, tape: &mut Tape, v: &[Var], features: &[Array], labels: Option<&[usize]>) -> Result<Forward> {
        let n = self.check_features(features)?;
        if let Some(y) = labels {
            if y.len() != n {
                return Err(TmmError::Dimension(format!("{} labels for {n} samples", y.len())));
            }
        }
        if v.len() != self.params.len() {
            return Err(TmmError::Dimension(format!(
                "{} parameter handles for {} parameters",
                v.len(),
                self.params.len()
            )));
        }
        let d = self.roi_ids.len();
        let cfg = &self.config;
        let mut hs = Vec::with_capacity(self.modalities.len());
        let mut fwd = Forward {
            logits: v[0],
            weights: Vec::new(),
            tcp_hat: Vec::new(),
            fcp_hat: Vec::new(),
            gat_losses: Vec::new(),
            conf_losses: Vec::new(),
            final_loss: None,
        };
        for (m, ml) in self.layout.modalities.iter().enumerate() {
            let x = self.normalizers[m].apply(&features[m])?;
            let x = tape.constant(x.reshaped(&[n, d, 1])?);
            let z = match cfg.views {
                ViewSet::Both => {
                    let ft = encode_batch(tape, x, &self.graphs.transcriptomic, &head_vars(v, &ml.t_layers))?;
                    let fr = encode_batch(tape, x, &self.graphs.radiomic[m], &head_vars(v, &ml.r_layers))?;
                    cross_view_fuse(tape, ft, fr, att(v, ml.proj_t.expect("both views")), att(v, ml.proj_r.expect("both views")))?
                }
                ViewSet::TranscriptomicOnly => {
                    let ft = encode_batch(tape, x, &self.graphs.transcriptomic, &head_vars(v, &ml.t_layers))?;
                    self_attend(tape, ft, att(v, ml.proj_self.expect("single view")))?
                }
                ViewSet::RadiomicOnly => {
                    let fr = encode_batch(tape, x, &self.graphs.radiomic[m], &head_vars(v, &ml.r_layers))?;
                    self_attend(tape, fr, att(v, ml.proj_self.expect("single view")))?
                }
                ViewSet::Neither => {
                    let pooled = tape.mean_axis(x, 1)?;
                    self_attend(tape, pooled, att(v, ml.proj_self.expect("no view")))?
                }
            };
            if let (_, Some(loss)) = modality_classifier(tape, z, lin(v, ml.aux), labels)? {
                fwd.gat_losses.push(loss);
            }
            let (weight, tcp_hat, fcp_hat) = match ml.conf {
                ConfLayout::Tfcp { classifier, tcp, fcp } => {
                    let nets = ConfidenceNets {
                        classifier: lin(v, classifier),
                        tcp: perc(v, tcp),
                        fcp: perc(v, fcp),
                    };
                    let est = match labels {
                        Some(y) => {
                            let (loss, est) = confidence_loss(tape, z, y, &nets)?;
                            fwd.conf_losses.push(loss);
                            est
                        }
                        None => crate::confidence::estimate_confidence(tape, z, &nets)?,
                    };
                    (est.tfcp, Some(est.tcp), Some(est.fcp))
                }
                ConfLayout::Tcp { classifier, tcp } => {
                    let tcp_hat = perceptron(tape, z, perc(v, tcp))?;
                    if let Some(y) = labels {
                        let logits = linear(tape, z, lin(v, classifier))?;
                        let target = confidence_targets(tape, logits, y)?;
                        let gap = squared_gap(tape, target.tcp, tcp_hat)?;
                        let cls = tape.cross_entropy(logits, y)?;
                        fwd.conf_losses.push(tape.add(gap, cls)?);
                    }
                    (tcp_hat, Some(tcp_hat), None)
                }
                ConfLayout::Nn { net } => (perceptron(tape, z, perc(v, net))?, None, None),
            };
            hs.push(tape.scale_rows(z, weight)?);
            fwd.weights.push(weight);
            fwd.tcp_hat.push(tcp_hat);
            fwd.fcp_hat.push(fcp_hat);
        }
        let u = if hs.len() < 2 {
            self_attend(tape, hs[0], att(v, self.layout.fusion[0]))?
        } else {
            let big_m = hs.len();
            let mut triples = Vec::with_capacity(big_m * big_m);
            let mut it = self.layout.fusion.iter();
            for m in 0..big_m {
                for j in 0..big_m {
                    if m == j {
                        // unused diagonal slot
                        triples.push(att(v, self.layout.fusion[0]));
                    } else {
                        triples.push(att(v, *it.next().expect("one triple per ordered pair")));
                    }
                }
            }
            cross_modal_fuse(tape, &hs, &triples)?
        };
        fwd.logits = final_classifier(tape, u, lin(v, self.layout.head))?;
        if let Some(y) = labels {
            fwd.final_loss = Some(tape.cross_entropy(fwd.logits, y)?);
        }
        Ok(fwd)
    }

    /// `η₁ Σ L_GAT + η₂ Σ L_conf + L_final`.
    pub fn total_loss(tape: &mut Tape, fwd: &Forward, eta1: f64, eta2: f64) -> Result<Var> {
        let mut total = fwd
            .final_loss
            .ok_or_else(|| TmmError::Usage("total loss needs labels".into()))?;
        for (terms, eta) in [(&fwd.gat_losses, eta1), (&fwd.conf_losses, eta2)] {
            for &t in terms.iter() {
                let s = tape.affine(t, eta, 0.0)?;
                total = tape.add(total, s)?;
            }
        }
        Ok(total)
    }

    pub fn predict(&self, features: &[Array]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, features, None)?;
        let probs = tape.softmax(fwd.logits, 1)?;
        let col = |v: Var| tape.value(v).data().to_vec();
        Ok(Prediction {
            probs: tape.value(probs).clone(),
            weights: fwd.weights.iter().map(|&w| col(w)).collect(),
            tcp_hat: fwd.tcp_hat.iter().map(|t| t.map(col)).collect(),
            fcp_hat: fwd.fcp_hat.iter().map(|t| t.map(col)).collect(),
        })
    }
}
