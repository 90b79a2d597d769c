//! Multi-head graph attention encoder.
//!
//! Node features live in `[batch, nodes, features]` arrays so every sample
//! sharing one edge matrix is processed by the same tape operations.
//! Three layers are stacked on a fixed topology; each layer's node
//! embeddings are mean-pooled and the three pooled vectors concatenated.

use crate::autodiff::{Activation, Array, ParamId, Tape, Var};

/// Negative slope of the leaky-relu inside attention logits.
const GAT_SLOPE: f64 = 0.2;
use crate::error::{Result, TmmError};
use crate::rri::{EdgeMatrix, SampleGraph, View};

/// Tape handles of one attention head: `w` is `f_in × f_head`, `a` is
/// `2·f_head × 1` and scores the pair `(W h_u ‖ W h_v)`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w: Var,
    pub a: Var,
}

/// Concrete weights of one attention head.
#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: Array,
    pub a: Array,
}

#[derive(Clone, Debug)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
}

impl GatLayerParams {
    pub fn validate(&self) -> Result<(usize, usize)> {
        let first = self
            .heads
            .first()
            .ok_or_else(|| TmmError::Config("a GAT layer needs at least one head".into()))?;
        let (f_in, f_head) = (first.w.rows(), first.w.cols());
        for h in &self.heads {
            if h.w.shape() != [f_in, f_head] || h.a.shape() != [2 * f_head, 1] {
                return Err(TmmError::Dimension(format!(
                    "head weights {:?}/{:?} inconsistent with {f_in}×{f_head}",
                    h.w.shape(),
                    h.a.shape()
                )));
            }
        }
        Ok((f_in, f_head))
    }

    fn record(&self, tape: &mut Tape, next_id: &mut usize) -> Vec<HeadVars> {
        self.heads
            .iter()
            .map(|h| {
                let w = tape.param(ParamId(*next_id), h.w.clone());
                let a = tape.param(ParamId(*next_id + 1), h.a.clone());
                *next_id += 2;
                HeadVars { w, a }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub levels: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            heads: 2,
            head_dim: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != 3 {
            return Err(TmmError::Config(format!(
                "the encoder stacks exactly 3 levels, got {}",
                self.levels
            )));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return Err(TmmError::Config("heads and head width must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Width of the pooled view representation.
    pub fn output_dim(&self) -> usize {
        self.levels * self.layer_width()
    }
}

/// Pooled per-sample representation of one view.
#[derive(Clone, Debug)]
pub struct ViewRepresentation {
    pub features: Array,
    pub view: View,
    pub modality: String,
}

fn check_input(tape: &Tape, h: Var, edges: &EdgeMatrix) -> Result<(usize, usize, usize)> {
    let s = tape.shape(h);
    if s.len() != 3 || s[1] != edges.order() {
        return Err(TmmError::Dimension(format!(
            "node features {s:?} for a graph of order {}",
            edges.order()
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Per-node source and destination attention scores `[batch, d]` each.
fn head_scores(tape: &mut Tape, h2: Var, wh: Option<Var>, head: HeadVars, dims: (usize, usize, usize)) -> Result<(Var, Var)> {
    let (batch, d, _) = dims;
    let fh = tape.shape(head.w)[1];
    let a_src = tape.slice(head.a, 0, 0, fh)?;
    let a_dst = tape.slice(head.a, 0, fh, fh)?;
    let (src, dst) = match wh {
        Some(wh) => (tape.matmul(wh, a_src)?, tape.matmul(wh, a_dst)?),
        None => {
            // (h W) a == h (W a): cheaper when f_in < f_head
            let w_src = tape.matmul(head.w, a_src)?;
            let w_dst = tape.matmul(head.w, a_dst)?;
            (tape.matmul(h2, w_src)?, tape.matmul(h2, w_dst)?)
        }
    };
    Ok((tape.reshape(src, &[batch, d])?, tape.reshape(dst, &[batch, d])?))
}

/// Per-edge weights `[batch, nnz]` in the order of `edges.pattern()`.
fn head_attention(tape: &mut Tape, src: Var, dst: Var, edges: &EdgeMatrix) -> Result<Var> {
    tape.edge_softmax(src, dst, edges.pattern(), GAT_SLOPE)
}

/// Attention weights `[batch, d, d]` of one head: row `u` is the softmax
/// over the neighbours of `u` of `leaky_relu(a · (W h_u ‖ W h_v))`.
pub fn attention_coefficients(tape: &mut Tape, h: Var, edges: &EdgeMatrix, head: HeadVars) -> Result<Var> {
    let dims = check_input(tape, h, edges)?;
    let h2 = tape.reshape(h, &[dims.0 * dims.1, dims.2])?;
    let (src, dst) = head_scores(tape, h2, None, head, dims)?;
    let alpha = head_attention(tape, src, dst, edges)?;
    tape.scatter_pattern(alpha, edges.pattern())
}

/// One multi-head layer: for every node, the heads' `elu(Σ_v α_uv W h_v)`
/// concatenated. Input `[batch, d, f_in]`, output `[batch, d, K·f_head]`.
pub fn gat_layer(tape: &mut Tape, h: Var, edges: &EdgeMatrix, heads: &[HeadVars]) -> Result<Var> {
    let dims = check_input(tape, h, edges)?;
    let (batch, d, f_in) = dims;
    if heads.is_empty() {
        return Err(TmmError::Config("a GAT layer needs at least one head".into()));
    }
    let h2 = tape.reshape(h, &[batch * d, f_in])?;
    let mut outs = Vec::with_capacity(heads.len());
    for &head in heads {
        let ws = tape.shape(head.w).to_vec();
        if ws[0] != f_in || tape.shape(head.a) != [2 * ws[1], 1] {
            return Err(TmmError::Dimension(format!(
                "head weights {ws:?}/{:?} for {f_in} input features",
                tape.shape(head.a)
            )));
        }
        let fh = ws[1];
        let out = if f_in < fh {
            // aggregate the narrow inputs first, then transform
            let (src, dst) = head_scores(tape, h2, None, head, dims)?;
            let alpha = head_attention(tape, src, dst, edges)?;
            let agg = tape.edge_aggregate(alpha, h, edges.pattern())?;
            let agg = tape.reshape(agg, &[batch * d, f_in])?;
            let out = tape.matmul(agg, head.w)?;
            tape.reshape(out, &[batch, d, fh])?
        } else {
            let wh = tape.matmul(h2, head.w)?;
            let (src, dst) = head_scores(tape, h2, Some(wh), head, dims)?;
            let alpha = head_attention(tape, src, dst, edges)?;
            let wh3 = tape.reshape(wh, &[batch, d, fh])?;
            tape.edge_aggregate(alpha, wh3, edges.pattern())?
        };
        outs.push(tape.activation(out, Activation::Elu)?);
    }
    tape.concat(&outs, 2)
}

/// Mean over nodes: `[batch, d, f] -> [batch, f]`.
pub fn readout(tape: &mut Tape, h: Var) -> Result<Var> {
    tape.mean_axis(h, 1)
}

/// Stacks the layers on one edge matrix and concatenates each level's
/// pooled embedding. `x` is `[batch, d, f_0]`.
pub fn encode_batch(tape: &mut Tape, x: Var, edges: &EdgeMatrix, layers: &[Vec<HeadVars>]) -> Result<Var> {
    if layers.len() != 3 {
        return Err(TmmError::Config(format!(
            "the encoder stacks exactly 3 levels, got {}",
            layers.len()
        )));
    }
    let mut h = x;
    let mut pooled = Vec::with_capacity(layers.len());
    for heads in layers {
        h = gat_layer(tape, h, edges, heads)?;
        pooled.push(readout(tape, h)?);
    }
    tape.concat(&pooled, 1)
}

/// Encodes a single sample graph with concrete parameters.
pub fn multilevel_encode(graph: &SampleGraph, cfg: &EncoderConfig, params: &[GatLayerParams]) -> Result<ViewRepresentation> {
    cfg.validate()?;
    if params.len() != cfg.levels {
        return Err(TmmError::Config(format!(
            "{} layer parameter sets for {} levels",
            params.len(),
            cfg.levels
        )));
    }
    let mut expected_in = graph.node_features.cols();
    for p in params {
        let (f_in, f_head) = p.validate()?;
        if f_in != expected_in || p.heads.len() != cfg.heads || f_head != cfg.head_dim {
            return Err(TmmError::Dimension(format!(
                "layer expects {f_in} inputs × {} heads of {f_head}, configuration gives {expected_in} × {} of {}",
                p.heads.len(),
                cfg.heads,
                cfg.head_dim
            )));
        }
        expected_in = cfg.layer_width();
    }
    let mut tape = Tape::new();
    let d = graph.edges.order();
    let x = tape.constant(graph.node_features.clone().reshaped(&[1, d, graph.node_features.cols()])?);
    let mut next = 0;
    let layers: Vec<Vec<HeadVars>> = params.iter().map(|p| p.record(&mut tape, &mut next)).collect();
    let f = encode_batch(&mut tape, x, &graph.edges, &layers)?;
    let features = tape.value(f).clone();
    let width = features.len();
    Ok(ViewRepresentation {
        features: features.reshaped(&[width])?,
        view: graph.view,
        modality: graph.modality.clone(),
    })
}
