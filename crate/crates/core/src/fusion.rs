//! Attention-based fusion of views and modalities.
//!
//! Every sample contributes one vector per view or modality, so each
//! attention call works on length-1 sequences: the softmax over a single
//! key is 1 and the output is the source's value projection. The query and
//! key projections are still recorded (and receive zero gradient) so the
//! layer stays a faithful scaled dot-product attention.

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TmmError};

/// `W^Q`, `W^K`, `W^V` of one attention site, each `f_in × f_att`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Linear layer `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

pub fn linear(tape: &mut Tape, x: Var, layer: LinearVars) -> Result<Var> {
    let y = tape.matmul(x, layer.w)?;
    tape.add_bias(y, layer.b)
}

/// `softmax(Q Kᵀ / √f) V` over batched sequences `[B, q, f]`, `[B, r, f]`,
/// `[B, r, g]`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 || qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1] {
        return Err(TmmError::Dimension(format!(
            "attention over query {qs:?}, key {ks:?}, value {vs:?}"
        )));
    }
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.affine(scores, 1.0 / (qs[2] as f64).sqrt(), 0.0)?;
    let weights = tape.softmax(scores, 2)?;
    tape.batch_matmul(weights, v, false)
}

/// Attention of per-sample `query` rows `[n, f_q]` on per-sample `source`
/// rows `[n, f_s]`; each sample is its own length-1 sequence.
pub fn attend(tape: &mut Tape, query: Var, source: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let n = tape.shape(query)[0];
    if tape.shape(source)[0] != n {
        return Err(TmmError::Dimension(format!(
            "query has {n} samples, source {}",
            tape.shape(source)[0]
        )));
    }
    let project = |tape: &mut Tape, x: Var, w: Var| -> Result<Var> {
        let p = tape.matmul(x, w)?;
        let f = tape.shape(p)[1];
        tape.reshape(p, &[n, 1, f])
    };
    let q = project(tape, query, wq)?;
    let k = project(tape, source, wk)?;
    let v = project(tape, source, wv)?;
    let out = scaled_dot_attention(tape, q, k, v)?;
    let g = tape.shape(out)[2];
    tape.reshape(out, &[n, g])
}

/// Self-attention of a single representation, used when only one view or
/// one modality is available.
pub fn self_attend(tape: &mut Tape, x: Var, proj: AttentionVars) -> Result<Var> {
    attend(tape, x, x, proj.q, proj.k, proj.v)
}

/// `Z_t = Att(F_t W^Q_t, F_r W^K_r, F_r W^V_r)`, `Z_r` with the roles
/// swapped; returns `Z_t ‖ Z_r`.
pub fn cross_view_fuse(tape: &mut Tape, ft: Var, fr: Var, proj_t: AttentionVars, proj_r: AttentionVars) -> Result<Var> {
    let zt = attend(tape, ft, fr, proj_t.q, proj_r.k, proj_r.v)?;
    let zr = attend(tape, fr, ft, proj_r.q, proj_t.k, proj_t.v)?;
    tape.concat(&[zt, zr], 1)
}

/// Auxiliary per-modality head. Returns the logits and, with labels, the
/// cross-entropy summed over samples.
pub fn modality_classifier(tape: &mut Tape, z: Var, head: LinearVars, labels: Option<&[usize]>) -> Result<(Var, Option<Var>)> {
    let logits = linear(tape, z, head)?;
    let loss = match labels {
        Some(y) => {
            let ce = tape.cross_entropy(logits, y)?;
            Some(tape.affine(ce, y.len() as f64, 0.0)?)
        }
        None => None,
    };
    Ok((logits, loss))
}

/// `U^m = ‖_{j≠m} Att(H^m W^Q_{mj}, H^j W^K_{mj}, H^j W^V_{mj})`,
/// `U = ‖_m U^m`. `proj[m * M + j]` holds the triple of pair `(m, j)`;
/// diagonal entries are ignored.
pub fn cross_modal_fuse(tape: &mut Tape, h: &[Var], proj: &[AttentionVars]) -> Result<Var> {
    let m_count = h.len();
    if m_count < 2 {
        return Err(TmmError::Config(format!(
            "cross-modal fusion needs at least 2 modalities, got {m_count}"
        )));
    }
    if proj.len() != m_count * m_count {
        return Err(TmmError::Dimension(format!(
            "{} projection triples for {m_count} modalities",
            proj.len()
        )));
    }
    let mut blocks = Vec::with_capacity(m_count * (m_count - 1));
    for m in 0..m_count {
        for j in (0..m_count).filter(|&j| j != m) {
            let p = proj[m * m_count + j];
            blocks.push(attend(tape, h[m], h[j], p.q, p.k, p.v)?);
        }
    }
    tape.concat(&blocks, 1)
}

pub fn final_classifier(tape: &mut Tape, u: Var, head: LinearVars) -> Result<Var> {
    let fu = tape.shape(u)[1];
    if tape.shape(head.w)[0] != fu {
        return Err(TmmError::Dimension(format!(
            "final head expects {} inputs, fused width is {fu}",
            tape.shape(head.w)[0]
        )));
    }
    linear(tape, u, head)
}
