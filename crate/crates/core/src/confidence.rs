//! True-false harmonized class probability (TFCP) and its estimators.
//!
//! The target blends the probability of the true class with the complement
//! of the strongest false class through a harmonic mean. Two small
//! perceptrons regress TCP and FCP from a modality representation; their
//! harmonic combination becomes the per-sample trust weight.

use std::io::Write;
use std::path::Path;

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Result, TmmError};
use crate::fusion::{linear, LinearVars};

/// Inputs to the harmonic form are kept inside `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-7;

fn check_simplex(probs: &[f64]) -> Result<()> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
        return Err(TmmError::Data(format!("{probs:?} is not a probability vector")));
    }
    Ok(())
}

fn check_label(probs: &[f64], label: usize) -> Result<()> {
    check_simplex(probs)?;
    if label >= probs.len() {
        return Err(TmmError::Data(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(())
}

/// Maximum class probability.
pub fn mcp(probs: &[f64]) -> Result<f64> {
    check_simplex(probs)?;
    Ok(probs.iter().copied().fold(0.0, f64::max))
}

/// Probability of the true class.
pub fn tcp(probs: &[f64], label: usize) -> Result<f64> {
    check_label(probs, label)?;
    Ok(probs[label])
}

/// Largest probability among the untrue classes.
pub fn fcp(probs: &[f64], label: usize) -> Result<f64> {
    check_label(probs, label)?;
    if probs.len() < 2 {
        return Err(TmmError::Data("false class probability needs at least 2 classes".into()));
    }
    Ok(probs
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != label)
        .map(|(_, &p)| p)
        .fold(0.0, f64::max))
}

/// `2 / (1/tcp + 1/(1 - fcp))` with both inputs clamped away from 0 and 1.
pub fn tfcp(tcp: f64, fcp: f64) -> f64 {
    let t = tcp.clamp(EPS, 1.0 - EPS);
    let f = fcp.clamp(EPS, 1.0 - EPS);
    2.0 / (1.0 / t + 1.0 / (1.0 - f))
}

/// Hidden elu layer followed by a sigmoid scalar output.
#[derive(Clone, Copy, Debug)]
pub struct PerceptronVars {
    pub hidden: LinearVars,
    pub out: LinearVars,
}

pub fn perceptron(tape: &mut Tape, z: Var, net: PerceptronVars) -> Result<Var> {
    let h = linear(tape, z, net.hidden)?;
    let h = tape.activation(h, Activation::Elu)?;
    let o = linear(tape, h, net.out)?;
    tape.activation(o, Activation::Sigmoid)
}

/// Shared classifier head plus the TCP and FCP regressors of one modality.
#[derive(Clone, Copy, Debug)]
pub struct ConfidenceNets {
    pub classifier: LinearVars,
    pub tcp: PerceptronVars,
    pub fcp: PerceptronVars,
}

/// Harmonic form on tape columns `[n, 1]`.
pub fn harmonic(tape: &mut Tape, tcp: Var, fcp: Var) -> Result<Var> {
    let t = tape.clamp(tcp, EPS, 1.0 - EPS)?;
    let f = tape.clamp(fcp, EPS, 1.0 - EPS)?;
    let not_f = tape.affine(f, -1.0, 1.0)?;
    let a = tape.recip(t)?;
    let b = tape.recip(not_f)?;
    let s = tape.add(a, b)?;
    let r = tape.recip(s)?;
    tape.affine(r, 2.0, 0.0)
}

#[derive(Clone, Copy, Debug)]
pub struct ConfidenceEstimate {
    pub tcp: Var,
    pub fcp: Var,
    pub tfcp: Var,
}

pub fn estimate_confidence(tape: &mut Tape, z: Var, nets: &ConfidenceNets) -> Result<ConfidenceEstimate> {
    let tcp = perceptron(tape, z, nets.tcp)?;
    let fcp = perceptron(tape, z, nets.fcp)?;
    let tfcp = harmonic(tape, tcp, fcp)?;
    Ok(ConfidenceEstimate { tcp, fcp, tfcp })
}

/// TCP, FCP and TFCP targets `[n, 1]` from the shared classifier's logits.
pub fn confidence_targets(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<ConfidenceEstimate> {
    let probs = tape.softmax(logits, 1)?;
    let tcp = tape.pick_label(probs, labels)?;
    let fcp = tape.max_excluding_label(probs, labels)?;
    let tfcp = harmonic(tape, tcp, fcp)?;
    Ok(ConfidenceEstimate { tcp, fcp, tfcp })
}

/// Mean squared gap between the target and estimate columns.
pub fn squared_gap(tape: &mut Tape, target: Var, estimate: Var) -> Result<Var> {
    let d = tape.sub(target, estimate)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// Regression of the estimated TFCP onto the classifier's TFCP target plus
/// the classifier's own cross-entropy. Also returns the estimate.
pub fn confidence_loss(tape: &mut Tape, z: Var, labels: &[usize], nets: &ConfidenceNets) -> Result<(Var, ConfidenceEstimate)> {
    let logits = linear(tape, z, nets.classifier)?;
    let target = confidence_targets(tape, logits, labels)?;
    let est = estimate_confidence(tape, z, nets)?;
    let gap = squared_gap(tape, target.tfcp, est.tfcp)?;
    let cls = tape.cross_entropy(logits, labels)?;
    Ok((tape.add(gap, cls)?, est))
}

/// Trust-weighted representation: each sample's row scaled by its weight.
pub fn apply_confidence(tape: &mut Tape, weight: Var, z: Var) -> Result<Var> {
    tape.scale_rows(z, weight)
}

/// One exported confidence estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceRecord {
    pub sample: String,
    pub modality: String,
    pub tcp: f64,
    pub fcp: f64,
    pub tfcp: f64,
}

pub fn write_confidence_csv(path: &Path, records: &[ConfidenceRecord]) -> Result<()> {
    let io = |e: std::io::Error| TmmError::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "sample_id,modality,tcp_hat,fcp_hat,tfcp_hat").map_err(io)?;
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.sample, r.modality, r.tcp, r.fcp, r.tfcp).map_err(io)?;
    }
    out.flush().map_err(io)
}
