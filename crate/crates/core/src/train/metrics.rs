use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, TmmError};

/// Accuracy, F1 and AUC of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub f1: f64,
    pub auc: f64,
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

fn f1_of(pred: &[usize], truth: &[usize], class: usize) -> f64 {
    let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == class && t == class).count() as f64;
    let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == class && t != class).count() as f64;
    let fn_ = pred.iter().zip(truth).filter(|&(&p, &t)| p != class && t == class).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// F1 of class 1 for binary tasks; support-weighted over classes otherwise.
pub fn f1_score(pred: &[usize], truth: &[usize], classes: usize) -> f64 {
    if classes <= 2 {
        return f1_of(pred, truth, 1);
    }
    let n = truth.len() as f64;
    (0..classes)
        .map(|c| {
            let support = truth.iter().filter(|&&t| t == c).count() as f64;
            support / n * f1_of(pred, truth, c)
        })
        .sum()
}

/// Mann–Whitney estimate of P(score of a positive > score of a negative),
/// ties counted as one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TmmError::Degenerate("AUC needs both classes in the evaluation set".into()));
    }
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| positive[order[k]]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Binary AUC on class-1 probabilities, or the one-vs-rest mean for
/// more classes. `probs` is row-major `[n, classes]`.
pub fn multiclass_auc(probs: &[f64], truth: &[usize], classes: usize) -> Result<f64> {
    let n = truth.len();
    let col = |c: usize| (0..n).map(|i| probs[i * classes + c]).collect::<Vec<_>>();
    if classes == 2 {
        return auc(&col(1), &truth.iter().map(|&t| t == 1).collect::<Vec<_>>());
    }
    let mut total = 0.0;
    for c in 0..classes {
        total += auc(&col(c), &truth.iter().map(|&t| t == c).collect::<Vec<_>>())?;
    }
    Ok(total / classes as f64)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sided Welch t-test p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(TmmError::Degenerate(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (va, vb) = (sa * sa / a.len() as f64, sb * sb / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(1.0);
        }
        return Err(TmmError::Degenerate("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| TmmError::Numeric(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}
