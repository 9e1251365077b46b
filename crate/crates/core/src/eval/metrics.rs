//! Classification metrics for dichotomised and individual mRS prediction.

use crate::error::{Error, Result};

/// Good outcome (mRS 0–2) maps to 0, bad (3–6) to 1.
pub fn dichotomize(mrs: usize) -> Result<usize> {
    match mrs {
        0..=2 => Ok(0),
        3..=6 => Ok(1),
        _ => Err(Error::param(format!("mRS {mrs} outside 0..=6"))),
    }
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::param(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::param("no predictions to score"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// F1 of `positive`; 0 when precision + recall is 0.
pub fn f1(pred: &[usize], truth: &[usize], positive: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    // 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn); zero whenever tp is
    Ok(if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fne) as f64
    })
}

/// Recall of class `k`; `None` if `k` never occurs in `truth`.
pub fn recall(pred: &[usize], truth: &[usize], k: usize) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    let support = truth.iter().filter(|&&t| t == k).count();
    let hits = pred.iter().zip(truth).filter(|&(&p, &t)| t == k && p == k).count();
    Ok((support > 0).then(|| hits as f64 / support as f64))
}

/// Rank (Mann–Whitney) AUC: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
///
/// Tied scores share their average rank, so the U statistic is an exact
/// half-integer and the result equals explicit pair counting.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::param(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("NaN score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes in the ground truth".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, kept integral
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 average to (i+j+2)/2
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        twice_rank_sum += pos_in_group * (i + j + 2) as u64;
        i = j + 1;
    }
    let np = n_pos as u64;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// Fraction of predictions within one class of the truth.
pub fn one_nearest_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(&p, &t)| p.abs_diff(t) <= 1).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `m[truth][pred]` counts.
pub fn confusion(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::param(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::param(format!("class {} outside 0..{num_classes}", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}
