//! Frame-level ranking metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("scores must be finite".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// `sum_n (R_n - R_{n-1}) P_n` over the descending-score sweep, where each
/// group of equal scores is a single threshold.
///
/// The sum is accumulated as an exact fraction and divided once, so the
/// result is correctly rounded; inputs whose fraction outgrows 53-bit
/// integers fall back to floating-point accumulation.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Contract("average precision needs a positive label".into()));
    }
    let idx = order_desc(scores);
    // (new positives, positives so far, items so far) per threshold group.
    let mut groups = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let before = tp;
        while i < idx.len() && scores[idx[i]] == s {
            tp += usize::from(labels[idx[i]]);
            seen += 1;
            i += 1;
        }
        if tp > before {
            groups.push((tp - before, tp, seen));
        }
    }
    if let Some(exact) = exact_ap(&groups, pos) {
        return Ok(exact);
    }
    Ok(groups
        .iter()
        .map(|&(new, tp, seen)| (new as f64 / pos as f64) * (tp as f64 / seen as f64))
        .sum())
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `sum new * tp / (seen * pos)` as a reduced fraction, converted with one
/// rounding when numerator and denominator are exactly representable.
fn exact_ap(groups: &[(usize, usize, usize)], pos: usize) -> Option<f64> {
    const LIMIT: u128 = 1 << 53;
    let (mut num, mut den) = (0u128, 1u128);
    for &(new, tp, seen) in groups {
        let (n, d) = ((new * tp) as u128, seen as u128);
        let g = gcd(den, d);
        let lcm = (den / g).checked_mul(d)?;
        num = num.checked_mul(lcm / den)?.checked_add(n.checked_mul(lcm / d)?)?;
        den = lcm;
        let r = gcd(num, den);
        (num, den) = (num / r, den / r);
    }
    den = den.checked_mul(pos as u128)?;
    let r = gcd(num, den);
    (num, den) = (num / r, den / r);
    (num < LIMIT && den < LIMIT).then(|| num as f64 / den as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half (the Mann-Whitney statistic).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract("ROC-AUC needs both positive and negative labels".into()));
    }
    let mut idx = order_desc(scores);
    idx.reverse();
    // Sum of 1-based ascending ranks of the positives, ties sharing the mean
    // rank. Ranks are multiples of 1/2, so the sum is exact.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let start = i;
        let mut group_pos = 0usize;
        while i < idx.len() && scores[idx[i]] == s {
            group_pos += usize::from(labels[idx[i]]);
            i += 1;
        }
        let mean_rank = (start + 1 + i) as f64 / 2.0;
        rank_sum += mean_rank * group_pos as f64;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}
