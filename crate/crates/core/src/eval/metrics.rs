use crate::error::{Error, Result};

fn check_binary(scores: &[f64], labels: &[f64], name: &'static str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: name,
            left: [scores.len(), 1],
            right: [labels.len(), 1],
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Domain(format!("{name} label {bad} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(name));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve: the probability that a random positive is
/// scored above a random negative, ties counting one half.
///
/// Computed from average ranks (Mann–Whitney U) in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels, "auc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: `Σ (R_k - R_{k-1}) P_k` over decreasing score
/// thresholds, tied scores forming one threshold.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels, "average_precision")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            seen += 1;
            if labels[k] == 1.0 {
                tp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape {
            op: "mse",
            left: [preds.len(), 1],
            right: [targets.len(), 1],
        });
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(preds: &[f64], targets: &[f64]) -> Result<f64> {
    let n = targets.len() as f64;
    let res = mse(preds, targets)? * n;
    let mean = targets.iter().sum::<f64>() / n;
    let tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if tot == 0.0 {
        return Err(Error::UndefinedMetric("r2"));
    }
    Ok(1.0 - res / tot)
}

/// Cosine distance and Pearson correlation between two vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "cosine_distance",
            left: [a.len(), 1],
            right: [b.len(), 1],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine_distance"));
    }
    // sqrt(x * x) == |x| exactly, so identical vectors give distance 0
    Ok((1.0 - dot / (na * nb).sqrt()).max(0.0))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            op: "pearson",
            left: [a.len(), 1],
            right: [b.len(), 1],
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("pearson"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
