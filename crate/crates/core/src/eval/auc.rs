use crate::{Error, Result};

/// Rank-based ROC AUC: the fraction of positive/negative pairs where the
/// positive scores higher, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numerical(format!("score {s} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&l| l).count() as u128;
    let negatives = labels.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "auc",
            reason: "needs at least one positive and one negative label".into(),
        });
    }
    // twice the Mann-Whitney U, accumulated exactly over tie groups
    let (mut u2, mut neg_below) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pg, mut ng) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pg += 1;
            } else {
                ng += 1;
            }
            j += 1;
        }
        u2 += pg * (2 * neg_below + ng);
        neg_below += ng;
        i = j;
    }
    Ok(u2 as f64 / (2 * positives * negatives) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&[0.8, 0.6, 0.7, 0.2], &labels).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.4; 4], &labels).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }
}
