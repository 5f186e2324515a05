//! Per-impression ranking metrics with binary labels.
//!
//! Ranked lists order candidates by descending score; equal scores keep their
//! input order.

/// Candidate indices from best to worst.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// ROC AUC: the probability that a random positive outscores a random
/// negative, ties counting one half. `None` unless both classes are present.
///
/// Computed from mid-ranks (Mann-Whitney U), so tied scores share the
/// average rank of their block.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// NDCG@k with gains equal to the labels and `1 / log2(rank + 1)` discounts.
/// Zero when there are no positives.
pub fn ndcg_at_k(scores: &[f64], labels: &[u8], k: usize) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return 0.0;
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranking(scores)
        .into_iter()
        .take(k)
        .enumerate()
        .filter(|&(_, idx)| labels[idx] == 1)
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=n_pos.min(k)).map(discount).sum();
    dcg / ideal
}

/// Mean of `1 / rank` over the positives. `None` without positives.
pub fn mrr(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return None;
    }
    let rr: f64 = ranking(scores)
        .into_iter()
        .enumerate()
        .filter(|&(_, idx)| labels[idx] == 1)
        .map(|(r, _)| 1.0 / (r + 1) as f64)
        .sum();
    Some(rr / n_pos as f64)
}
