//! Deterministic top-k: largest score first, ties broken by ascending index.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top `k` of `(index, score)` pairs, sorted by descending score, then
/// ascending index.
pub fn top_k_pairs(mut pairs: Vec<(usize, f64)>, k: usize) -> Result<Vec<usize>> {
    if k > pairs.len() {
        return Err(Error::Contract(format!(
            "cannot select {k} tokens from {} candidates",
            pairs.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k - 1, rank);
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(rank);
    Ok(pairs.into_iter().map(|(i, _)| i).collect())
}

/// Indices of the `k` largest `scores[i]` for `i` in `candidates`.
pub fn top_k_by_score(scores: &[f64], candidates: &[usize], k: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = candidates.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::Contract(format!(
            "candidate {bad} out of range for {} scores",
            scores.len()
        )));
    }
    top_k_pairs(candidates.iter().map(|&i| (i, scores[i])).collect(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_sort() {
        assert_eq!(top_k_by_score(&[3., 1., 2.], &[0, 1, 2], 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn ties_prefer_small_indices() {
        assert_eq!(top_k_by_score(&[5.; 6], &[4, 2, 5, 0], 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn oversized_k_is_rejected() {
        assert!(matches!(top_k_by_score(&[1., 2.], &[0, 1], 3), Err(Error::Contract(_))));
    }

    fn oracle(scores: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = candidates.to_vec();
        // Full stable sort on descending score keeps ascending index among ties.
        all.sort();
        all.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        all.truncate(k);
        all
    }

    proptest! {
        #[test]
        fn matches_full_sort(raw in proptest::collection::vec(0u8..16, 1..1024), frac in 0.0f64..=1.0) {
            // A small score alphabet forces many ties.
            let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
            let candidates: Vec<usize> = (0..scores.len()).filter(|i| i % 3 != 1).collect();
            let k = (frac * candidates.len() as f64) as usize;
            prop_assert_eq!(top_k_by_score(&scores, &candidates, k).unwrap(), oracle(&scores, &candidates, k));
        }
    }
}
