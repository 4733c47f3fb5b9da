//! Near-duplicate detection over 64-bit perceptual hashes.
//!
//! Candidate pairs come from multi-index hashing: the hash is cut into
//! `radius + 1` bands, and two hashes within Hamming `radius` must agree
//! exactly on at least one band.

use std::collections::HashMap;

use super::manifest::{ManifestRecord, RecordStatus};
use crate::error::{Error, Result};
use crate::imaging::PerceptualHash;

/// Width of the review band above the duplicate threshold.
pub const REVIEW_MARGIN: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupConfig {
    /// Pairs at Hamming distance `<=` this are duplicates.
    pub hamming_threshold: u32,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self { hamming_threshold: 5 }
    }
}

fn bands(radius: u32) -> Vec<(u32, u32)> {
    let count = (radius + 1).min(64);
    (0..count)
        .map(|b| {
            let lo = b * 64 / count;
            let hi = (b + 1) * 64 / count;
            (lo, hi - lo)
        })
        .collect()
}

fn band_value(h: u64, (lo, width): (u32, u32)) -> u64 {
    if width >= 64 {
        h
    } else {
        (h >> lo) & ((1u64 << width) - 1)
    }
}

/// Every pair `(i, j, d)` with `i < j` and `d = hamming(i, j) <= radius`,
/// sorted.
pub fn candidate_pairs(hashes: &[PerceptualHash], radius: u32) -> Vec<(usize, usize, u32)> {
    let radius = radius.min(64);
    let mut pairs = Vec::new();
    let layout = bands(radius);
    for (bi, band) in layout.iter().enumerate() {
        let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, h) in hashes.iter().enumerate() {
            buckets.entry(band_value(h.bits(), *band)).or_default().push(i);
        }
        for members in buckets.values() {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    // Report each pair from the first band they agree on only.
                    let first = layout
                        .iter()
                        .position(|b| band_value(hashes[i].bits(), *b) == band_value(hashes[j].bits(), *b));
                    if first != Some(bi) {
                        continue;
                    }
                    let d = hashes[i].distance(hashes[j]);
                    if d <= radius {
                        pairs.push((i, j, d));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Brute-force reference for [`candidate_pairs`].
pub fn all_pairs_within(hashes: &[PerceptualHash], radius: u32) -> Vec<(usize, usize, u32)> {
    let mut pairs = Vec::new();
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            let d = hashes[i].distance(hashes[j]);
            if d <= radius {
                pairs.push((i, j, d));
            }
        }
    }
    pairs
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Sorts by id, then assigns statuses. Each duplicate cluster keeps the
/// record with the smallest id; the others point at it. A kept singleton
/// within the review band of an earlier cluster is marked `review`.
/// Excluded records pass through untouched.
pub fn dedup(mut records: Vec<ManifestRecord>, cfg: &DedupConfig) -> Result<Vec<ManifestRecord>> {
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Contract(format!("duplicate record id {}", w[0].id)));
    }
    let live: Vec<usize> = (0..records.len())
        .filter(|&i| !matches!(records[i].status, RecordStatus::Excluded(_)))
        .collect();
    let hashes: Vec<PerceptualHash> = live.iter().map(|&i| records[i].phash).collect();
    let t = cfg.hamming_threshold;
    let pairs = candidate_pairs(&hashes, t + REVIEW_MARGIN);

    let mut parent: Vec<usize> = (0..live.len()).collect();
    for &(i, j, d) in &pairs {
        if d <= t {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            // Smaller index is the smaller id, so roots stay the earliest member.
            let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
            parent[hi] = lo;
        }
    }
    let roots: Vec<usize> = (0..live.len()).map(|i| find(&mut parent, i)).collect();
    let mut size = vec![0usize; live.len()];
    for &r in &roots {
        size[r] += 1;
    }
    let mut review = vec![false; live.len()];
    for &(i, j, d) in &pairs {
        if d > t && roots[i] != roots[j] {
            let later = roots[i].max(roots[j]);
            if size[later] == 1 {
                review[later] = true;
            }
        }
    }
    for (k, &rec) in live.iter().enumerate() {
        let status = if roots[k] != k {
            RecordStatus::DuplicateOf(records[live[roots[k]]].id.clone())
        } else if review[k] {
            RecordStatus::Review
        } else {
            RecordStatus::Kept
        };
        records[rec].status = status;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, h: u64) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            path: format!("{id}.ppm"),
            width: 8,
            height: 8,
            channels: 1,
            source_tag: String::new(),
            phash: PerceptualHash(h),
            status: RecordStatus::Kept,
        }
    }

    #[test]
    fn bands_cover_all_bits() {
        for r in [0, 1, 5, 8, 20, 63] {
            let b = bands(r);
            assert_eq!(b.len() as u32, r + 1);
            assert_eq!(b.iter().map(|x| x.1).sum::<u32>(), 64);
        }
    }

    #[test]
    fn clusters_and_review() {
        let recs = vec![
            rec("c", 0b111),      // distance 3 from a
            rec("a", 0),
            rec("b", 0b1111_1100_0000), // distance 6 from a: review
            rec("d", u64::MAX),
        ];
        let out = dedup(recs, &DedupConfig::default()).unwrap();
        let st: Vec<_> = out.iter().map(|r| (r.id.as_str(), r.status.to_string())).collect();
        assert_eq!(
            st,
            [("a", "kept".into()), ("b", "review".into()), ("c", "duplicate_of a".into()), ("d", "kept".into())]
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(dedup(vec![rec("a", 0), rec("a", 1)], &DedupConfig::default()).is_err());
    }
}
