use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smae_core::curation::{
    all_pairs_within, candidate_pairs, dedup, slice_boxes, DedupConfig, ManifestRecord, RecordStatus,
};
use smae_core::imaging::{hamming, phash64, Image, PerceptualHash};

fn record(id: String, phash: PerceptualHash) -> ManifestRecord {
    ManifestRecord {
        path: format!("{id}.pgm"),
        id,
        width: 32,
        height: 32,
        channels: 1,
        source_tag: "planted".into(),
        phash,
        status: RecordStatus::Kept,
    }
}

fn noise_image(rng: &mut ChaCha8Rng) -> Image {
    let pixels = (0..32 * 32).map(|_| rng.random_range(40..=215u8)).collect();
    Image::new(32, 32, 1, pixels).unwrap()
}

/// Brightness shift plus a little noise, retried until the hash moves by at most 4.
fn near_duplicate(src: &Image, rng: &mut ChaCha8Rng) -> Image {
    loop {
        let shift = rng.random_range(-25i32..=25);
        let pixels = src
            .pixels()
            .iter()
            .map(|&p| (p as i32 + shift + rng.random_range(-2..=2)).clamp(0, 255) as u8)
            .collect();
        let img = Image::new(32, 32, 1, pixels).unwrap();
        if hamming(phash64(src), phash64(&img)) <= 4 {
            return img;
        }
    }
}

#[test]
fn planted_near_duplicates_are_all_found() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let uniques: Vec<Image> = (0..1000).map(|_| noise_image(&mut rng)).collect();
    let mut records: Vec<ManifestRecord> =
        uniques.iter().enumerate().map(|(i, img)| record(format!("u{i:04}"), phash64(img))).collect();
    let sources: Vec<usize> = (0..200).map(|k| k * 5).collect();
    for (k, &s) in sources.iter().enumerate() {
        let img = near_duplicate(&uniques[s], &mut rng);
        records.push(record(format!("v{k:04}"), phash64(&img)));
    }
    records.shuffle(&mut rng);
    let out = dedup(records, &DedupConfig::default()).unwrap();
    for r in &out {
        match (&r.id[..1], &r.status) {
            ("u", RecordStatus::Kept | RecordStatus::Review) => {}
            ("v", RecordStatus::DuplicateOf(of)) => {
                let k: usize = r.id[1..].parse().unwrap();
                assert_eq!(of, &format!("u{:04}", sources[k]));
            }
            _ => panic!("{} ended as {}", r.id, r.status),
        }
    }
}

fn clustered_hashes(n: usize, seed: u64) -> Vec<PerceptualHash> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<u64> = Vec::with_capacity(n);
    while out.len() < n {
        if out.is_empty() || rng.random_bool(0.4) {
            out.push(rng.random());
        } else {
            let base = out[rng.random_range(0..out.len())];
            let flips = rng.random_range(0..=12);
            let mut h = base;
            for _ in 0..flips {
                h ^= 1 << rng.random_range(0..64);
            }
            out.push(h);
        }
    }
    out.into_iter().map(PerceptualHash).collect()
}

#[test]
fn multi_index_matches_brute_force() {
    for (seed, radius) in [(1, 5), (2, 8), (3, 0), (4, 12)] {
        let h = clustered_hashes(2000, seed);
        let fast = candidate_pairs(&h, radius);
        assert!(!fast.is_empty());
        assert_eq!(fast, all_pairs_within(&h, radius), "radius {radius}");
    }
}

#[test]
fn exact_and_complement_pairs() {
    let recs = vec![
        record("a".into(), PerceptualHash(0x1234)),
        record("b".into(), PerceptualHash(0x1234)),
        record("c".into(), PerceptualHash(!0x1234)),
    ];
    let out = dedup(recs, &DedupConfig::default()).unwrap();
    assert_eq!(out[1].status, RecordStatus::DuplicateOf("a".into()));
    assert_eq!(out[2].status, RecordStatus::Kept);
}

/// Every duplicate points at a kept record, and the review band never
/// demotes a cluster representative.
fn check_status_invariants(out: &[ManifestRecord]) {
    for r in out {
        if let RecordStatus::DuplicateOf(of) = &r.status {
            let target = out.iter().find(|x| &x.id == of).unwrap();
            assert_eq!(target.status, RecordStatus::Kept, "{} -> {of}", r.id);
        }
    }
}

#[test]
fn crop_side_is_uniform() {
    let n = 10_000;
    let boxes = slice_boxes(2048, 2048, 99, 64, 1024, n).unwrap();
    let mut counts = vec![0usize; 1025];
    for b in &boxes {
        assert!(b.x + b.width <= 2048 && b.y + b.height <= 2048);
        counts[b.width] += 1;
    }
    // Kolmogorov-Smirnov against the discrete uniform law on [64, 1024].
    let support = (1024 - 64 + 1) as f64;
    let mut cum = 0usize;
    let mut d: f64 = 0.0;
    for (k, &c) in counts.iter().enumerate().skip(64) {
        cum += c;
        let emp = cum as f64 / n as f64;
        let law = (k - 64 + 1) as f64 / support;
        d = d.max((emp - law).abs());
    }
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

proptest! {
    #[test]
    fn slices_stay_inside_the_image(
        w in 1usize..3000,
        h in 1usize..3000,
        seed in any::<u64>(),
        min in 1usize..300,
        extra in 0usize..2000,
        count in 1usize..8,
    ) {
        let max = min + extra;
        match slice_boxes(w, h, seed, min, max, count) {
            None => prop_assert!(w.min(h).min(max) < min),
            Some(boxes) => {
                prop_assert_eq!(boxes.len(), count);
                for b in boxes {
                    prop_assert_eq!(b.width, b.height);
                    prop_assert!(b.width >= min && b.width <= max.min(w).min(h));
                    prop_assert!(b.x + b.width <= w && b.y + b.height <= h);
                }
            }
        }
    }

    #[test]
    fn dedup_ignores_input_order(seed in any::<u64>(), n in 2usize..120) {
        let hashes = clustered_hashes(n, seed);
        let recs: Vec<ManifestRecord> =
            hashes.iter().enumerate().map(|(i, &h)| record(format!("r{i:03}"), h)).collect();
        let expected = dedup(recs.clone(), &DedupConfig::default()).unwrap();
        check_status_invariants(&expected);
        let mut shuffled = recs;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(dedup(shuffled, &DedupConfig::default()).unwrap(), expected);
    }
}
