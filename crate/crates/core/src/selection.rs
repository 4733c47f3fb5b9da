//! HOG-guided partial reconstruction and progressive semantic token selection.
//!
//! Per sample and epoch `t` the planner:
//!
//! 1. seeds the encode set with the `⌊s·N⌋` highest-HOG patches (`S^I`);
//! 2. measures every remaining patch (`S^U`) against `S^I` on the patch
//!    embeddings and turns the distances into a stage-dependent score
//!    (nearest first, then farthest first, then random, for stage
//!    `ζ = ⌈N_g·t/T⌉`);
//! 3. adds the top `⌊N·(1−m−s)⌋` of `S^U` (`S*`) to form the encode set
//!    `S^K = S^I ∪ S*`;
//! 4. picks the `⌊r·N⌋` highest-HOG patches outside `S^K` as reconstruction
//!    targets.
//!
//! Every step is deterministic given the selection key.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hog::SemanticScores;
use crate::keyed;
use crate::topk::{top_k_by_score, top_k_pairs};

/// Slack for floors of ratio products that are integers in exact arithmetic.
const FLOOR_SLACK: f64 = 1e-9;

/// `⌊ratio·n⌋`, robust to products like `0.15·140 = 20.999…`.
pub fn floor_count(ratio: f64, n: usize) -> usize {
    let v = ratio * n as f64;
    if v <= 0.0 {
        0
    } else {
        ((v + FLOOR_SLACK).floor() as usize).min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPattern {
    NearFarRandom,
    FarNearRandom,
}

impl FromStr for SelectionPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near_far_random" => Ok(Self::NearFarRandom),
            "far_near_random" => Ok(Self::FarNearRandom),
            _ => Err(Error::Config(format!(
                "unknown pattern {s:?} (near_far_random|far_near_random)"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NearFarRandom => "near_far_random",
            Self::FarNearRandom => "far_near_random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMeasure {
    Cosine,
    Euclidean,
    Manhattan,
}

impl FromStr for DistanceMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            "manhattan" => Ok(Self::Manhattan),
            _ => Err(Error::Config(format!(
                "unknown measure {s:?} (cosine|euclidean|manhattan)"
            ))),
        }
    }
}

impl std::fmt::Display for DistanceMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
            Self::Manhattan => "manhattan",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Mask ratio `m`.
    pub mask_ratio: f64,
    /// Reconstruction ratio `r`, at most `m`.
    pub recon_ratio: f64,
    /// Initial HOG-seeded ratio `s`, at most `(1 − m)/2`.
    pub init_ratio: f64,
    /// Number of curriculum stages `N_g`.
    pub stages: usize,
    /// Total training epochs `T`.
    pub total_epochs: usize,
    pub pattern: SelectionPattern,
    pub measure: DistanceMeasure,
    /// When false the encode set is `⌊(1−m)·N⌋` uniformly random tokens.
    pub psts: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self::new(0.85, 0.25, 50)
    }
}

impl SelectionConfig {
    /// Config with `s = (1 − m)/2`, three stages, near-far-random cosine.
    pub fn new(mask_ratio: f64, recon_ratio: f64, total_epochs: usize) -> Self {
        Self {
            mask_ratio,
            recon_ratio,
            init_ratio: (1.0 - mask_ratio) / 2.0,
            stages: 3,
            total_epochs,
            pattern: SelectionPattern::NearFarRandom,
            measure: DistanceMeasure::Cosine,
            psts: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = self.mask_ratio;
        if !(0.0..=1.0).contains(&m) {
            return bad(format!("mask ratio m={m} outside [0, 1]"));
        }
        if !(0.0..=m).contains(&self.recon_ratio) {
            return bad(format!(
                "reconstruction ratio r={} outside [0, m={m}]",
                self.recon_ratio
            ));
        }
        if self.init_ratio < 0.0 || self.init_ratio > (1.0 - m) / 2.0 + FLOOR_SLACK {
            return bad(format!(
                "init ratio s={} outside [0, (1-m)/2={}]",
                self.init_ratio,
                (1.0 - m) / 2.0
            ));
        }
        if self.stages < 1 {
            return bad("stage count N_g must be at least 1".into());
        }
        if self.total_epochs < self.stages {
            return bad(format!(
                "total epochs T={} must be at least N_g={}",
                self.total_epochs, self.stages
            ));
        }
        Ok(())
    }

    /// `|S^I| = ⌊s·N⌋`
    pub fn init_count(&self, n: usize) -> usize {
        floor_count(self.init_ratio, n)
    }

    /// `|S*| = ⌊N·(1−m−s)⌋`
    pub fn psts_count(&self, n: usize) -> usize {
        floor_count(1.0 - self.mask_ratio - self.init_ratio, n)
    }

    /// `|S^K|`
    pub fn encode_count(&self, n: usize) -> usize {
        if self.psts {
            self.init_count(n) + self.psts_count(n)
        } else {
            floor_count(1.0 - self.mask_ratio, n)
        }
    }

    /// `|token_R| = ⌊r·N⌋`
    pub fn recon_count(&self, n: usize) -> usize {
        floor_count(self.recon_ratio, n)
    }

    /// `ζ = ⌈N_g·t/T⌉`
    pub fn stage(&self, epoch: usize) -> usize {
        (self.stages * epoch).div_ceil(self.total_epochs)
    }
}

/// Pairwise distances, `rows = |S^U|`, `cols = |S^I|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    zero_norm_rows: usize,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rows (from either side) that had zero norm under the cosine measure.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }
}

/// Distances between `unselected` and `init` embedding rows (row-major, width `d`).
///
/// Cosine is `1 − u·v/(‖u‖‖v‖)`; a zero-norm row is treated as orthogonal to
/// everything (distance 1).
pub fn distance_matrix(
    unselected: &[f64],
    init: &[f64],
    d: usize,
    measure: DistanceMeasure,
) -> Result<DistanceMatrix> {
    if d == 0 || unselected.len() % d != 0 || init.len() % d != 0 {
        return Err(Error::Contract(format!(
            "embedding buffers of {} and {} values do not split into rows of width {d}",
            unselected.len(),
            init.len()
        )));
    }
    let (rows, cols) = (unselected.len() / d, init.len() / d);
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut zero_norm_rows = 0;
    let values = match measure {
        DistanceMeasure::Cosine => {
            let un: Vec<f64> = unselected.chunks(d).map(norm).collect();
            let inorm: Vec<f64> = init.chunks(d).map(norm).collect();
            zero_norm_rows = un.iter().chain(&inorm).filter(|&&n| n == 0.0).count();
            let mut out = Vec::with_capacity(rows * cols);
            for (u, &nu) in unselected.chunks(d).zip(&un) {
                for (v, &nv) in init.chunks(d).zip(&inorm) {
                    if nu == 0.0 || nv == 0.0 {
                        out.push(1.0);
                    } else {
                        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                        // Rounding can push |cos| slightly past 1.
                        out.push((1.0 - dot / (nu * nv)).clamp(0.0, 2.0));
                    }
                }
            }
            out
        }
        DistanceMeasure::Euclidean | DistanceMeasure::Manhattan => {
            let mut out = Vec::with_capacity(rows * cols);
            for u in unselected.chunks(d) {
                for v in init.chunks(d) {
                    out.push(match measure {
                        DistanceMeasure::Euclidean => u
                            .iter()
                            .zip(v)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt(),
                        _ => u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum(),
                    });
                }
            }
            out
        }
    };
    if zero_norm_rows > 0 {
        log::warn!("{zero_norm_rows} zero-norm embedding rows treated as orthogonal");
    }
    Ok(DistanceMatrix {
        rows,
        cols,
        values,
        zero_norm_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageRule {
    Nearest,
    Farthest,
    Random,
}

pub fn stage_rule(stage: usize, pattern: SelectionPattern) -> StageRule {
    match (stage, pattern) {
        (1, SelectionPattern::NearFarRandom) | (2, SelectionPattern::FarNearRandom) => {
            StageRule::Nearest
        }
        (2, SelectionPattern::NearFarRandom) | (1, SelectionPattern::FarNearRandom) => {
            StageRule::Farthest
        }
        _ => StageRule::Random,
    }
}

/// Uniform `[0, 1)` score of one token under a selection key.
pub fn random_token_score(key: u64, token: usize) -> f64 {
    keyed::unit(keyed::derive(key, &[token as u64]))
}

/// Stage score for each `S^U` row; `tokens[i]` is the patch index of row `i`
/// and keys the random stage. Larger scores are selected first.
pub fn stage_scores(
    dist: &DistanceMatrix,
    tokens: &[usize],
    stage: usize,
    pattern: SelectionPattern,
    key: u64,
) -> Result<Vec<f64>> {
    if stage < 1 {
        return Err(Error::Contract("stage must be at least 1".into()));
    }
    if tokens.len() != dist.rows() {
        return Err(Error::Contract(format!(
            "{} token ids for a distance matrix with {} rows",
            tokens.len(),
            dist.rows()
        )));
    }
    let rule = if dist.cols() == 0 {
        // No reference set to measure against.
        StageRule::Random
    } else {
        stage_rule(stage, pattern)
    };
    Ok((0..dist.rows())
        .map(|i| match rule {
            StageRule::Nearest => -dist.row(i).iter().copied().fold(f64::INFINITY, f64::min),
            StageRule::Farthest => dist.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max),
            StageRule::Random => random_token_score(key, tokens[i]),
        })
        .collect())
}

/// `S^I`: the `⌊s·N⌋` highest-scoring tokens over all `N`.
pub fn init_token_set(scores: &SemanticScores, cfg: &SelectionConfig, n: usize) -> Result<Vec<usize>> {
    if scores.len() != n {
        return Err(Error::Contract(format!("{} scores for N={n} tokens", scores.len())));
    }
    let k = cfg.init_count(n);
    if k == 0 && cfg.init_ratio > 0.0 {
        log::warn!("init ratio s={} selects no tokens at N={n}", cfg.init_ratio);
    }
    let all: Vec<usize> = (0..n).collect();
    top_k_by_score(scores.as_slice(), &all, k)
}

/// `S*`: the top `⌊N·(1−m−s)⌋` of `unselected` by stage score.
pub fn select_psts(
    unselected: &[usize],
    stage_scores: &[f64],
    cfg: &SelectionConfig,
    n: usize,
) -> Result<Vec<usize>> {
    let k = cfg.psts_count(n);
    if unselected.len() < k || stage_scores.len() != unselected.len() {
        return Err(Error::Contract(format!(
            "need {k} tokens from a pool of {} ({} scores)",
            unselected.len(),
            stage_scores.len()
        )));
    }
    top_k_pairs(
        unselected.iter().copied().zip(stage_scores.iter().copied()).collect(),
        k,
    )
}

/// `token_R`: the `⌊r·N⌋` highest-scoring masked tokens.
pub fn select_reconstruction_targets(
    scores: &SemanticScores,
    masked: &[usize],
    cfg: &SelectionConfig,
    n: usize,
) -> Result<Vec<usize>> {
    let k = cfg.recon_count(n);
    if k > masked.len() {
        return Err(Error::Contract(format!(
            "reconstruction of {k} tokens (r={}·N={n}) exceeds the {} masked tokens left by m={}",
            cfg.recon_ratio,
            masked.len(),
            cfg.mask_ratio
        )));
    }
    top_k_by_score(scores.as_slice(), masked, k)
}

/// Outcome of token selection for one sample at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub epoch: usize,
    pub stage: usize,
    pub num_tokens: usize,
    /// `S^I`
    pub init_set: Vec<usize>,
    /// `S*`, in selection order.
    pub psts_set: Vec<usize>,
    /// Stage score of each `psts_set` entry.
    pub psts_scores: Vec<f64>,
    /// `S^K = S^I ∪ S*`
    pub encode_set: Vec<usize>,
    /// Complement of `encode_set`, ascending.
    pub masked_set: Vec<usize>,
    /// `token_R ⊆ masked_set`
    pub reconstruction_targets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    EncodeInit,
    EncodePsts,
    Reconstruct,
    Dropped,
}

impl TokenRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenRole::EncodeInit => "encode_init",
            TokenRole::EncodePsts => "encode_psts",
            TokenRole::Reconstruct => "reconstruct",
            TokenRole::Dropped => "dropped",
        }
    }
}

impl SelectionPlan {
    pub fn roles(&self) -> Vec<TokenRole> {
        let mut roles = vec![TokenRole::Dropped; self.num_tokens];
        for &i in &self.init_set {
            roles[i] = TokenRole::EncodeInit;
        }
        for &i in &self.psts_set {
            roles[i] = TokenRole::EncodePsts;
        }
        for &i in &self.reconstruction_targets {
            roles[i] = TokenRole::Reconstruct;
        }
        roles
    }

    /// Checks the structural invariants against `cfg`.
    pub fn check(&self, cfg: &SelectionConfig) -> Result<()> {
        let n = self.num_tokens;
        let fail = |what: &str| Err(Error::Contract(format!("selection plan violates {what}")));
        let mut seen = vec![0u8; n];
        for &i in &self.encode_set {
            seen[i] |= 1;
        }
        for &i in &self.masked_set {
            seen[i] |= 2;
        }
        if seen.iter().any(|&s| s != 1 && s != 2) {
            return fail("encode/masked partition");
        }
        if self.init_set.iter().any(|&i| seen[i] != 1) {
            return fail("S^I ⊆ S^K");
        }
        if self.reconstruction_targets.iter().any(|&i| seen[i] != 2) {
            return fail("token_R ⊆ masked set");
        }
        if cfg.psts && self.init_set.len() != cfg.init_count(n) {
            return fail("|S^I| = ⌊sN⌋");
        }
        if self.encode_set.len() != cfg.encode_count(n) {
            return fail("|S^K| cardinality");
        }
        if self.reconstruction_targets.len() != cfg.recon_count(n) {
            return fail("|token_R| = ⌊rN⌋");
        }
        if self.stage != cfg.stage(self.epoch) {
            return fail("ζ = ⌈N_g·t/T⌉");
        }
        Ok(())
    }

    /// CSV rows `token_index,role,score,stage`. The score is the one that
    /// decided the role: the stage score for `encode_psts`, HOG otherwise.
    pub fn to_csv(&self, scores: &SemanticScores) -> String {
        let roles = self.roles();
        let mut psts_score = vec![None; self.num_tokens];
        for (&i, &s) in self.psts_set.iter().zip(&self.psts_scores) {
            psts_score[i] = Some(s);
        }
        let mut out = String::from("token_index,role,score,stage\n");
        for (i, role) in roles.iter().enumerate() {
            let score = psts_score[i].unwrap_or(scores.as_slice()[i]);
            let _ = writeln!(out, "{i},{},{score},{}", role.as_str(), self.stage);
        }
        out
    }
}

fn complement(n: usize, chosen: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    for &i in chosen {
        mark[i] = true;
    }
    (0..n).filter(|&i| !mark[i]).collect()
}

/// Full per-sample selection for epoch `t ∈ [1, T]`.
///
/// `embeddings` holds the `N×d` patch-embedding rows used for distances.
pub fn plan_epoch_selection(
    embeddings: &[f64],
    d: usize,
    scores: &SemanticScores,
    cfg: &SelectionConfig,
    epoch: usize,
    key: u64,
) -> Result<SelectionPlan> {
    cfg.validate()?;
    let n = scores.len();
    if epoch < 1 || epoch > cfg.total_epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside [1, T={}]",
            cfg.total_epochs
        )));
    }
    if embeddings.len() != n * d {
        return Err(Error::Contract(format!(
            "{} embedding values for N={n}, d={d}",
            embeddings.len()
        )));
    }
    let stage = cfg.stage(epoch);
    if !cfg.psts {
        return random_visible_plan(scores, cfg, epoch, key);
    }
    let init_set = init_token_set(scores, cfg, n)?;
    let unselected = complement(n, &init_set);
    let gather = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| embeddings[i * d..(i + 1) * d].iter().copied())
            .collect()
    };
    let dist = distance_matrix(&gather(&unselected), &gather(&init_set), d, cfg.measure)?;
    let stage_sc = stage_scores(&dist, &unselected, stage, cfg.pattern, key)?;
    let psts_set = select_psts(&unselected, &stage_sc, cfg, n)?;
    let score_of: std::collections::HashMap<usize, f64> =
        unselected.iter().copied().zip(stage_sc.iter().copied()).collect();
    let psts_scores = psts_set.iter().map(|i| score_of[i]).collect();
    let encode_set: Vec<usize> = init_set.iter().chain(&psts_set).copied().collect();
    let masked_set = complement(n, &encode_set);
    let reconstruction_targets = select_reconstruction_targets(scores, &masked_set, cfg, n)?;
    Ok(SelectionPlan {
        epoch,
        stage,
        num_tokens: n,
        init_set,
        psts_set,
        psts_scores,
        encode_set,
        masked_set,
        reconstruction_targets,
    })
}

/// Encode set of `⌊(1−m)·N⌋` uniformly random tokens with HOG-selected
/// reconstruction targets (selection without the curriculum).
pub fn random_visible_plan(
    scores: &SemanticScores,
    cfg: &SelectionConfig,
    epoch: usize,
    key: u64,
) -> Result<SelectionPlan> {
    let n = scores.len();
    let visible = floor_count(1.0 - cfg.mask_ratio, n);
    let random: Vec<f64> = (0..n).map(|i| random_token_score(key, i)).collect();
    let all: Vec<usize> = (0..n).collect();
    let encode_set = top_k_by_score(&random, &all, visible)?;
    let masked_set = complement(n, &encode_set);
    let reconstruction_targets = select_reconstruction_targets(scores, &masked_set, cfg, n)?;
    Ok(SelectionPlan {
        epoch,
        stage: cfg.stage(epoch),
        num_tokens: n,
        init_set: Vec::new(),
        psts_scores: encode_set.iter().map(|&i| random[i]).collect(),
        psts_set: encode_set.clone(),
        encode_set,
        masked_set,
        reconstruction_targets,
    })
}

/// Conventional masked-autoencoder plan: `⌊(1−mask)·N⌋` uniformly random
/// visible tokens, every masked token reconstructed.
pub fn baseline_plan(
    n: usize,
    mask_ratio: f64,
    epoch: usize,
    stage: usize,
    key: u64,
) -> Result<SelectionPlan> {
    let visible = floor_count(1.0 - mask_ratio, n);
    if visible == 0 || visible == n {
        return Err(Error::Config(format!(
            "baseline mask ratio {mask_ratio} leaves no visible or no masked tokens at N={n}"
        )));
    }
    let random: Vec<f64> = (0..n).map(|i| random_token_score(key, i)).collect();
    let all: Vec<usize> = (0..n).collect();
    let encode_set = top_k_by_score(&random, &all, visible)?;
    let masked_set = complement(n, &encode_set);
    Ok(SelectionPlan {
        epoch,
        stage,
        num_tokens: n,
        init_set: Vec::new(),
        psts_scores: encode_set.iter().map(|&i| random[i]).collect(),
        psts_set: encode_set.clone(),
        encode_set,
        reconstruction_targets: masked_set.clone(),
        masked_set,
    })
}
