//! Rating-log ingestion, dense index maps, and cross-validation folds.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered, discrete, linearly spaced rating scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScaleRepr", into = "ScaleRepr")]
pub struct RatingScale {
    r_min: f64,
    step: f64,
    n: usize,
}

/// Serialized form of a scale: endpoints plus the value count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ScaleRepr {
    r_min: f64,
    r_max: f64,
    n: usize,
}

impl TryFrom<ScaleRepr> for RatingScale {
    type Error = Error;
    fn try_from(r: ScaleRepr) -> Result<Self> {
        RatingScale::new(r.r_min, r.r_max, r.n)
    }
}

impl From<RatingScale> for ScaleRepr {
    fn from(s: RatingScale) -> ScaleRepr {
        ScaleRepr { r_min: s.r_min, r_max: s.r_max(), n: s.n }
    }
}

impl RatingScale {
    /// Scale of `n` equally spaced values from `r_min` to `r_max` inclusive.
    pub fn new(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        if !(r_min.is_finite() && r_max.is_finite()) || n < 2 || r_max <= r_min {
            return Err(Error::Domain(format!(
                "rating scale requires finite r_min < r_max and n >= 2, got [{r_min}, {r_max}] n={n}"
            )));
        }
        if n > u16::MAX as usize {
            return Err(Error::Domain(format!("rating scale with {n} values is unsupported")));
        }
        Ok(Self { r_min, step: (r_max - r_min) / (n - 1) as f64, n })
    }

    /// Rebuild from stored raw fields (binary checkpoints), preserving the
    /// exact step value.
    pub(crate) fn from_raw(r_min: f64, step: f64, n: usize) -> Result<Self> {
        if !(r_min.is_finite() && step.is_finite() && step > 0.0) || !(2..=u16::MAX as usize).contains(&n) {
            return Err(Error::Format("invalid rating scale".into()));
        }
        Ok(Self { r_min, step, n })
    }

    /// The MovieLens half-point scale 0.5, 1.0, ..., 5.0.
    pub fn half_point() -> Self {
        Self::new(0.5, 5.0, 10).unwrap()
    }

    /// The MovieLens 100K whole-point scale 1, 2, ..., 5.
    pub fn whole_point() -> Self {
        Self::new(1.0, 5.0, 5).unwrap()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_min + (self.n - 1) as f64 * self.step
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Rating value at a zero-based index.
    pub fn value(&self, index: usize) -> f64 {
        debug_assert!(index < self.n);
        self.r_min + index as f64 * self.step
    }

    /// Index of a value that lies on the scale (within 1e-9), if any.
    pub fn snap(&self, value: f64) -> Option<usize> {
        if !value.is_finite() {
            return None;
        }
        let idx = ((value - self.r_min) / self.step).round();
        if idx < 0.0 || idx >= self.n as f64 {
            return None;
        }
        let idx = idx as usize;
        ((self.value(idx) - value).abs() <= 1e-9).then_some(idx)
    }

    /// Index of the scale value nearest to an arbitrary real (ties toward the
    /// lower index).
    pub fn nearest(&self, value: f64) -> usize {
        let t = (value - self.r_min) / self.step;
        // Round half down so midpoints resolve to the lower rating.
        let idx = (t + 0.5).ceil() - 1.0;
        (idx.max(0.0) as usize).min(self.n - 1)
    }
}

/// One observed rating with dense user/item indices and a scale index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: u16,
}

/// A rating dataset with dense index maps and its scale.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    interactions: Vec<Interaction>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    user_index: HashMap<u64, u32>,
    item_index: HashMap<u64, u32>,
    scale: RatingScale,
}

impl RatingDataset {
    pub fn empty(scale: RatingScale) -> Self {
        Self {
            interactions: Vec::new(),
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            scale,
        }
    }

    /// Build a dataset directly from dense-indexed interactions, assigning
    /// external ids equal to the dense indices. Used by generators and tests.
    pub fn from_dense(
        interactions: Vec<Interaction>,
        num_users: usize,
        num_items: usize,
        scale: RatingScale,
    ) -> Result<Self> {
        for it in &interactions {
            if it.user as usize >= num_users
                || it.item as usize >= num_items
                || it.rating as usize >= scale.n()
            {
                return Err(Error::Domain(format!("interaction out of range: {it:?}")));
            }
        }
        let user_ids: Vec<u64> = (0..num_users as u64).collect();
        let item_ids: Vec<u64> = (0..num_items as u64).collect();
        let user_index = user_ids.iter().enumerate().map(|(i, &e)| (e, i as u32)).collect();
        let item_index = item_ids.iter().enumerate().map(|(i, &e)| (e, i as u32)).collect();
        Ok(Self { interactions, user_ids, item_ids, user_index, item_index, scale })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    pub fn user_dense(&self, external: u64) -> Option<u32> {
        self.user_index.get(&external).copied()
    }

    pub fn item_dense(&self, external: u64) -> Option<u32> {
        self.item_index.get(&external).copied()
    }

    /// FNV-1a over the interaction triples; embedded in manifests so later
    /// commands can detect that they are reading the same data.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.interactions.len() as u64);
        for it in &self.interactions {
            eat(it.user as u64);
            eat(it.item as u64);
            eat(it.rating as u64);
        }
        h
    }
}

/// Input framing for rating logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFormat {
    /// Separator-delimited text, e.g. the MovieLens `user::item::rating[::ts]`.
    Delimited { separator: String },
    /// Comma-separated `user,item,rating[,ts]`.
    Csv,
}

impl ParseFormat {
    fn separator(&self) -> &str {
        match self {
            ParseFormat::Delimited { separator } => separator,
            ParseFormat::Csv => ",",
        }
    }
}

/// Counters reported alongside a parsed dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Data lines consumed (excluding blank lines).
    pub lines: usize,
    /// Duplicate (user, item) pairs resolved by keeping the last rating.
    pub duplicates: usize,
}

/// Parse a rating log into a dense-indexed dataset.
///
/// Each non-blank line carries `user<sep>item<sep>rating[<sep>timestamp]`.
/// Ratings must lie on the scale (within 1e-9); anything else is a record
/// error carrying the line number. Duplicate (user, item) pairs keep the last
/// rating seen, counted in [`ParseStats::duplicates`].
pub fn parse_ratings(
    source: impl BufRead,
    format: &ParseFormat,
    scale: RatingScale,
) -> Result<(RatingDataset, ParseStats)> {
    let sep = format.separator();
    if sep.is_empty() {
        return Err(Error::Domain("empty separator".into()));
    }
    let mut data = RatingDataset::empty(scale);
    let mut stats = ParseStats::default();
    let mut pair_pos: HashMap<(u32, u32), usize> = HashMap::new();

    for (line_no, line) in source.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        stats.lines += 1;
        let mut fields = line.split(sep);
        let record = |msg: String| Error::Record { line: line_no, msg };
        let user_raw = fields.next().ok_or_else(|| record("missing user field".into()))?;
        let item_raw = fields.next().ok_or_else(|| record("missing item field".into()))?;
        let rating_raw = fields.next().ok_or_else(|| record("missing rating field".into()))?;

        let user_ext: u64 = user_raw
            .trim()
            .parse()
            .map_err(|_| record(format!("invalid user id {user_raw:?}")))?;
        let item_ext: u64 = item_raw
            .trim()
            .parse()
            .map_err(|_| record(format!("invalid item id {item_raw:?}")))?;
        let rating: f64 = rating_raw
            .trim()
            .parse()
            .map_err(|_| record(format!("invalid rating {rating_raw:?}")))?;
        let rating_idx = scale.snap(rating).ok_or_else(|| {
            record(format!(
                "rating {rating} is not on the scale [{}, {}] with {} values",
                scale.r_min(),
                scale.r_max(),
                scale.n()
            ))
        })? as u16;

        let next_user = data.user_ids.len() as u32;
        let user = *data.user_index.entry(user_ext).or_insert_with(|| {
            data.user_ids.push(user_ext);
            next_user
        });
        let next_item = data.item_ids.len() as u32;
        let item = *data.item_index.entry(item_ext).or_insert_with(|| {
            data.item_ids.push(item_ext);
            next_item
        });

        match pair_pos.get(&(user, item)) {
            Some(&pos) => {
                data.interactions[pos].rating = rating_idx;
                stats.duplicates += 1;
            }
            None => {
                pair_pos.insert((user, item), data.interactions.len());
                data.interactions.push(Interaction { user, item, rating: rating_idx });
            }
        }
    }
    Ok((data, stats))
}

/// One cross-validation split: interaction indices into the parent dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub seed: u64,
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    /// Held-out interactions, already filtered by the cold-start guard.
    pub eval: Vec<u32>,
    /// Held-out interactions removed by the guard (dropped entirely).
    pub dropped_by_guard: usize,
}

/// Remove eval interactions whose user or item never occurs in train.
///
/// Returns the surviving eval indices and the number removed. Idempotent.
pub fn cold_start_guard(data: &RatingDataset, train: &[u32], eval: &[u32]) -> (Vec<u32>, usize) {
    let mut users = vec![false; data.num_users()];
    let mut items = vec![false; data.num_items()];
    for &idx in train {
        let it = data.interactions[idx as usize];
        users[it.user as usize] = true;
        items[it.item as usize] = true;
    }
    let kept: Vec<u32> = eval
        .iter()
        .copied()
        .filter(|&idx| {
            let it = data.interactions[idx as usize];
            users[it.user as usize] && items[it.item as usize]
        })
        .collect();
    let dropped = eval.len() - kept.len();
    (kept, dropped)
}

/// Randomly partition interactions into `k` folds and build one split per
/// fold: the fold is the (guard-filtered) eval set, and the remainder is
/// divided 95% train / 5% validation.
pub fn kfold_split(data: &RatingDataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let m = data.len();
    if k < 2 {
        return Err(Error::Domain(format!("k-fold split requires k >= 2, got {k}")));
    }
    if m == 0 {
        return Err(Error::Domain("cannot split an empty dataset".into()));
    }
    if k > m {
        return Err(Error::Domain(format!("k={k} exceeds the interaction count {m}")));
    }

    let mut shuffled: Vec<u32> = (0..m as u32).collect();
    shuffled.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));

    let mut splits = Vec::with_capacity(k);
    for fold_id in 0..k {
        let lo = fold_id * m / k;
        let hi = (fold_id + 1) * m / k;
        let members = &shuffled[lo..hi];

        let mut rest: Vec<u32> = Vec::with_capacity(m - members.len());
        rest.extend_from_slice(&shuffled[..lo]);
        rest.extend_from_slice(&shuffled[hi..]);
        rest.shuffle(&mut ChaCha20Rng::seed_from_u64(fold_seed(seed, fold_id)));
        let val_count = rest.len() * 5 / 100;
        let mut validation: Vec<u32> = rest[..val_count].to_vec();
        let mut train: Vec<u32> = rest[val_count..].to_vec();

        let (mut eval, dropped) = cold_start_guard(data, &train, members);
        train.sort_unstable();
        validation.sort_unstable();
        eval.sort_unstable();
        splits.push(FoldSplit {
            fold_id,
            seed,
            train,
            validation,
            eval,
            dropped_by_guard: dropped,
        });
    }
    Ok(splits)
}

/// Deterministic per-fold sub-seed (splitmix64 of the pair).
fn fold_seed(seed: u64, fold_id: usize) -> u64 {
    let mut z = seed ^ (fold_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// On-disk manifest of one fold, sufficient to rebuild its [`FoldSplit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold_id: usize,
    pub k: usize,
    pub seed: u64,
    pub content_hash: u64,
    /// Raw fold membership before the guard.
    pub members: Vec<u32>,
    pub validation: Vec<u32>,
    pub dropped_by_guard: usize,
    pub train_count: usize,
    pub eval_count: usize,
}

impl FoldManifest {
    pub fn from_split(data: &RatingDataset, split: &FoldSplit, k: usize) -> Self {
        let mut members = split.eval.clone();
        // The manifest keeps the raw fold: eval plus guard-dropped members.
        let mut in_rest = vec![false; data.len()];
        for &i in split.train.iter().chain(&split.validation).chain(&split.eval) {
            in_rest[i as usize] = true;
        }
        members
            .extend((0..data.len() as u32).filter(|&i| !in_rest[i as usize]));
        members.sort_unstable();
        Self {
            fold_id: split.fold_id,
            k,
            seed: split.seed,
            content_hash: data.content_hash(),
            members,
            validation: split.validation.clone(),
            dropped_by_guard: split.dropped_by_guard,
            train_count: split.train.len(),
            eval_count: split.eval.len(),
        }
    }

    /// Rebuild the split against the dataset, revalidating the guard.
    pub fn to_split(&self, data: &RatingDataset) -> Result<FoldSplit> {
        if self.content_hash != data.content_hash() {
            return Err(Error::State(
                "fold manifest was built from different data (content hash mismatch)".into(),
            ));
        }
        let m = data.len();
        let mut excluded = vec![false; m];
        for &i in self.members.iter().chain(&self.validation) {
            if i as usize >= m {
                return Err(Error::Format(format!("manifest index {i} out of range")));
            }
            excluded[i as usize] = true;
        }
        let train: Vec<u32> =
            (0..m as u32).filter(|&i| !excluded[i as usize]).collect();
        let (eval, dropped) = cold_start_guard(data, &train, &self.members);
        if eval.len() != self.eval_count
            || dropped != self.dropped_by_guard
            || train.len() != self.train_count
        {
            return Err(Error::State("fold manifest counts do not match the dataset".into()));
        }
        let mut validation = self.validation.clone();
        validation.sort_unstable();
        Ok(FoldSplit {
            fold_id: self.fold_id,
            seed: self.seed,
            train,
            validation,
            eval,
            dropped_by_guard: dropped,
        })
    }
}

/// Presence check used by tests and sanity assertions.
pub fn disjoint(a: &[u32], b: &[u32]) -> bool {
    let set: HashSet<u32> = a.iter().copied().collect();
    !b.iter().any(|x| set.contains(x))
}
