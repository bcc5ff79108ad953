//! Metric suite: regression/classification/ranking metrics and the
//! confidence-error correlation analysis.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::dist::DiscreteRatingDistribution;
use crate::error::{Error, Result};
use crate::model::RatingModel;

/// One evaluated interaction with everything the metrics need.
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub user: u32,
    pub item: u32,
    pub true_rating: f64,
    pub true_index: usize,
    pub dist: DiscreteRatingDistribution,
    /// Mean-based estimate, clipped to the scale range.
    pub mean_estimate: f64,
    /// Scale value of the distribution's mode (lowest index on ties).
    pub mode_estimate: f64,
    pub mode_index: usize,
    /// Spread of the distribution around the mean estimate.
    pub variance_estimate: f64,
}

impl PredictionRecord {
    pub fn new(
        user: u32,
        item: u32,
        true_index: usize,
        dist: DiscreteRatingDistribution,
        mean_estimate: f64,
    ) -> Self {
        let scale = dist.scale();
        let mode_index = dist.mode_index();
        Self {
            user,
            item,
            true_rating: scale.value(true_index),
            true_index,
            mean_estimate,
            mode_estimate: scale.value(mode_index),
            mode_index,
            variance_estimate: dist.variance_about(mean_estimate),
            dist,
        }
    }

    pub fn abs_error(&self) -> f64 {
        (self.mean_estimate - self.true_rating).abs()
    }
}

/// Evaluate a model over the given interaction indices.
pub fn build_records<M: RatingModel + Sync>(
    model: &M,
    data: &RatingDataset,
    indices: &[u32],
) -> Result<Vec<PredictionRecord>> {
    indices
        .par_chunks(1024)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&idx| {
                    let it = data.interactions()[idx as usize];
                    let dist = model.distribution(it.user, it.item)?;
                    let mean = model.mean_estimate(it.user, it.item)?;
                    Ok(PredictionRecord::new(it.user, it.item, it.rating as usize, dist, mean))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map(|chunks| chunks.into_iter().flatten().collect())
}

/// RMSE and MAE of the mean estimates.
pub fn regression_metrics(records: &[PredictionRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::Domain("no records".into()));
    }
    let mut sq = 0.0;
    let mut abs = 0.0;
    for r in records {
        let e = r.mean_estimate - r.true_rating;
        sq += e * e;
        abs += e.abs();
    }
    let m = records.len() as f64;
    Ok(((sq / m).sqrt(), abs / m))
}

/// Accuracy of the mode estimate and the average log-likelihood of the true
/// rating (log probabilities floored at ln 1e-12).
pub fn classification_metrics(records: &[PredictionRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::Domain("no records".into()));
    }
    let mut correct = 0usize;
    let mut ll = 0.0;
    for r in records {
        if r.mode_index == r.true_index {
            correct += 1;
        }
        ll += r.dist.probs()[r.true_index].max(1e-12).ln();
    }
    let m = records.len() as f64;
    Ok((correct as f64 / m, ll / m))
}

/// Relevance gain used inside NDCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdcgGain {
    /// The raw rating value.
    Linear,
    /// 2^rating - 1.
    Exponential,
}

impl NdcgGain {
    fn apply(&self, rating: f64) -> f64 {
        match self {
            NdcgGain::Linear => rating,
            NdcgGain::Exponential => rating.exp2() - 1.0,
        }
    }
}

/// Mean per-user NDCG@k of the mean-estimate ranking over each user's test
/// items. Ties in the predicted ranking break by item index; users with a
/// single test item contribute 1.
pub fn ndcg_at_k(records: &[PredictionRecord], k: usize, gain: NdcgGain) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("no records".into()));
    }
    if k == 0 {
        return Err(Error::Domain("ndcg requires k >= 1".into()));
    }
    let mut by_user: BTreeMap<u32, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user).or_default().push(r);
    }
    let mut total = 0.0;
    for (_, mut items) in by_user.iter_mut().map(|(u, v)| (*u, std::mem::take(v))) {
        if items.len() == 1 {
            total += 1.0;
            continue;
        }
        items.sort_by(|a, b| {
            b.mean_estimate
                .partial_cmp(&a.mean_estimate)
                .unwrap()
                .then(a.item.cmp(&b.item))
        });
        let dcg: f64 = items
            .iter()
            .take(k)
            .enumerate()
            .map(|(rank, r)| gain.apply(r.true_rating) / ((rank + 2) as f64).log2())
            .sum();
        let mut ideal: Vec<f64> = items.iter().map(|r| r.true_rating).collect();
        ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(rank, &v)| gain.apply(v) / ((rank + 2) as f64).log2())
            .sum();
        total += if idcg > 0.0 { dcg / idcg } else { 1.0 };
    }
    Ok(total / by_user.len() as f64)
}

/// Pair counts underlying Kendall's tau-b. Both the fast and the brute-force
/// routes produce this struct, and agree exactly on every field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TauCounts {
    pub total_pairs: u64,
    pub tied_x: u64,
    pub tied_y: u64,
    pub tied_both: u64,
    /// Concordant minus discordant.
    pub net_concordant: i64,
}

impl TauCounts {
    pub fn tau_b(&self) -> Result<f64> {
        let dx = self.total_pairs - self.tied_x;
        let dy = self.total_pairs - self.tied_y;
        if dx == 0 || dy == 0 {
            return Err(Error::UndefinedCorrelation("a variable is constant"));
        }
        Ok(self.net_concordant as f64 / ((dx as u128 * dy as u128) as f64).sqrt())
    }
}

/// O(m log m) tau-b pair counting: sort by (x, y), count tie groups, and
/// count discordant pairs as the strict inversions of the y sequence via a
/// merge sort.
pub fn kendall_counts_fast(x: &[f64], y: &[f64]) -> Result<TauCounts> {
    if x.len() != y.len() {
        return Err(Error::Domain("mismatched correlation inputs".into()));
    }
    let m = x.len();
    if m < 2 {
        return Err(Error::UndefinedCorrelation("need at least two observations"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in correlation input".into()));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_unstable_by(|&a, &b| {
        x[a].partial_cmp(&x[b]).unwrap().then(y[a].partial_cmp(&y[b]).unwrap())
    });

    let pairs = |t: u64| t * (t - 1) / 2;
    let total_pairs = pairs(m as u64);

    let mut tied_x = 0u64;
    let mut tied_both = 0u64;
    {
        let mut i = 0;
        while i < m {
            let mut j = i + 1;
            while j < m && x[idx[j]] == x[idx[i]] {
                j += 1;
            }
            tied_x += pairs((j - i) as u64);
            let mut a = i;
            while a < j {
                let mut b = a + 1;
                while b < j && y[idx[b]] == y[idx[a]] {
                    b += 1;
                }
                tied_both += pairs((b - a) as u64);
                a = b;
            }
            i = j;
        }
    }

    let mut tied_y = 0u64;
    {
        let mut ys: Vec<f64> = y.to_vec();
        ys.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut i = 0;
        while i < m {
            let mut j = i + 1;
            while j < m && ys[j] == ys[i] {
                j += 1;
            }
            tied_y += pairs((j - i) as u64);
            i = j;
        }
    }

    let mut seq: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; m];
    let swaps = merge_count_inversions(&mut seq, &mut buf);

    let net = total_pairs as i64 - tied_x as i64 - tied_y as i64 + tied_both as i64
        - 2 * swaps as i64;
    Ok(TauCounts { total_pairs, tied_x, tied_y, tied_both, net_concordant: net })
}

/// Strict inversions (i < j with a[i] > a[j]) counted during a merge sort.
fn merge_count_inversions(a: &mut [f64], buf: &mut [f64]) -> u64 {
    let m = a.len();
    if m < 2 {
        return 0;
    }
    let mid = m / 2;
    let (left, right) = a.split_at_mut(mid);
    let mut inv = merge_count_inversions(left, &mut buf[..mid])
        + merge_count_inversions(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            inv += (left.len() - i) as u64;
            buf[k] = right[j];
            j += 1;
        } else {
            buf[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    buf[k + left.len() - i..m].copy_from_slice(&right[j..]);
    a.copy_from_slice(&buf[..m]);
    inv
}

/// Quadratic reference pair counting; the independent oracle for the fast
/// route.
pub fn kendall_counts_brute(x: &[f64], y: &[f64]) -> Result<TauCounts> {
    let m = x.len();
    if m < 2 || m != y.len() {
        return Err(Error::UndefinedCorrelation("need at least two observations"));
    }
    let mut c = TauCounts {
        total_pairs: (m as u64) * (m as u64 - 1) / 2,
        tied_x: 0,
        tied_y: 0,
        tied_both: 0,
        net_concordant: 0,
    };
    for i in 0..m {
        for j in i + 1..m {
            let dx = x[i].partial_cmp(&x[j]).unwrap() as i8;
            let dy = y[i].partial_cmp(&y[j]).unwrap() as i8;
            if dx == 0 && dy == 0 {
                c.tied_x += 1;
                c.tied_y += 1;
                c.tied_both += 1;
            } else if dx == 0 {
                c.tied_x += 1;
            } else if dy == 0 {
                c.tied_y += 1;
            } else if dx == dy {
                c.net_concordant += 1;
            } else {
                c.net_concordant -= 1;
            }
        }
    }
    Ok(c)
}

/// Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = x.len();
    if m < 2 || m != y.len() {
        return Err(Error::UndefinedCorrelation("need at least two observations"));
    }
    let mx = x.iter().sum::<f64>() / m as f64;
    let my = y.iter().sum::<f64>() / m as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a variable is constant"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson r and Kendall tau-b between the predicted variance and the
/// absolute error of the mean estimate.
pub fn confidence_correlations(records: &[PredictionRecord]) -> Result<(f64, f64)> {
    let variance: Vec<f64> = records.iter().map(|r| r.variance_estimate).collect();
    let error: Vec<f64> = records.iter().map(|r| r.abs_error()).collect();
    let r = pearson_r(&variance, &error)?;
    let tau = kendall_counts_fast(&variance, &error)?.tau_b()?;
    Ok((r, tau))
}

/// Variance-bin grouping strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinKind {
    /// Bins of equal variance width spanning the observed range.
    Equispaced,
    /// Bins holding (nearly) equal record counts in variance order.
    Quantile,
}

impl BinKind {
    pub fn name(&self) -> &'static str {
        match self {
            BinKind::Equispaced => "equispaced",
            BinKind::Quantile => "quantile",
        }
    }
}

/// One profile row; empty bins carry NaN statistics and count 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfileRow {
    pub bin_id: usize,
    pub kind: BinKind,
    pub mean_variance: f64,
    pub mae: f64,
    pub mean_predicted_rating: f64,
    pub count: usize,
}

impl ProfileRow {
    pub const CSV_HEADER: &'static str =
        "bin_id,kind,mean_variance,mae,mean_predicted_rating,count";

    pub fn csv_row(&self) -> String {
        let field = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        format!(
            "{},{},{},{},{},{}",
            self.bin_id,
            self.kind.name(),
            field(self.mean_variance),
            field(self.mae),
            field(self.mean_predicted_rating),
            self.count
        )
    }
}

/// Group records by predicted variance after discarding the top
/// `outlier_discard` fraction of highest-variance records, and report per-bin
/// mean variance, MAE, and mean predicted rating.
pub fn variance_binned_profile(
    records: &[PredictionRecord],
    kind: BinKind,
    bins: usize,
    outlier_discard: f64,
) -> Result<Vec<ProfileRow>> {
    if bins == 0 {
        return Err(Error::Domain("profile requires bins >= 1".into()));
    }
    if !(0.0..1.0).contains(&outlier_discard) {
        return Err(Error::Domain("outlier_discard must lie in [0, 1)".into()));
    }
    if records.is_empty() {
        return Err(Error::Domain("no records".into()));
    }
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        a.variance_estimate
            .partial_cmp(&b.variance_estimate)
            .unwrap()
            .then(a.user.cmp(&b.user))
            .then(a.item.cmp(&b.item))
    });
    let discard = ((records.len() as f64 * outlier_discard).round() as usize)
        .min(records.len() - 1);
    let kept = &order[..order.len() - discard];
    let m = kept.len();

    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); bins];
    match kind {
        BinKind::Equispaced => {
            let lo = kept[0].variance_estimate;
            let hi = kept[m - 1].variance_estimate;
            let span = hi - lo;
            for r in kept {
                let b = if span == 0.0 {
                    0
                } else {
                    (((r.variance_estimate - lo) / span) * bins as f64).floor() as usize
                }
                .min(bins - 1);
                accumulate(&mut sums[b], r);
            }
        }
        BinKind::Quantile => {
            for (rank, r) in kept.iter().enumerate() {
                let b = rank * bins / m;
                accumulate(&mut sums[b], r);
            }
        }
    }

    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(bin_id, (var, err, pred, count))| {
            let c = count as f64;
            ProfileRow {
                bin_id,
                kind,
                mean_variance: if count > 0 { var / c } else { f64::NAN },
                mae: if count > 0 { err / c } else { f64::NAN },
                mean_predicted_rating: if count > 0 { pred / c } else { f64::NAN },
                count,
            }
        })
        .collect())
}

fn accumulate(slot: &mut (f64, f64, f64, usize), r: &PredictionRecord) {
    slot.0 += r.variance_estimate;
    slot.1 += r.abs_error();
    slot.2 += r.mean_estimate;
    slot.3 += 1;
}

/// The metric bundle serialized into evaluation reports. Correlation fields
/// are omitted for models without a confidence signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub record_count: usize,
    pub rmse: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub avg_log_likelihood: f64,
    pub ndcg_at: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kendall_tau: Option<f64>,
}

/// Compute the full report. `with_confidence` controls whether the
/// correlation block is present (it is skipped for MF).
pub fn build_report(
    records: &[PredictionRecord],
    ndcg_ks: &[usize],
    gain: NdcgGain,
    with_confidence: bool,
) -> Result<EvalReport> {
    let (rmse, mae) = regression_metrics(records)?;
    let (accuracy, avg_log_likelihood) = classification_metrics(records)?;
    let mut ndcg_at = BTreeMap::new();
    for &k in ndcg_ks {
        ndcg_at.insert(k, ndcg_at_k(records, k, gain)?);
    }
    let (pearson, tau) = if with_confidence {
        let (r, t) = confidence_correlations(records)?;
        (Some(r), Some(t))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        record_count: records.len(),
        rmse,
        mae,
        accuracy,
        avg_log_likelihood,
        ndcg_at,
        pearson_r: pearson,
        kendall_tau: tau,
    })
}
