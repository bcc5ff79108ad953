//! High-precision targeted recommendation: pick N users, one recommendation
//! each, and score the fraction whose chosen item truly carries a top rating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PredictionRecord;

/// Default success cutoff: a rating of at least 4.5 stars.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 4.5;

/// Probability the model assigns to a successful rating: the summed mass of
/// rating values at or above the threshold.
pub fn success_probability(record: &PredictionRecord, threshold: f64) -> f64 {
    record.dist.mass_at_least(threshold)
}

/// One row of the targeted-task result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetedRow {
    pub n: usize,
    pub precision_at_1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_gain_vs_mf: Option<f64>,
}

impl TargetedRow {
    pub const CSV_HEADER: &'static str = "N,precision_at_1,relative_gain_vs_mf";

    pub fn csv_row(&self) -> String {
        let gain = self.relative_gain_vs_mf.map(|g| g.to_string()).unwrap_or_default();
        format!("{},{},{gain}", self.n, self.precision_at_1)
    }
}

/// Precision@1 over a grid of user budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetedResult {
    /// Number of users with any successful rating in the records; budgets are
    /// capped here.
    pub eligible_users: usize,
    pub success_threshold: f64,
    pub rows: Vec<TargetedRow>,
}

/// For every user keep their highest-success-probability test item, rank
/// those picks by probability, and report Precision@1 for each budget N
/// (capped at the number of users who have any successful test rating).
///
/// Ties break deterministically: within a user by the lower item index, and
/// across users by the lower user index.
pub fn run_targeted(
    records: &[PredictionRecord],
    n_values: &[usize],
    threshold: f64,
) -> Result<TargetedResult> {
    if n_values.is_empty() {
        return Err(Error::Domain("targeted task requires at least one N".into()));
    }
    if records.is_empty() {
        return Err(Error::Domain("no records".into()));
    }

    struct Pick {
        user: u32,
        item: u32,
        prob: f64,
        success: bool,
    }

    let mut picks: Vec<Pick> = Vec::new();
    let mut by_user: std::collections::BTreeMap<u32, Pick> = std::collections::BTreeMap::new();
    let mut has_success: std::collections::BTreeMap<u32, bool> = std::collections::BTreeMap::new();
    for r in records {
        let prob = success_probability(r, threshold);
        let success = r.true_rating >= threshold - 1e-12;
        *has_success.entry(r.user).or_insert(false) |= success;
        let cand = Pick { user: r.user, item: r.item, prob, success };
        match by_user.get(&r.user) {
            Some(cur) if cur.prob > cand.prob => {}
            Some(cur) if cur.prob == cand.prob && cur.item <= cand.item => {}
            _ => {
                by_user.insert(r.user, cand);
            }
        }
    }
    picks.extend(by_user.into_values());
    picks.sort_by(|a, b| {
        b.prob.partial_cmp(&a.prob).unwrap().then(a.user.cmp(&b.user))
    });

    let eligible = has_success.values().filter(|&&s| s).count();
    if eligible == 0 {
        return Err(Error::Domain("no user has a successful test rating".into()));
    }

    // Prefix counts of successful picks in rank order.
    let mut prefix = Vec::with_capacity(picks.len() + 1);
    prefix.push(0usize);
    for p in &picks {
        prefix.push(prefix.last().unwrap() + usize::from(p.success));
    }

    let mut grid: Vec<usize> = n_values.to_vec();
    grid.sort_unstable();
    let mut rows: Vec<TargetedRow> = Vec::new();
    for n in grid {
        if n == 0 {
            continue;
        }
        let n_eff = n.min(eligible).min(picks.len());
        if rows.iter().any(|r| r.n == n_eff) {
            continue; // capped duplicates collapse
        }
        rows.push(TargetedRow {
            n: n_eff,
            precision_at_1: prefix[n_eff] as f64 / n_eff as f64,
            relative_gain_vs_mf: None,
        });
    }
    if rows.is_empty() {
        return Err(Error::Domain("targeted grid contained no positive N".into()));
    }
    Ok(TargetedResult { eligible_users: eligible, success_threshold: threshold, rows })
}

/// Fill the relative-gain column against an MF result with matching budgets.
pub fn fill_relative_gain(target: &mut TargetedResult, mf: &TargetedResult) {
    for row in &mut target.rows {
        if let Some(base) = mf.rows.iter().find(|r| r.n == row.n) {
            if base.precision_at_1 > 0.0 {
                row.relative_gain_vs_mf =
                    Some((row.precision_at_1 - base.precision_at_1) / base.precision_at_1);
            }
        }
    }
}

/// Default budget grid: half-powers of ten up to the eligible-user cap, with
/// the cap itself as the final point.
pub fn default_n_grid(eligible_users: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut k = 0;
    loop {
        let v = 10f64.powf(k as f64 / 2.0).round() as usize;
        if v >= eligible_users {
            break;
        }
        if grid.last() != Some(&v) {
            grid.push(v);
        }
        k += 1;
    }
    grid.push(eligible_users);
    grid
}
