//! Subcommand implementations and artifact IO.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use lbd::baselines::{CmfModel, MfModel, OrdRecModel, OrdRecVariant};
use lbd::checkpoint::{Checkpoint, ModelState};
use lbd::data::{
    kfold_split, parse_ratings, FoldManifest, FoldSplit, RatingDataset,
};
use lbd::eval::{
    build_records, build_report, variance_binned_profile, BinKind, NdcgGain, PredictionRecord,
};
use lbd::lbd::{Binning, LbdModel};
use lbd::model::{ModelKind, RatingModel};
use lbd::targeted::{default_n_grid, fill_relative_gain, run_targeted, TargetedResult, TargetedRow};
use lbd::train::{train, EpochStats, TrainOutcome};

use crate::config::ExperimentConfig;

/// Six significant digits for console summaries; files keep full precision.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Summary of the parsed dataset plus the index maps, written by `split`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    pub content_hash: u64,
    pub interaction_count: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub duplicates_resolved: usize,
    pub scale: lbd::data::RatingScale,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<(RatingDataset, usize)> {
    let path = config.data_path()?;
    let file = fs::File::open(&path)
        .with_context(|| format!("cannot open rating data {}", path.display()))?;
    let format = config.parse_format()?;
    let scale = config.rating_scale()?;
    let (data, stats) = parse_ratings(BufReader::new(file), &format, scale)?;
    Ok((data, stats.duplicates))
}

fn fold_manifest_path(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold}.json"))
}

pub fn load_fold(
    config: &ExperimentConfig,
    data: &RatingDataset,
    fold: usize,
) -> Result<FoldSplit> {
    let path = fold_manifest_path(config.out_dir()?, fold);
    let text = fs::read_to_string(&path).with_context(|| {
        format!("cannot read fold manifest {} (run `lbd split` first)", path.display())
    })?;
    let manifest: FoldManifest = serde_json::from_str(&text)?;
    Ok(manifest.to_split(data)?)
}

pub fn cmd_split(config: &ExperimentConfig) -> Result<()> {
    let (data, duplicates) = load_dataset(config)?;
    let splits = kfold_split(&data, config.folds, config.seed)?;
    let out = config.out_dir()?;
    fs::create_dir_all(out)?;

    let manifest = DatasetManifest {
        config_hash: config.hash(),
        seed: config.seed,
        k: config.folds,
        content_hash: data.content_hash(),
        interaction_count: data.len(),
        num_users: data.num_users(),
        num_items: data.num_items(),
        duplicates_resolved: duplicates,
        scale: data.scale(),
        user_ids: data.user_ids().to_vec(),
        item_ids: data.item_ids().to_vec(),
    };
    fs::write(out.join("dataset.json"), serde_json::to_string(&manifest)?)?;

    for split in &splits {
        let m = FoldManifest::from_split(&data, split, config.folds);
        fs::write(fold_manifest_path(out, split.fold_id), serde_json::to_string(&m)?)?;
        println!(
            "fold {}: train {} validation {} eval {} dropped-by-guard {}",
            split.fold_id,
            split.train.len(),
            split.validation.len(),
            split.eval.len(),
            split.dropped_by_guard
        );
    }
    println!(
        "split {} interactions ({} users, {} items) into {} folds (seed {})",
        data.len(),
        data.num_users(),
        data.num_items(),
        config.folds,
        config.seed
    );
    Ok(())
}

/// Metadata written next to each checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model: ModelKind,
    pub fold_id: usize,
    pub seed: u64,
    pub config_hash: String,
    pub wall_seconds: f64,
    pub best_epoch: usize,
    pub best_validation_rmse: f64,
    pub epochs_run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mf_sigma: Option<f64>,
}

pub fn artifact_stem(out: &Path, kind: ModelKind, fold: usize) -> PathBuf {
    out.join(format!("{kind}_fold{fold}"))
}

fn init_model(
    config: &ExperimentConfig,
    kind: ModelKind,
    data: &RatingDataset,
    init_from: Option<&Path>,
) -> Result<ModelState> {
    let scale = data.scale();
    let users = data.num_users();
    let items = data.num_items();
    let dim = config.embedding_dim;
    let seed = config.seed;
    Ok(match kind {
        ModelKind::Mf => ModelState::Mf(MfModel::init(scale, users, items, dim, seed)?),
        ModelKind::Cmf => {
            let path = init_from.ok_or_else(|| {
                anyhow!(
                    "cmf requires --init-from pointing at a trained mf checkpoint \
                     (its embeddings initialize the variance model)"
                )
            })?;
            let ckpt = Checkpoint::load(path)?;
            match ckpt.model {
                ModelState::Mf(mf) => {
                    if mf.num_users() != users || mf.num_items() != items {
                        bail!("mf checkpoint dimensions do not match the dataset");
                    }
                    ModelState::Cmf(CmfModel::from_mf(&mf))
                }
                other => bail!("--init-from expects an mf checkpoint, found {}", other.kind()),
            }
        }
        ModelKind::OrdrecU => ModelState::Ordrec(OrdRecModel::init(
            scale,
            users,
            items,
            dim,
            OrdRecVariant::User,
            seed,
        )?),
        ModelKind::OrdrecUi => ModelState::Ordrec(OrdRecModel::init(
            scale,
            users,
            items,
            dim,
            OrdRecVariant::UserItem,
            seed,
        )?),
        ModelKind::LbdS => ModelState::Lbd(LbdModel::init(
            scale,
            users,
            items,
            config.lbd_config(Binning::Static),
            seed,
        )?),
        ModelKind::LbdA => ModelState::Lbd(LbdModel::init(
            scale,
            users,
            items,
            config.lbd_config(Binning::Adaptive),
            seed,
        )?),
    })
}

fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut text = String::from(EpochStats::CSV_HEADER);
    text.push('\n');
    for row in history {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_train(
    config: &ExperimentConfig,
    fold: usize,
    init_from: Option<&Path>,
    json_checkpoint: bool,
) -> Result<()> {
    let kind = config.model()?;
    let (data, _) = load_dataset(config)?;
    let split = load_fold(config, &data, fold)?;
    let model = init_model(config, kind, &data, init_from)?;

    let started = Instant::now();
    let TrainOutcome { mut model, history, best_epoch, best_validation_rmse } =
        train(model, &data, &split, &config.train)?;
    // MF needs a residual spread to act as a distribution later.
    let mf_sigma = match &mut model {
        ModelState::Mf(mf) => Some(mf.fit_sigma(&data, &split.train)?),
        _ => None,
    };
    let wall = started.elapsed().as_secs_f64();

    let out = config.out_dir()?;
    fs::create_dir_all(out)?;
    let stem = artifact_stem(out, kind, fold);
    let ckpt = Checkpoint::new(model);
    let ckpt_path = stem.with_extension(if json_checkpoint { "json" } else { "ckpt" });
    if json_checkpoint {
        fs::write(&ckpt_path, ckpt.to_json()?)?;
    } else {
        ckpt.save(&ckpt_path)?;
    }
    write_history(&stem.with_file_name(format!("{kind}_fold{fold}_history.csv")), &history)?;

    let meta = RunMetadata {
        model: kind,
        fold_id: fold,
        seed: config.seed,
        config_hash: config.hash(),
        wall_seconds: wall,
        best_epoch,
        best_validation_rmse,
        epochs_run: history.len().saturating_sub(1),
        mf_sigma,
    };
    fs::write(
        stem.with_file_name(format!("{kind}_fold{fold}_run.json")),
        serde_json::to_string(&meta)?,
    )?;

    println!(
        "trained {kind} fold {fold}: best validation RMSE {} at epoch {best_epoch} ({} epochs, {} s)",
        sig6(best_validation_rmse),
        meta.epochs_run,
        sig6(wall)
    );
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn scale_matches(a: lbd::data::RatingScale, b: lbd::data::RatingScale) -> bool {
    a.n() == b.n() && (a.r_min() - b.r_min()).abs() < 1e-12 && (a.step() - b.step()).abs() < 1e-12
}

fn eval_records(
    config: &ExperimentConfig,
    ckpt: &Checkpoint,
    data: &RatingDataset,
    fold: usize,
) -> Result<Vec<PredictionRecord>> {
    if !scale_matches(ckpt.model.scale(), data.scale()) {
        bail!("checkpoint rating scale does not match the dataset scale");
    }
    if ckpt.model.num_users() != data.num_users() || ckpt.model.num_items() != data.num_items() {
        bail!("checkpoint dimensions do not match the dataset");
    }
    let split = load_fold(config, data, fold)?;
    if split.eval.is_empty() {
        bail!("fold {fold} has an empty eval set");
    }
    Ok(build_records(&ckpt.model, data, &split.eval)?)
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    model: ModelKind,
    fold_id: usize,
    seed: u64,
    config_hash: String,
    metrics: &'a lbd::eval::EvalReport,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    checkpoint: &Path,
    fold: usize,
    bins: usize,
    outlier_frac: f64,
    ndcg_ks: &[usize],
    exponential_gain: bool,
    skip_profiles: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let kind = ckpt.kind();
    let (data, _) = load_dataset(config)?;
    let records = eval_records(config, &ckpt, &data, fold)?;

    let gain = if exponential_gain { NdcgGain::Exponential } else { NdcgGain::Linear };
    let report = build_report(&records, ndcg_ks, gain, kind.has_confidence())?;

    let out = config.out_dir()?;
    fs::create_dir_all(out)?;
    let stem = artifact_stem(out, kind, fold);
    let file = ReportFile {
        model: kind,
        fold_id: fold,
        seed: config.seed,
        config_hash: config.hash(),
        metrics: &report,
    };
    fs::write(stem.with_file_name(format!("{kind}_fold{fold}_report.json")), serde_json::to_string(&file)?)?;

    if !skip_profiles && kind.has_confidence() {
        for bin_kind in [BinKind::Equispaced, BinKind::Quantile] {
            let rows = variance_binned_profile(&records, bin_kind, bins, outlier_frac)?;
            let mut text = String::from(lbd::eval::ProfileRow::CSV_HEADER);
            text.push('\n');
            for row in &rows {
                text.push_str(&row.csv_row());
                text.push('\n');
            }
            fs::write(
                stem.with_file_name(format!(
                    "{kind}_fold{fold}_profile_{}.csv",
                    bin_kind.name()
                )),
                text,
            )?;
        }
    }

    println!(
        "{kind} fold {fold}: rmse {} mae {} accuracy {} avg-log-l {}",
        sig6(report.rmse),
        sig6(report.mae),
        sig6(report.accuracy),
        sig6(report.avg_log_likelihood)
    );
    for (k, v) in &report.ndcg_at {
        println!("ndcg@{k}: {}", sig6(*v));
    }
    match (report.pearson_r, report.kendall_tau) {
        (Some(r), Some(tau)) => {
            println!("confidence-error correlation: pearson {} kendall {}", sig6(r), sig6(tau));
        }
        _ => println!("confidence-error correlation: not defined for {kind}"),
    }
    Ok(())
}

pub fn cmd_targeted(
    config: &ExperimentConfig,
    checkpoints: &[PathBuf],
    fold: usize,
    n_grid: Option<&[usize]>,
    threshold: f64,
) -> Result<()> {
    if checkpoints.is_empty() {
        bail!("targeted requires at least one checkpoint");
    }
    let (data, _) = load_dataset(config)?;
    let mut results: Vec<(ModelKind, TargetedResult)> = Vec::new();
    for path in checkpoints {
        let ckpt = Checkpoint::load(path)?;
        let kind = ckpt.kind();
        let records = eval_records(config, &ckpt, &data, fold)?;
        let eligible = {
            // Grid defaults need the cap before running.
            let probe = run_targeted(&records, &[1], threshold)?;
            probe.eligible_users
        };
        let grid_owned;
        let grid: &[usize] = match n_grid {
            Some(g) => {
                if g.iter().any(|&n| n > eligible) {
                    eprintln!(
                        "warning: {kind}: N grid truncated at {eligible} eligible users"
                    );
                }
                g
            }
            None => {
                grid_owned = default_n_grid(eligible);
                &grid_owned
            }
        };
        let result = run_targeted(&records, grid, threshold)?;
        results.push((kind, result));
    }

    // When an MF result is present, fill relative gains for the others.
    let mf_result = results
        .iter()
        .find(|(k, _)| *k == ModelKind::Mf)
        .map(|(_, r)| r.clone());
    if let Some(mf) = &mf_result {
        for (kind, result) in &mut results {
            if *kind != ModelKind::Mf {
                fill_relative_gain(result, mf);
            }
        }
    }

    let out = config.out_dir()?;
    fs::create_dir_all(out)?;
    for (kind, result) in &results {
        let mut text = String::from(TargetedRow::CSV_HEADER);
        text.push('\n');
        for row in &result.rows {
            text.push_str(&row.csv_row());
            text.push('\n');
        }
        let path = artifact_stem(out, *kind, fold)
            .with_file_name(format!("{kind}_fold{fold}_targeted.csv"));
        fs::write(path, text)?;
        println!(
            "{kind}: {} eligible users, precision@1 at largest N: {}",
            result.eligible_users,
            sig6(result.rows.last().unwrap().precision_at_1)
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    learning_rate: f64,
    l2_weight: f64,
    embedding_dim: usize,
    status: &'static str,
    validation_rmse: Option<f64>,
    best_epoch: Option<usize>,
}

pub fn cmd_sweep(
    config: &ExperimentConfig,
    lr_grid: &[f64],
    l2_grid: &[f64],
    dim_grid: &[usize],
    init_from: Option<&Path>,
) -> Result<()> {
    if lr_grid.is_empty() || l2_grid.is_empty() || dim_grid.is_empty() {
        bail!("sweep requires a non-empty grid");
    }
    let kind = config.model()?;
    let (data, _) = load_dataset(config)?;
    let split = load_fold(config, &data, 0)?;

    let mut rows = Vec::new();
    for &dim in dim_grid {
        for &lr in lr_grid {
            for &l2 in l2_grid {
                let mut point = config.clone();
                point.embedding_dim = dim;
                point.train.learning_rate = lr;
                point.train.l2_weight = l2;
                let outcome = init_model(&point, kind, &data, init_from)
                    .and_then(|m| Ok(train(m, &data, &split, &point.train)?));
                match outcome {
                    Ok(out) => rows.push(SweepRow {
                        learning_rate: lr,
                        l2_weight: l2,
                        embedding_dim: dim,
                        status: "ok",
                        validation_rmse: Some(out.best_validation_rmse),
                        best_epoch: Some(out.best_epoch),
                    }),
                    Err(err) => {
                        eprintln!("warning: grid point lr={lr} l2={l2} dim={dim} failed: {err}");
                        rows.push(SweepRow {
                            learning_rate: lr,
                            l2_weight: l2,
                            embedding_dim: dim,
                            status: "failed",
                            validation_rmse: None,
                            best_epoch: None,
                        });
                    }
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        let key = |r: &SweepRow| r.validation_rmse.unwrap_or(f64::INFINITY);
        key(a).partial_cmp(&key(b)).unwrap()
    });

    let out = config.out_dir()?;
    fs::create_dir_all(out)?;
    let mut text =
        String::from("model,learning_rate,l2_weight,embedding_dim,status,validation_rmse,best_epoch\n");
    for r in &rows {
        text.push_str(&format!(
            "{kind},{},{},{},{},{},{}\n",
            r.learning_rate,
            r.l2_weight,
            r.embedding_dim,
            r.status,
            r.validation_rmse.map(|v| v.to_string()).unwrap_or_default(),
            r.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    let path = out.join(format!("sweep_{kind}.csv"));
    fs::write(&path, text)?;

    println!("swept {} grid points on fold 0; results in {}", rows.len(), path.display());
    if let Some(best) = rows.iter().find(|r| r.status == "ok") {
        println!(
            "best: lr {} l2 {} dim {} -> validation RMSE {}",
            best.learning_rate,
            best.l2_weight,
            best.embedding_dim,
            sig6(best.validation_rmse.unwrap())
        );
    }
    Ok(())
}
