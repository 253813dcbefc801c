//! The six subcommands, wired from library calls only — no CLI-layer
//! arithmetic on metrics.

use crate::config::{RunConfig, SEED_OFFSET_GRADCHECK};
use prism_core::data::{
    gen_synthetic, load_checkpoint, load_dataset, load_scores, save_checkpoint, save_dataset,
    save_scores, Dataset, ScoreRecord,
};
use prism_core::detection::{build_index, knn_score, KnnIndex};
use prism_core::error::{Error, Result};
use prism_core::metrics::{auroc, fpr_at_tpr, EvalReport};
use prism_core::model::PrismModel;
use prism_core::rng::SplitMix64;
use prism_core::subspace::{build_basis, SubspaceBasis};
use prism_core::training::{fit, grad_check, TrainConfig};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Gradient-check tolerance on the relative error of every group.
const GRADCHECK_TOL: f64 = 1e-4;

/// Bins used for score histograms in evaluation reports.
const HISTOGRAM_BINS: usize = 20;

pub fn cmd_gen_data(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let (train, test_id, test_ood) = gen_synthetic(&config.synth)?;
    fs::create_dir_all(out_dir)?;
    for (name, dataset) in [
        ("train.prsm", &train),
        ("test_id.prsm", &test_id),
        ("test_ood.prsm", &test_ood),
    ] {
        let path = out_dir.join(name);
        save_dataset(&path, dataset)?;
        println!("wrote {} ({} samples)", path.display(), dataset.len());
    }
    Ok(())
}

pub fn cmd_train(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let train = load_dataset(&data_dir.join("train.prsm"))?;
    let (model, log) = fit(&train, &config.train)?;
    save_checkpoint(out, &model)?;
    let log_path = suffixed(out, ".trainlog.csv");
    fs::write(&log_path, log.to_csv())?;
    println!("wrote {}", out.display());
    println!("wrote {}", log_path.display());
    if let Some(last) = log.records.last() {
        println!(
            "final epoch: ce={:.6} reg={:.6} total={:.6} acc={:.4}",
            last.ce, last.reg, last.total, last.accuracy
        );
    }
    Ok(())
}

pub fn cmd_score(
    config: &RunConfig,
    checkpoint: &Path,
    train_data: &Path,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let train = load_dataset(train_data)?;
    let target = load_dataset(data)?;
    check_dims(&model, &train)?;
    check_dims(&model, &target)?;

    let index = build_index(&embeddings(&model, &train)?)?;
    let basis = build_basis(&model.confusion_matrices()?, config.train.inversion)?;

    let mut knn_records = Vec::with_capacity(target.len());
    let mut reg_records = Vec::with_capacity(target.len());
    let split = target.split().as_str().to_string();
    for i in 0..target.len() {
        let out_fwd = model.forward(target.sample(i))?;
        knn_records.push(ScoreRecord {
            sample_id: i as u64,
            split: split.clone(),
            score: knn_score(&index, &out_fwd.h, config.knn_k)?,
        });
        reg_records.push(ScoreRecord {
            sample_id: i as u64,
            split: split.clone(),
            score: basis.residual_ratio(&out_fwd.p)?,
        });
    }
    save_scores(out, &knn_records)?;
    let reg_path = suffixed(out, ".reg");
    save_scores(&reg_path, &reg_records)?;
    println!("wrote {} ({} scores)", out.display(), knn_records.len());
    println!("wrote {}", reg_path.display());
    Ok(())
}

pub fn cmd_eval(
    id_path: &Path,
    ood_paths: &[PathBuf],
    tpr: f64,
    out: Option<&Path>,
) -> Result<()> {
    let id_scores: Vec<f64> = load_scores(id_path)?.iter().map(|r| r.score).collect();
    let mut ood_sets = Vec::with_capacity(ood_paths.len());
    for path in ood_paths {
        let scores: Vec<f64> = load_scores(path)?.iter().map(|r| r.score).collect();
        ood_sets.push((stem_name(path), scores));
    }
    let report = EvalReport::from_scores(&id_scores, &ood_sets, tpr, None, HISTOGRAM_BINS)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(out) = out {
        fs::write(out, &csv)?;
        let hist_path = suffixed(out, ".hist.csv");
        fs::write(&hist_path, report.histograms_csv())?;
    }
    Ok(())
}

/// Returns whether every parameter group passed the tolerance.
pub fn cmd_gradcheck(config: &RunConfig) -> Result<bool> {
    let model = PrismModel::new(
        config.train.model_dims(config.synth.feature_dim),
        config.train.init_variant,
        config.train.seed,
    );
    let mut rng = SplitMix64::new(config.seed.wrapping_add(SEED_OFFSET_GRADCHECK));
    let xs_data: Vec<Vec<f64>> = (0..8)
        .map(|_| {
            (0..config.synth.feature_dim)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect()
        })
        .collect();
    let xs: Vec<&[f64]> = xs_data.iter().map(|v| v.as_slice()).collect();
    let labels: Vec<usize> = (0..8).map(|_| rng.next_below(config.train.classes)).collect();

    let checks = grad_check(&model, &xs, &labels, &config.train, 1e-5)?;
    let mut all_ok = true;
    for check in &checks {
        let ok = check.max_rel_err < GRADCHECK_TOL;
        all_ok &= ok;
        println!(
            "{:<14} max_rel_err={:.3e} {}",
            check.name,
            check.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!("grad-check: {}", if all_ok { "PASS" } else { "FAIL" });
    Ok(all_ok)
}

/// Which hyperparameter an ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Lambda,
    PseudoLabels,
}

impl Sweep {
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "lambda" => Some(Sweep::Lambda),
            "m" => Some(Sweep::PseudoLabels),
            _ => None,
        }
    }

    fn key(&self) -> &'static str {
        match self {
            Sweep::Lambda => "lambda",
            Sweep::PseudoLabels => "m",
        }
    }
}

pub fn cmd_ablate(config: &RunConfig, sweep: Sweep, values: &[f64], out: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("ablate needs at least one value".to_string()));
    }
    // One shared dataset: sweep points differ only in the swept key.
    let (train, test_id, test_ood) = gen_synthetic(&config.synth)?;

    let mut csv = format!("{},fpr_at_tpr,auroc,id_accuracy,mean_reg_train\n", sweep.key());
    for &value in values {
        let mut train_cfg = config.train.clone();
        match sweep {
            Sweep::Lambda => train_cfg.lambda = value,
            Sweep::PseudoLabels => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!("m sweep value {value} is not a count")));
                }
                train_cfg.pseudo_labels = value as usize;
            }
        }
        let point = run_pipeline(&train, &test_id, &test_ood, &train_cfg, config.knn_k, config.tpr_level)?;
        let _ = writeln!(
            csv,
            "{},{:.9},{:.9},{:.9},{:.9}",
            value, point.fpr, point.auroc, point.accuracy, point.mean_reg_train
        );
    }
    print!("{csv}");
    fs::write(out, &csv)?;
    Ok(())
}

struct PipelinePoint {
    fpr: f64,
    auroc: f64,
    accuracy: f64,
    mean_reg_train: f64,
}

fn run_pipeline(
    train: &Dataset,
    test_id: &Dataset,
    test_ood: &Dataset,
    train_cfg: &TrainConfig,
    k: usize,
    tpr: f64,
) -> Result<PipelinePoint> {
    let (model, _) = fit(train, train_cfg)?;
    let index = build_index(&embeddings(&model, train)?)?;
    let id_scores = score_dataset(&model, &index, test_id, k)?;
    let ood_scores = score_dataset(&model, &index, test_ood, k)?;

    let mut correct = 0;
    for i in 0..test_id.len() {
        if model.predict(test_id.sample(i))? as i64 == test_id.labels()[i] {
            correct += 1;
        }
    }
    // Mean training reg term, mirrored from the loss (zero when M = 1).
    let basis = build_basis(&model.confusion_matrices()?, train_cfg.inversion)?;
    let mean_reg_train = mean_reg(&model, &basis, train)?;

    Ok(PipelinePoint {
        fpr: fpr_at_tpr(&id_scores, &ood_scores, tpr)?,
        auroc: auroc(&id_scores, &ood_scores)?,
        accuracy: correct as f64 / test_id.len() as f64,
        mean_reg_train,
    })
}

fn embeddings(model: &PrismModel, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..dataset.len())
        .map(|i| model.encode(dataset.sample(i)))
        .collect()
}

fn score_dataset(
    model: &PrismModel,
    index: &KnnIndex,
    dataset: &Dataset,
    k: usize,
) -> Result<Vec<f64>> {
    (0..dataset.len())
        .map(|i| knn_score(index, &model.encode(dataset.sample(i))?, k))
        .collect()
}

fn mean_reg(model: &PrismModel, basis: &SubspaceBasis, dataset: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let out = model.forward(dataset.sample(i))?;
        total += basis.residual_ratio(&out.p)?;
    }
    Ok(total / dataset.len() as f64)
}

fn check_dims(model: &PrismModel, dataset: &Dataset) -> Result<()> {
    if model.dims().input != dataset.feature_dim() {
        return Err(Error::Dimension {
            label: "checkpoint vs dataset features",
            expected: model.dims().input,
            got: dataset.feature_dim(),
        });
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn stem_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
