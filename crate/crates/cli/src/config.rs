//! Flat key=value run configuration.
//!
//! One file drives data generation, training, and detection. Unknown keys
//! are rejected; missing keys fall back to defaults with a notice on
//! stderr. Command-line flags override file values.
//!
//! All randomness derives from the single `seed` key:
//! data generation uses `seed + 1`, training `seed + 2`, and the
//! grad-check probe batch `seed + 3`.

use prism_core::data::SynthConfig;
use prism_core::error::{Error, Result};
use prism_core::model::InitVariant;
use prism_core::numerics::{Inversion, DEFAULT_NEUMANN_ORDER};
use prism_core::training::{OptimizerB, TrainConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Seed offsets per purpose.
pub const SEED_OFFSET_DATA: u64 = 1;
pub const SEED_OFFSET_TRAIN: u64 = 2;
pub const SEED_OFFSET_GRADCHECK: u64 = 3;

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "classes",
    "input_dim",
    "n_per_class",
    "id_mean_scale",
    "cluster_std",
    "n_ood_clusters",
    "ood_shift",
    "lambda",
    "m",
    "epochs",
    "batch_size",
    "lr_theta",
    "lr_b",
    "momentum",
    "weight_decay_theta",
    "weight_decay_b",
    "optimizer_b",
    "inversion",
    "init_variant",
    "freeze_b_in_reg",
    "hidden",
    "penultimate_dim",
    "knn_k",
    "tpr_level",
    "data_dir",
    "out_dir",
];

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub knn_k: usize,
    pub tpr_level: f64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Flag-level overrides (flags win over file keys).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub tpr: Option<f64>,
    pub lambda: Option<f64>,
    pub m: Option<usize>,
}

impl RunConfig {
    /// Parses the key=value text, applies overrides, and reports defaulted
    /// keys through `notices`.
    pub fn parse(text: &str, overrides: &Overrides, notices: &mut Vec<String>) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
            if kv.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
        }

        let mut note = |key: &str, default: &str| {
            notices.push(format!("config: '{key}' defaulted to {default}"));
        };

        macro_rules! get {
            ($key:expr, $default:expr, $parse:expr) => {
                match kv.get($key) {
                    Some(raw) => $parse(raw).ok_or_else(|| {
                        Error::Config(format!("bad value for '{}': {raw}", $key))
                    })?,
                    None => {
                        note($key, &format!("{:?}", $default));
                        $default
                    }
                }
            };
        }

        let parse_u64 = |s: &str| s.parse::<u64>().ok();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let parse_f64 = |s: &str| s.parse::<f64>().ok();
        let parse_bool = |s: &str| match s {
            "true" | "1" => Some(true),
            "false" | "0" => Some(false),
            _ => None,
        };

        let mut seed: u64 = get!("seed", 7u64, parse_u64);

        let synth_default = SynthConfig::default();
        let classes = get!("classes", synth_default.classes, parse_usize);
        let input_dim = get!("input_dim", synth_default.feature_dim, parse_usize);
        let n_per_class = get!("n_per_class", synth_default.n_per_class, parse_usize);
        let id_mean_scale = get!("id_mean_scale", synth_default.id_mean_scale, parse_f64);
        let cluster_std = get!("cluster_std", synth_default.cluster_std, parse_f64);
        let n_ood_clusters = get!("n_ood_clusters", synth_default.n_ood_clusters, parse_usize);
        let ood_shift = get!("ood_shift", synth_default.ood_shift, parse_f64);

        let train_default = TrainConfig::default();
        let mut lambda = get!("lambda", train_default.lambda, parse_f64);
        let mut pseudo_labels = get!("m", train_default.pseudo_labels, parse_usize);
        let epochs = get!("epochs", train_default.epochs, parse_usize);
        let batch_size = get!("batch_size", train_default.batch_size, parse_usize);
        let lr_theta = get!("lr_theta", train_default.lr_theta, parse_f64);
        let lr_b = get!("lr_b", train_default.lr_b, parse_f64);
        let momentum = get!("momentum", train_default.momentum, parse_f64);
        let weight_decay_theta =
            get!("weight_decay_theta", train_default.weight_decay_theta, parse_f64);
        let weight_decay_b = get!("weight_decay_b", train_default.weight_decay_b, parse_f64);
        let optimizer_b = get!("optimizer_b", OptimizerB::Adam, |s: &str| {
            OptimizerB::from_str(s)
        });
        let inversion = get!(
            "inversion",
            Inversion::Neumann(DEFAULT_NEUMANN_ORDER),
            parse_inversion
        );
        let init_variant = get!("init_variant", InitVariant::default(), |s: &str| {
            InitVariant::from_str(s)
        });
        let freeze_b_in_reg = get!("freeze_b_in_reg", false, parse_bool);
        let hidden = get!("hidden", vec![64usize, 64], parse_hidden);
        let penultimate = get!("penultimate_dim", train_default.penultimate, parse_usize);

        let mut knn_k = get!("knn_k", 10usize, parse_usize);
        let mut tpr_level = get!("tpr_level", 0.95f64, parse_f64);

        let data_dir = kv.get("data_dir").map(PathBuf::from);
        let out_dir = kv.get("out_dir").map(PathBuf::from);

        // Flags win.
        if let Some(s) = overrides.seed {
            seed = s;
        }
        if let Some(k) = overrides.k {
            knn_k = k;
        }
        if let Some(t) = overrides.tpr {
            tpr_level = t;
        }
        if let Some(l) = overrides.lambda {
            lambda = l;
        }
        if let Some(m) = overrides.m {
            pseudo_labels = m;
        }

        let synth = SynthConfig {
            classes,
            feature_dim: input_dim,
            n_per_class,
            id_mean_scale,
            cluster_std,
            n_ood_clusters,
            ood_shift,
            seed: seed.wrapping_add(SEED_OFFSET_DATA),
        };
        synth.validate()?;
        let train = TrainConfig {
            lambda,
            pseudo_labels,
            classes,
            epochs,
            batch_size,
            lr_theta,
            lr_b,
            momentum,
            weight_decay_theta,
            weight_decay_b,
            optimizer_b,
            inversion,
            seed: seed.wrapping_add(SEED_OFFSET_TRAIN),
            init_variant,
            freeze_b_in_reg,
            hidden,
            penultimate,
        };
        train.validate()?;
        if !(tpr_level > 0.0 && tpr_level <= 1.0) {
            return Err(Error::Config(format!("tpr_level {tpr_level} outside (0, 1]")));
        }
        if knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".to_string()));
        }

        Ok(Self {
            seed,
            synth,
            train,
            knn_k,
            tpr_level,
            data_dir,
            out_dir,
        })
    }

    /// The resolved configuration, one key per line (printed to stderr at
    /// the start of every command).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "resolved config:");
        let _ = writeln!(out, "  seed={}", self.seed);
        let _ = writeln!(out, "  classes={}", self.synth.classes);
        let _ = writeln!(out, "  input_dim={}", self.synth.feature_dim);
        let _ = writeln!(out, "  n_per_class={}", self.synth.n_per_class);
        let _ = writeln!(out, "  id_mean_scale={}", self.synth.id_mean_scale);
        let _ = writeln!(out, "  cluster_std={}", self.synth.cluster_std);
        let _ = writeln!(out, "  n_ood_clusters={}", self.synth.n_ood_clusters);
        let _ = writeln!(out, "  ood_shift={}", self.synth.ood_shift);
        let _ = writeln!(out, "  lambda={}", self.train.lambda);
        let _ = writeln!(out, "  m={}", self.train.pseudo_labels);
        let _ = writeln!(out, "  epochs={}", self.train.epochs);
        let _ = writeln!(out, "  batch_size={}", self.train.batch_size);
        let _ = writeln!(out, "  lr_theta={}", self.train.lr_theta);
        let _ = writeln!(out, "  lr_b={}", self.train.lr_b);
        let _ = writeln!(out, "  momentum={}", self.train.momentum);
        let _ = writeln!(out, "  weight_decay_theta={}", self.train.weight_decay_theta);
        let _ = writeln!(out, "  weight_decay_b={}", self.train.weight_decay_b);
        let _ = writeln!(out, "  optimizer_b={}", self.train.optimizer_b.as_str());
        let _ = writeln!(out, "  inversion={}", self.train.inversion);
        let _ = writeln!(out, "  init_variant={}", self.train.init_variant.as_str());
        let _ = writeln!(out, "  freeze_b_in_reg={}", self.train.freeze_b_in_reg);
        let hidden: Vec<String> = self.train.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "  hidden={}", hidden.join(","));
        let _ = writeln!(out, "  penultimate_dim={}", self.train.penultimate);
        let _ = writeln!(out, "  knn_k={}", self.knn_k);
        let _ = writeln!(out, "  tpr_level={}", self.tpr_level);
        out
    }
}

fn parse_inversion(s: &str) -> Option<Inversion> {
    if s == "exact" {
        return Some(Inversion::Exact);
    }
    if s == "neumann" {
        return Some(Inversion::Neumann(DEFAULT_NEUMANN_ORDER));
    }
    if let Some(order) = s.strip_prefix("neumann:") {
        return order.parse::<usize>().ok().map(Inversion::Neumann);
    }
    None
}

fn parse_hidden(s: &str) -> Option<Vec<usize>> {
    if s.trim().is_empty() || s.trim() == "none" {
        return Some(vec![]);
    }
    s.split(',')
        .map(|part| part.trim().parse::<usize>().ok())
        .collect()
}
