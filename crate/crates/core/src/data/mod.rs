//! Synthetic ID/OOD data generation, generative-model fixtures, and the
//! file formats for datasets, checkpoints, and scores.

pub mod container;
mod checkpoint;
mod scores;

pub use checkpoint::{checkpoint_tensors, load_checkpoint, save_checkpoint};
pub use container::{read_container, write_container, NamedTensor};
pub use scores::{format_scores, load_scores, parse_scores, save_scores, ScoreRecord};

use crate::error::{Error, Result};
use crate::numerics::{exact_inverse, norm2, Matrix, ProbVector};
use crate::rng::SplitMix64;
use container::find;
use std::path::Path;

/// Sentinel label carried by every OOD sample.
pub const OOD_LABEL: i64 = -1;

/// Maximum rejection-sampling attempts before the configuration is declared
/// infeasible.
const MAX_REJECTION_TRIES: usize = 1_000_000;

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    TestId,
    TestOod,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestId => "test_id",
            Split::TestOod => "test_ood",
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test_id" => Some(Split::TestId),
            "test_ood" => Some(Split::TestOod),
            _ => None,
        }
    }

    fn code(&self) -> f64 {
        match self {
            Split::Train => 0.0,
            Split::TestId => 1.0,
            Split::TestOod => 2.0,
        }
    }

    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(Split::Train),
            1 => Some(Split::TestId),
            2 => Some(Split::TestOod),
            _ => None,
        }
    }
}

/// A feature matrix with labels and a split tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<i64>,
    split: Split,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<i64>, split: Split) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension {
                label: "dataset labels",
                expected: x.rows(),
                got: y.len(),
            });
        }
        Ok(Self { x, y, split })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn labels(&self) -> &[i64] {
        &self.y
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn split(&self) -> Split {
        self.split
    }
}

/// Synthetic benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of ID classes `K`.
    pub classes: usize,
    /// Input feature dimension `D`.
    pub feature_dim: usize,
    /// Samples per ID class (and per OOD cluster).
    pub n_per_class: usize,
    /// Radius of the sphere that cluster means are drawn on.
    pub id_mean_scale: f64,
    /// Isotropic standard deviation inside each cluster.
    pub cluster_std: f64,
    pub n_ood_clusters: usize,
    /// Minimum distance between an OOD cluster mean and every other mean.
    pub ood_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            feature_dim: 16,
            n_per_class: 500,
            id_mean_scale: 10.0,
            cluster_std: 1.0,
            n_ood_clusters: 4,
            ood_shift: 10.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("classes must be >= 2".to_string()));
        }
        if self.feature_dim == 0 || self.n_per_class == 0 || self.n_ood_clusters == 0 {
            return Err(Error::Config("counts must be positive".to_string()));
        }
        if !self.cluster_std.is_finite() || self.cluster_std < 0.0 {
            return Err(Error::Config("cluster_std must be finite and >= 0".to_string()));
        }
        let scale_ok = self.id_mean_scale.is_finite() && self.id_mean_scale > 0.0;
        let shift_ok = self.ood_shift.is_finite() && self.ood_shift >= 0.0;
        if !scale_ok || !shift_ok {
            return Err(Error::Config(
                "id_mean_scale must be > 0 and ood_shift >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
        let n = norm2(&v);
        if n > 1e-9 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Generates the synthetic benchmark: `K` isotropic Gaussian ID clusters
/// with means on a sphere, split 80/20 into train and test, plus OOD
/// clusters whose means are rejection-sampled to keep at least `ood_shift`
/// distance from every other mean. Deterministic per seed.
pub fn gen_synthetic(config: &SynthConfig) -> Result<(Dataset, Dataset, Dataset)> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let dim = config.feature_dim;

    let id_means: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| {
            unit_vector(&mut rng, dim)
                .into_iter()
                .map(|x| x * config.id_mean_scale)
                .collect()
        })
        .collect();

    let mut ood_means: Vec<Vec<f64>> = Vec::with_capacity(config.n_ood_clusters);
    let mut tries = 0usize;
    while ood_means.len() < config.n_ood_clusters {
        tries += 1;
        if tries > MAX_REJECTION_TRIES {
            return Err(Error::InfeasibleConfig(
                "could not place OOD cluster means at the requested shift",
            ));
        }
        let candidate: Vec<f64> = unit_vector(&mut rng, dim)
            .into_iter()
            .map(|x| x * config.id_mean_scale)
            .collect();
        let clear = id_means
            .iter()
            .chain(ood_means.iter())
            .all(|mean| distance(mean, &candidate) >= config.ood_shift);
        if clear {
            ood_means.push(candidate);
        }
    }

    let n_train_per_class = config.n_per_class * 4 / 5;
    let n_test_per_class = config.n_per_class - n_train_per_class;
    let mut train_x = Vec::with_capacity(config.classes * n_train_per_class * dim);
    let mut train_y = Vec::new();
    let mut test_x = Vec::with_capacity(config.classes * n_test_per_class * dim);
    let mut test_y = Vec::new();

    for (class, mean) in id_means.iter().enumerate() {
        for i in 0..config.n_per_class {
            let sample: Vec<f64> = mean
                .iter()
                .map(|&m| m + config.cluster_std * rng.next_gaussian())
                .collect();
            if i < n_train_per_class {
                train_x.extend(sample);
                train_y.push(class as i64);
            } else {
                test_x.extend(sample);
                test_y.push(class as i64);
            }
        }
    }

    let mut ood_x = Vec::with_capacity(config.n_ood_clusters * config.n_per_class * dim);
    for mean in &ood_means {
        for _ in 0..config.n_per_class {
            let sample: Vec<f64> = mean
                .iter()
                .map(|&m| m + config.cluster_std * rng.next_gaussian())
                .collect();
            ood_x.extend(sample);
        }
    }
    let ood_y = vec![OOD_LABEL; config.n_ood_clusters * config.n_per_class];

    let train = Dataset::new(
        Matrix::from_vec(train_y.len(), dim, train_x)?,
        train_y,
        Split::Train,
    )?;
    let test_id = Dataset::new(
        Matrix::from_vec(test_y.len(), dim, test_x)?,
        test_y,
        Split::TestId,
    )?;
    let test_ood = Dataset::new(
        Matrix::from_vec(ood_y.len(), dim, ood_x)?,
        ood_y,
        Split::TestOod,
    )?;
    Ok((train, test_id, test_ood))
}

/// Ground-truth generative model used as a test oracle: column-stochastic
/// invertible confusion matrices `A_m` and per-cluster posteriors `f`.
#[derive(Debug, Clone)]
pub struct GenerativeFixture {
    pub a_list: Vec<Matrix>,
    pub f_table: Vec<ProbVector>,
}

impl GenerativeFixture {
    pub fn pseudo_labels(&self) -> usize {
        self.a_list.len()
    }

    pub fn classes(&self) -> usize {
        self.a_list[0].rows()
    }

    /// Stacks `[A_1 f; ...; A_M f]`.
    pub fn stacked_p(&self, f: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pseudo_labels() * self.classes());
        for a in &self.a_list {
            out.extend(a.matvec(f));
        }
        out
    }
}

/// Builds a fixture with mixing weight `alpha`: `A_m = (1 - alpha) I +
/// alpha S` with `S` random column-stochastic. `alpha = 0.3` (the default in
/// [`gen_fixture`]) keeps every column diagonally dominant, hence invertible;
/// a condition-number check enforces it anyway.
pub fn fixture_with_alpha(
    pseudo_labels: usize,
    classes: usize,
    alpha: f64,
    seed: u64,
) -> GenerativeFixture {
    assert!(classes >= 2, "fixture needs at least 2 classes");
    assert!(pseudo_labels >= 1, "fixture needs at least 1 pseudo label");
    assert!((0.0..=0.5).contains(&alpha), "alpha in [0, 0.5] keeps A_m invertible");
    let mut rng = SplitMix64::new(seed);
    let mut a_list = Vec::with_capacity(pseudo_labels);
    while a_list.len() < pseudo_labels {
        let mut a = Matrix::zeros(classes, classes);
        for j in 0..classes {
            let col = random_simplex(&mut rng, classes);
            for i in 0..classes {
                let identity = if i == j { 1.0 } else { 0.0 };
                a[(i, j)] = (1.0 - alpha) * identity + alpha * col[i];
            }
        }
        // Condition check via the exact inverse (1-norm estimate).
        let inv = match exact_inverse(&a) {
            Ok(inv) => inv,
            Err(_) => continue,
        };
        if one_norm(&a) * one_norm(&inv) < 1e6 {
            a_list.push(a);
        }
    }
    let f_table = (0..classes)
        .map(|class| {
            let mut raw: Vec<f64> = (0..classes).map(|_| rng.uniform(0.05, 1.0)).collect();
            raw[class] += 3.0;
            let sum: f64 = raw.iter().sum();
            ProbVector::new(raw.into_iter().map(|x| x / sum).collect()).expect("valid simplex")
        })
        .collect();
    GenerativeFixture { a_list, f_table }
}

/// Standard fixture with `alpha = 0.3`.
pub fn gen_fixture(pseudo_labels: usize, classes: usize, seed: u64) -> GenerativeFixture {
    fixture_with_alpha(pseudo_labels, classes, 0.3, seed)
}

fn random_simplex(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
    // Dirichlet(1, ..., 1) via normalized exponentials.
    let raw: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.next_f64()).ln().max(1e-12))
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

fn one_norm(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.cols() {
        let col: f64 = (0..m.rows()).map(|i| m[(i, j)].abs()).sum();
        worst = worst.max(col);
    }
    worst
}

/// Writes a dataset to the binary container format.
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let tensors = vec![
        NamedTensor::new(
            "x",
            vec![dataset.len() as u32, dataset.feature_dim() as u32],
            dataset.features().as_slice().to_vec(),
        ),
        NamedTensor::new(
            "y",
            vec![dataset.len() as u32],
            dataset.labels().iter().map(|&y| y as f64).collect(),
        ),
        NamedTensor::scalar("split", dataset.split().code()),
    ];
    write_container(path, &tensors)
}

/// Reads a dataset from the binary container format.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let tensors = read_container(path)?;
    let x = find(&tensors, "x")?;
    if x.dims.len() != 2 {
        return Err(Error::Format("x must be rank 2".to_string()));
    }
    let (rows, cols) = (x.dims[0] as usize, x.dims[1] as usize);
    let y = find(&tensors, "y")?;
    if y.data.len() != rows {
        return Err(Error::Format("y length mismatch".to_string()));
    }
    let split_code = find(&tensors, "split")?;
    let split = Split::from_code(*split_code.data.first().ok_or_else(|| {
        Error::Format("split tensor is empty".to_string())
    })?)
    .ok_or_else(|| Error::Format("unknown split code".to_string()))?;
    Dataset::new(
        Matrix::from_vec(rows, cols, x.data.clone())?,
        y.data.iter().map(|&v| v as i64).collect(),
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;
    use crate::subspace::{build_basis, SubspaceBasis};

    #[test]
    fn test_gen_synthetic_split_sizes() {
        let config = SynthConfig {
            classes: 3,
            feature_dim: 4,
            n_per_class: 10,
            ..SynthConfig::default()
        };
        let (train, test_id, test_ood) = gen_synthetic(&config).unwrap();
        assert_eq!(train.len(), 24);
        assert_eq!(test_id.len(), 6);
        assert_eq!(test_ood.len(), config.n_ood_clusters * 10);
        assert_eq!(train.split(), Split::Train);
        assert_eq!(test_id.split(), Split::TestId);
        assert_eq!(test_ood.split(), Split::TestOod);
    }

    #[test]
    fn test_gen_synthetic_deterministic() {
        let config = SynthConfig {
            n_per_class: 20,
            ..SynthConfig::default()
        };
        let a = gen_synthetic(&config).unwrap();
        let b = gen_synthetic(&config).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn test_gen_synthetic_zero_std_collapses_to_means() {
        let config = SynthConfig {
            classes: 2,
            feature_dim: 3,
            n_per_class: 5,
            cluster_std: 0.0,
            ..SynthConfig::default()
        };
        let (train, _, _) = gen_synthetic(&config).unwrap();
        // All samples of one class are identical.
        let first = train.sample(0).to_vec();
        for i in 1..4 {
            assert_eq!(train.sample(i), first.as_slice());
        }
    }

    #[test]
    fn test_gen_synthetic_ood_labels_sentinel() {
        let (_, _, test_ood) = gen_synthetic(&SynthConfig {
            n_per_class: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(test_ood.labels().iter().all(|&y| y == OOD_LABEL));
    }

    #[test]
    fn test_gen_synthetic_ood_means_respect_shift() {
        let config = SynthConfig {
            n_per_class: 5,
            cluster_std: 0.0,
            ..SynthConfig::default()
        };
        let (train, _, test_ood) = gen_synthetic(&config).unwrap();
        // With zero std, samples sit exactly on the means.
        for i in 0..test_ood.len() {
            for j in 0..train.len() {
                let d = distance(test_ood.sample(i), train.sample(j));
                assert!(d >= config.ood_shift - 1e-9);
            }
        }
    }

    #[test]
    fn test_gen_synthetic_infeasible_config() {
        let config = SynthConfig {
            classes: 2,
            feature_dim: 2,
            n_per_class: 4,
            id_mean_scale: 1.0,
            ood_shift: 100.0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            gen_synthetic(&config),
            Err(Error::InfeasibleConfig(_))
        ));
    }

    #[test]
    fn test_fixture_alpha_zero_is_identity() {
        let fixture = fixture_with_alpha(2, 3, 0.0, 5);
        for a in &fixture.a_list {
            assert!(a.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        }
    }

    #[test]
    fn test_fixture_inverse_round_trip() {
        let fixture = gen_fixture(1, 2, 11);
        let a = &fixture.a_list[0];
        let inv = exact_inverse(a).unwrap();
        assert!(a.matmul(&inv).max_abs_diff(&Matrix::identity(2)) < 1e-10);
    }

    #[test]
    fn test_fixture_columns_stochastic() {
        let fixture = gen_fixture(3, 4, 13);
        for a in &fixture.a_list {
            for j in 0..4 {
                let col: f64 = (0..4).map(|i| a[(i, j)]).sum();
                assert!((col - 1.0).abs() < 1e-12);
                for i in 0..4 {
                    assert!(a[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn test_fixture_stacked_p_lies_in_basis_range() {
        // The stacked generative vector is annihilated by the projector of
        // the basis built from the inverse matrices.
        let fixture = gen_fixture(2, 3, 17);
        let b_list: Vec<Matrix> = fixture
            .a_list
            .iter()
            .map(|a| exact_inverse(a).unwrap())
            .collect();
        let basis = build_basis(&b_list, crate::numerics::Inversion::Exact).unwrap();
        for f in &fixture.f_table {
            let p = fixture.stacked_p(f.as_slice());
            let q = basis.null_projection(&p).unwrap();
            assert!(norm2(&q) < 1e-8, "residual {}", norm2(&q));
        }
    }

    #[test]
    fn test_fixture_consistency_with_raw_stack() {
        // Stacking A_m directly spans the same range the data lives in.
        let fixture = gen_fixture(3, 2, 23);
        let (m, k) = (3, 2);
        let mut w = Matrix::zeros(m * k, k);
        for (idx, a) in fixture.a_list.iter().enumerate() {
            for i in 0..k {
                for j in 0..k {
                    w[(idx * k + i, j)] = a[(i, j)];
                }
            }
        }
        let basis = SubspaceBasis::from_stacked(w, m, k).unwrap();
        for f in &fixture.f_table {
            let p = fixture.stacked_p(f.as_slice());
            assert!(basis.residual_ratio(&p).unwrap() < 1e-8);
        }
    }

    #[test]
    fn test_dataset_round_trip() {
        let config = SynthConfig {
            classes: 2,
            feature_dim: 3,
            n_per_class: 10,
            ..SynthConfig::default()
        };
        let (train, _, test_ood) = gen_synthetic(&config).unwrap();
        let path = std::env::temp_dir().join(format!(
            "prism_dataset_test_{}.prsm",
            std::process::id()
        ));
        save_dataset(&path, &train).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(train, loaded);
        save_dataset(&path, &test_ood).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(test_ood, loaded);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn test_f_table_rows_are_posteriors() {
        let fixture = gen_fixture(2, 4, 3);
        assert_eq!(fixture.f_table.len(), 4);
        for (class, f) in fixture.f_table.iter().enumerate() {
            // Dominant mass on the cluster's own class.
            let values = f.as_slice();
            let max_idx = crate::model::argmax(values);
            assert_eq!(max_idx, class);
        }
    }

    #[test]
    fn test_unit_vector_is_unit() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..10 {
            let v = unit_vector(&mut rng, 8);
            assert!((norm2(&v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn test_max_abs_diff_helper_sanity() {
        assert_eq!(max_abs_diff(&[1.0, 2.0], &[1.0, 2.5]), 0.5);
    }
}
