//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use prism_core::data::{gen_fixture, gen_synthetic, Dataset, SynthConfig};
use prism_core::detection::{build_index, knn_score};
use prism_core::metrics::{auroc, fpr_at_tpr};
use prism_core::model::{recombine, InitVariant, ModelDims, PrismModel};
use prism_core::numerics::{exact_inverse, max_abs_diff, norm2, Inversion, Matrix};
use prism_core::rng::SplitMix64;
use prism_core::subspace::{build_basis, SubspaceBasis};
use prism_core::training::{fit, grad_check, TrainConfig, TrainLog};

fn pass(criterion: usize, what: &str) {
    println!("criterion {criterion:2} ({what}): PASS");
}

fn random_simplex(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.uniform(0.05, 1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

#[test]
fn criterion_01_recombination_recovers_posterior() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(101);
    for trial in 0..50 {
        let k = 2 + rng.next_below(5); // {2..6}
        let m = 1 + rng.next_below(3); // {1..3}
        let fixture = gen_fixture(m, k, 1000 + trial);
        let inverses: Vec<Matrix> = fixture
            .a_list
            .iter()
            .map(|a| exact_inverse(a).unwrap())
            .collect();
        let d = random_simplex(&mut rng, m);
        let f = random_simplex(&mut rng, k);
        let p = fixture.stacked_p(&f);
        let recovered = recombine(&inverses, &d, &p).unwrap();
        let err = max_abs_diff(recovered.as_slice(), &f);
        assert!(err < 1e-10, "trial {trial}: max-abs error {err}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    pass(1, "recombination oracle, 50 fixtures");
}

#[test]
fn criterion_02_projector_matches_least_squares() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(202);
    let mut checked = 0;
    while checked < 100 {
        let m = 1 + rng.next_below(4);
        let k = 2 + rng.next_below(4);
        let mut w = Matrix::zeros(m * k, k);
        for i in 0..m * k {
            for j in 0..k {
                w[(i, j)] = rng.uniform(-1.0, 1.0);
            }
        }
        let basis = match SubspaceBasis::from_stacked(w.clone(), m, k) {
            Ok(b) => b,
            Err(_) => continue, // nearly rank-deficient draw
        };
        let p: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let got = basis.null_projection(&p).unwrap();
        let expected = least_squares_residual(&w, &p);
        assert!(max_abs_diff(&got, &expected) < 1e-8);

        // Idempotency, orthogonality, annihilation, Pythagoras.
        let twice = basis.null_projection(&got).unwrap();
        assert!(max_abs_diff(&got, &twice) < 1e-8);
        let wtq = w.matvec_t(&got);
        assert!(wtq.iter().all(|v| v.abs() < 1e-8));
        let c: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let in_range = w.matvec(&c);
        assert!(norm2(&basis.null_projection(&in_range).unwrap()) < 1e-8);
        let diff: Vec<f64> = p.iter().zip(&got).map(|(a, b)| a - b).collect();
        let lhs = norm2(&p).powi(2);
        let rhs = norm2(&got).powi(2) + norm2(&diff).powi(2);
        assert!((lhs - rhs).abs() < 1e-8);

        checked += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    pass(2, "projector oracle, 100 cases + invariants");
}

#[test]
fn criterion_03_subspace_membership() {
    let mut rng = SplitMix64::new(303);
    for trial in 0..20 {
        let k = 2 + rng.next_below(4);
        let m = 2 + rng.next_below(3);
        let fixture = gen_fixture(m, k, 3000 + trial);
        let b_list: Vec<Matrix> = fixture
            .a_list
            .iter()
            .map(|a| exact_inverse(a).unwrap())
            .collect();
        let basis = build_basis(&b_list, Inversion::Exact).unwrap();

        // Generated vectors lie in the subspace.
        for f in &fixture.f_table {
            let p = fixture.stacked_p(f.as_slice());
            let reg = basis.reg_loss(&[p], prism_core::subspace::Reduction::Mean).unwrap();
            assert!(reg < 1e-8, "in-subspace reg {reg}");
        }
        let f = random_simplex(&mut rng, k);
        let p = fixture.stacked_p(&f);
        assert!(basis.residual_ratio(&p).unwrap() < 1e-8);

        // A vector with an orthogonal component scores strictly positive.
        let mut noise: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        noise = basis.null_projection(&noise).unwrap();
        if norm2(&noise) < 1e-6 {
            continue;
        }
        let off: Vec<f64> = p.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let reg = basis.residual_ratio(&off).unwrap();
        assert!(reg > 0.0, "orthogonal component not detected");
    }
    pass(3, "subspace membership of generative vectors");
}

#[test]
fn criterion_04_gradient_suite() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(404);
    let xs_data: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let xs: Vec<&[f64]> = xs_data.iter().map(|v| v.as_slice()).collect();
    let labels: Vec<usize> = (0..8).map(|_| rng.next_below(2)).collect();

    for inversion in [Inversion::Neumann(16), Inversion::Exact] {
        let model = PrismModel::new(
            ModelDims {
                input: 3,
                hidden: vec![5],
                penultimate: 4,
                pseudo_labels: 2,
                classes: 2,
            },
            InitVariant::default(),
            44,
        );
        let config = TrainConfig {
            lambda: 0.05,
            pseudo_labels: 2,
            classes: 2,
            inversion,
            hidden: vec![5],
            penultimate: 4,
            ..TrainConfig::default()
        };
        let checks = grad_check(&model, &xs, &labels, &config, 1e-5).unwrap();
        for check in &checks {
            assert!(
                check.max_rel_err < 1e-4,
                "{inversion}: group {} rel err {}",
                check.name,
                check.max_rel_err
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(4, "gradient suite, both inversion paths");
}

#[test]
fn criterion_05_metric_oracles() {
    // Hand-enumerated examples, asserted exactly.
    assert_eq!(fpr_at_tpr(&[-0.1, -0.2], &[-5.0, -6.0], 0.95).unwrap(), 0.0);
    assert_eq!(
        fpr_at_tpr(&[-1.0, -2.0], &[-1.0, -2.0], 0.95).unwrap(),
        1.0
    );
    assert_eq!(
        fpr_at_tpr(&[-1.0, -2.0, -3.0, -4.0], &[-2.5, -10.0], 0.95).unwrap(),
        0.5
    );
    assert_eq!(auroc(&[1.0, 2.0], &[-1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.5);
    assert_eq!(auroc(&[3.0, 2.0], &[1.0, 2.5]).unwrap(), 0.75);

    // Brute-force pairwise counter on 200 random score sets, exact match.
    let mut rng = SplitMix64::new(505);
    for _ in 0..200 {
        let n_id = 1 + rng.next_below(50);
        let n_ood = 1 + rng.next_below(50);
        let id: Vec<f64> = (0..n_id)
            .map(|_| (rng.next_below(16) as f64) * 0.125 - 1.0)
            .collect();
        let ood: Vec<f64> = (0..n_ood)
            .map(|_| (rng.next_below(16) as f64) * 0.125 - 1.25)
            .collect();
        let fast = auroc(&id, &ood).unwrap();
        let brute = brute_force_auroc(&id, &ood);
        assert_eq!(fast.to_bits(), brute.to_bits());
    }
    pass(5, "metric oracles, exact");
}

#[test]
fn criterion_06_knn_oracle() {
    let mut rng = SplitMix64::new(606);
    for _ in 0..100 {
        let n = 1 + rng.next_below(200);
        let dim = 1 + rng.next_below(16);
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0) + 0.13).collect())
            .collect();
        let index = match build_index(&feats) {
            Ok(i) => i,
            Err(_) => continue,
        };
        let query: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0) + 0.13).collect();
        let k = 1 + rng.next_below(n);
        let got = knn_score(&index, &query, k).unwrap();
        let expected = full_sort_knn(&feats, &query, k);
        assert_eq!(got.to_bits(), expected.to_bits());

        // Scale invariance, bit for bit (power-of-two factors are exact).
        for c in [0.5, 4.0, 1024.0] {
            let scaled: Vec<f64> = query.iter().map(|x| x * c).collect();
            let s = knn_score(&index, &scaled, k).unwrap();
            assert_eq!(got.to_bits(), s.to_bits());
        }
    }
    pass(6, "knn full-sort oracle + scale invariance");
}

/// The seeded end-to-end benchmark shared by criteria 7 through 10.
struct BenchmarkRun {
    model: PrismModel,
    log: TrainLog,
    id_test_accuracy: f64,
    auroc: f64,
    fpr_at_95: f64,
    reg_mean_id: f64,
    reg_mean_ood: f64,
    checkpoint_bytes: Vec<u8>,
    fit_seconds: f64,
}

fn benchmark_synth_config() -> SynthConfig {
    SynthConfig {
        classes: 4,
        feature_dim: 16,
        n_per_class: 500,
        seed: 7,
        ..SynthConfig::default()
    }
}

fn benchmark_train_config(lambda: f64, pseudo_labels: usize) -> TrainConfig {
    TrainConfig {
        lambda,
        pseudo_labels,
        classes: 4,
        epochs: 50,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn run_benchmark(lambda: f64, pseudo_labels: usize) -> BenchmarkRun {
    let (train, test_id, test_ood) = gen_synthetic(&benchmark_synth_config()).unwrap();
    let config = benchmark_train_config(lambda, pseudo_labels);

    let t0 = Instant::now();
    let (model, log) = fit(&train, &config).unwrap();
    let fit_seconds = t0.elapsed().as_secs_f64();

    let embed = |ds: &Dataset| -> Vec<Vec<f64>> {
        (0..ds.len())
            .map(|i| model.encode(ds.sample(i)).unwrap())
            .collect()
    };
    let index = build_index(&embed(&train)).unwrap();
    let k = 10;
    let score_set = |ds: &Dataset| -> Vec<f64> {
        embed(ds)
            .iter()
            .map(|h| knn_score(&index, h, k).unwrap())
            .collect()
    };
    let id_scores = score_set(&test_id);
    let ood_scores = score_set(&test_ood);

    let mut correct = 0;
    for i in 0..test_id.len() {
        if model.predict(test_id.sample(i)).unwrap() as i64 == test_id.labels()[i] {
            correct += 1;
        }
    }
    let id_test_accuracy = correct as f64 / test_id.len() as f64;

    // Per-sample regularization terms on both test splits.
    let basis = build_basis(&model.confusion_matrices().unwrap(), config.inversion).unwrap();
    let reg_mean = |ds: &Dataset| -> f64 {
        let mut total = 0.0;
        for i in 0..ds.len() {
            let out = model.forward(ds.sample(i)).unwrap();
            total += basis.residual_ratio(&out.p).unwrap();
        }
        total / ds.len() as f64
    };

    BenchmarkRun {
        id_test_accuracy,
        auroc: auroc(&id_scores, &ood_scores).unwrap(),
        fpr_at_95: fpr_at_tpr(&id_scores, &ood_scores, 0.95).unwrap(),
        reg_mean_id: reg_mean(&test_id),
        reg_mean_ood: reg_mean(&test_ood),
        checkpoint_bytes: prism_core::data::container::encode_tensors(
            &prism_core::data::checkpoint_tensors(&model),
        ),
        model,
        log,
        fit_seconds,
    }
}

fn baseline() -> &'static BenchmarkRun {
    static BASELINE: OnceLock<BenchmarkRun> = OnceLock::new();
    BASELINE.get_or_init(|| run_benchmark(0.05, 3))
}

#[test]
fn criterion_07_synthetic_benchmark() {
    let run = baseline();
    assert!(
        run.id_test_accuracy >= 0.95,
        "id test accuracy {}",
        run.id_test_accuracy
    );
    assert!(run.auroc >= 0.95, "auroc {}", run.auroc);
    assert!(run.fpr_at_95 <= 0.25, "fpr@95 {}", run.fpr_at_95);
    assert!(
        run.fit_seconds < 120.0,
        "training took {} s",
        run.fit_seconds
    );
    println!(
        "criterion  7 benchmark: acc={:.4} auroc={:.4} fpr95={:.4} fit={:.1}s",
        run.id_test_accuracy, run.auroc, run.fpr_at_95, run.fit_seconds
    );
    pass(7, "seeded synthetic end-to-end benchmark");
}

#[test]
fn criterion_08_regularization_separability() {
    let run = baseline();
    assert!(
        run.reg_mean_ood > run.reg_mean_id,
        "ood reg mean {} <= id reg mean {}",
        run.reg_mean_ood,
        run.reg_mean_id
    );
    println!(
        "criterion  8 reg means: id={:.6} ood={:.6}",
        run.reg_mean_id, run.reg_mean_ood
    );
    pass(8, "regularization separates ID from OOD");
}

#[test]
fn criterion_09_ablation_trends() {
    let with_reg = baseline();
    let without_reg = run_benchmark(0.0, 3);
    assert!(
        with_reg.fpr_at_95 <= without_reg.fpr_at_95,
        "fpr with reg {} > without {}",
        with_reg.fpr_at_95,
        without_reg.fpr_at_95
    );

    let single = run_benchmark(0.05, 1);
    for record in &single.log.records {
        assert_eq!(record.reg, 0.0, "reg nonzero with M = 1");
    }
    println!(
        "criterion  9 fpr: lambda=0.05 -> {:.4}, lambda=0 -> {:.4}",
        with_reg.fpr_at_95, without_reg.fpr_at_95
    );
    pass(9, "lambda and M ablation trends");
}

#[test]
fn criterion_10_determinism() {
    let first = baseline();
    let second = run_benchmark(0.05, 3);
    assert_eq!(
        first.checkpoint_bytes, second.checkpoint_bytes,
        "checkpoint bytes differ between identical runs"
    );
    assert_eq!(first.model, second.model);
    pass(10, "byte-identical checkpoint reproduction");
}

/// Independent least-squares oracle (normal equations, local solver).
#[allow(clippy::needless_range_loop)]
fn least_squares_residual(w: &Matrix, p: &[f64]) -> Vec<f64> {
    let k = w.cols();
    let gram = w.transpose().matmul(w);
    let rhs = w.matvec_t(p);
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| gram[(i, j)]).collect();
            row.push(rhs[i]);
            row
        })
        .collect();
    for col in 0..k {
        let pivot_row = (col..k)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        a.swap(col, pivot_row);
        let pivot = a[col][col];
        for j in col..=k {
            a[col][j] /= pivot;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                for j in col..=k {
                    a[r][j] -= f * a[col][j];
                }
            }
        }
    }
    let c: Vec<f64> = (0..k).map(|i| a[i][k]).collect();
    let wc = w.matvec(&c);
    p.iter().zip(&wc).map(|(x, y)| x - y).collect()
}

/// O(n^2) AUROC with the half-tie convention.
fn brute_force_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut greater: u64 = 0;
    let mut ties: u64 = 0;
    for &a in id {
        for &b in ood {
            if a > b {
                greater += 1;
            } else if a == b {
                ties += 1;
            }
        }
    }
    let pairs = (id.len() as u64) * (ood.len() as u64);
    (2 * greater + ties) as f64 / (2 * pairs) as f64
}

/// Full-sort kNN reference, normalizing independently of the index path.
fn full_sort_knn(features: &[Vec<f64>], query: &[f64], k: usize) -> f64 {
    let qn = norm2(query);
    let q: Vec<f64> = query.iter().map(|v| v / qn).collect();
    let mut all: Vec<(f64, usize)> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let fnorm = norm2(f);
            let d = f
                .iter()
                .zip(&q)
                .map(|(a, b)| (a / fnorm - b) * (a / fnorm - b))
                .sum::<f64>();
            (d, i)
        })
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    -all[k - 1].0.sqrt()
}
