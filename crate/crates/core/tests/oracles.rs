//! Training runs checked against independent reference computations.

use nsvm::data::{gen_ringnorm, gen_separable_2d, Dataset};
use nsvm::feature_maps::{LayerSpec, NetSpec};
use nsvm::kernels::KernelSpec;
use nsvm::models::{ModelVariant, NsvmModel};
use nsvm::optimizer::OptimizerConfig;
use nsvm::training::{train, train_alg0, train_alg1, train_alg2, Algorithm, Branch, FitterConfig, TrainConfig};
use nsvm::NsvmError;

fn mlp(d: usize, out: usize) -> NetSpec {
    NetSpec::new(
        vec![d],
        vec![LayerSpec::dense(d, 8), LayerSpec::Relu, LayerSpec::dense(8, out)],
    )
}

fn frozen() -> Option<OptimizerConfig> {
    Some(OptimizerConfig {
        learning_rate: 0.0,
        momentum: 0.0,
        weight_decay: 0.0,
    })
}

/// With a linear kernel the function lives in feature space as an explicit
/// weight vector, updated as w <- w + y z on every violation.
#[test]
fn linear_kernel_margins_match_explicit_weights() {
    let data = gen_ringnorm(200, 3);
    let mut cfg = TrainConfig::new(Algorithm::SingleSample, 1000, 0.05, KernelSpec::linear(), mlp(20, 5));
    cfg.optimizer = Some(OptimizerConfig {
        learning_rate: 1e-4,
        momentum: 0.5,
        weight_decay: 1e-4,
    });
    let (out, report) = train_alg1(&data, &cfg).unwrap();
    let mut w = vec![0.0; 5];
    for t in 1..=cfg.steps {
        let z = &out.points[t - 1];
        if t >= 2 {
            let dot: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
            let explicit = out.labels[t - 1] * dot / (cfg.lambda * (t - 1) as f64);
            let logged = report.log[t - 1].margin.unwrap();
            assert!((explicit - logged).abs() <= 1e-10 * explicit.abs().max(1.0), "step {t}: {explicit} vs {logged}");
        }
        if out.alphas[t - 1] != 0.0 {
            for (wi, zi) in w.iter_mut().zip(z) {
                *wi += out.labels[t - 1] * zi;
            }
        }
    }
}

#[test]
fn representer_with_identity_reduces_to_pegasos() {
    for seed in 0..5 {
        let data = gen_ringnorm(50, seed);
        let mut base = TrainConfig::new(Algorithm::Pegasos, 400, 0.01, KernelSpec::rbf(0.1), NetSpec::identity(20));
        base.seed = seed;
        let (reference, _) = train_alg0(&data, &base).unwrap();
        let mut cfg = TrainConfig::new(Algorithm::Representer, 400, 0.01, KernelSpec::rbf(0.1), NetSpec::identity(20));
        cfg.seed = seed;
        cfg.optimizer = frozen();
        let (out, _) = train_alg2(&data, &cfg).unwrap();
        let a: Vec<u64> = reference.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = out.alphas.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "seed {seed}");
    }
}

/// A frozen identity map turns the single-sample algorithm into Pegasos
/// with the expansion kept per step instead of per sample.
#[test]
fn frozen_single_sample_matches_pegasos_margins() {
    let data = gen_ringnorm(60, 4);
    let mut base = TrainConfig::new(Algorithm::Pegasos, 300, 0.02, KernelSpec::rbf(0.2), NetSpec::identity(20));
    base.seed = 9;
    let (_, reference) = train_alg0(&data, &base).unwrap();
    let mut cfg = TrainConfig::new(Algorithm::SingleSample, 300, 0.02, KernelSpec::rbf(0.2), NetSpec::identity(20));
    cfg.seed = 9;
    cfg.optimizer = frozen();
    let (_, report) = train_alg1(&data, &cfg).unwrap();
    for (a, b) in reference.log.iter().zip(&report.log).skip(1) {
        let (x, y) = (a.margin.unwrap(), b.margin.unwrap());
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "step {}", a.step);
        assert_eq!(a.branch, b.branch);
    }
}

const MARGIN: f64 = 0.1;

#[test]
fn pegasos_separates_linear_data() {
    let mut perfect = 0;
    for seed in 0..10 {
        let data = gen_separable_2d(40, MARGIN, seed);
        let mut cfg = TrainConfig::new(Algorithm::Pegasos, 5000, 0.01, KernelSpec::linear(), NetSpec::identity(2));
        cfg.seed = seed;
        let (model, _) = train(&data, &cfg).unwrap();
        if model.evaluate(&data).unwrap().accuracy == 1.0 {
            perfect += 1;
        }
    }
    assert!(perfect >= 9, "{perfect} of 10 seeds separated the data");
}

#[test]
fn aligned_features_fit_perfectly() {
    // two tight clusters: the features are already perfectly aligned
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.01;
        inputs.push(vec![2.0 * y + jitter, -y + jitter]);
        labels.push(y);
    }
    let data = Dataset::new(inputs, labels).unwrap();
    let mut cfg = TrainConfig::new(Algorithm::TwoStage, 0, 0.01, KernelSpec::rbf(1.0), NetSpec::identity(2));
    cfg.batch_size = Some(4);
    cfg.fitter = Some(FitterConfig::Pegasos { steps: 2000, lambda: None });
    let (model, _) = train(&data, &cfg).unwrap();
    assert_eq!(model.evaluate(&data).unwrap().accuracy, 1.0);
}

#[test]
fn saved_models_reload_with_identical_decisions() {
    let data = gen_ringnorm(60, 5);
    let dir = tempfile::tempdir().unwrap();
    for id in 0..5u8 {
        let algorithm = Algorithm::try_from(id).unwrap();
        let mut cfg = TrainConfig::new(algorithm, 40, 0.05, KernelSpec::rbf(0.5), mlp(20, 4));
        cfg.batch_size = cfg.batch_size.map(|_| 4);
        let (model, report) = train(&data, &cfg).unwrap();
        assert!(report.log.len() <= cfg.steps);
        let path = dir.path().join(format!("model{id}.json"));
        model.save_path(&path).unwrap();
        let back = NsvmModel::load_path(&path).unwrap();
        assert_eq!(back, model);
        for x in &data.inputs {
            assert_eq!(back.decision(x).unwrap().to_bits(), model.decision(x).unwrap().to_bits());
        }
        let other = match model.variant {
            ModelVariant::Pipeline => ModelVariant::Alg1,
            _ => ModelVariant::Pipeline,
        };
        let err = NsvmModel::load_expecting(std::fs::File::open(&path).unwrap(), other).unwrap_err();
        assert!(matches!(err, NsvmError::VariantMismatch { .. }));
    }
}

#[test]
fn update_branches_agree_with_coefficients() {
    let data = gen_ringnorm(80, 6);
    let mut cfg = TrainConfig::new(Algorithm::SingleSample, 300, 0.01, KernelSpec::rbf(1.0), mlp(20, 4));
    cfg.seed = 2;
    let (out, report) = train_alg1(&data, &cfg).unwrap();
    assert_eq!(report.log[0].branch, Branch::Init);
    assert_eq!(out.alphas[0], 1.0);
    for (rec, a) in report.log.iter().zip(&out.alphas).skip(1) {
        assert_eq!(rec.branch == Branch::Update, *a == 1.0);
        assert_eq!(rec.objective.is_some(), *a == 1.0);
    }
    assert_eq!(report.nonzero_alphas, out.alphas.iter().filter(|&&a| a != 0.0).count());
}
