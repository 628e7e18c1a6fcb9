//! Invariants over randomly drawn configs.

use frugal::bayesopt::{random_sample, ArchDecoder, TrainingDecoder};
use frugal::config::encoding::decode_config;
use frugal::config::{Arch, Bounds, Config, InputShape, MlpArch, NetworkPlan, ProblemKind, ProblemShape, SearchSpace};
use frugal::evaluators::count_params;
use frugal::evaluators::datasets::blobs;
use frugal::evaluators::mlp::train;
use frugal::evaluators::protocol::WireConfig;
use frugal::kernel::{config_similarity, covariance_matrix, min_eigenvalue, KernelSpec};
use frugal::pipeline::Presets;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image() -> ProblemShape {
    ProblemShape { input: InputShape::Image { height: 32, width: 32, channels: 3 }, classes: 10 }
}

fn flat() -> ProblemShape {
    ProblemShape { input: InputShape::Flat { features: 784 }, classes: 10 }
}

fn draw(kind: ProblemKind, n: usize, seed: u64) -> Vec<Config> {
    let presets = Presets::default();
    let shape = if kind == ProblemKind::Cnn { image() } else { flat() };
    let decoder = ArchDecoder::new(kind, Bounds::default(), move |w| presets.complete(kind, w, &shape));
    random_sample(&decoder, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn kind_strategy() -> impl Strategy<Value = ProblemKind> {
    prop_oneof![Just(ProblemKind::Cnn), Just(ProblemKind::Mlp)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_is_symmetric_bounded_and_reflexive(kind in kind_strategy(), seed in any::<u64>()) {
        let spec = KernelSpec::from_space(&SearchSpace::architecture(kind, Bounds::default())).unwrap();
        let c = draw(kind, 2, seed);
        let ab = config_similarity(&c[0], &c[1], &spec).unwrap();
        prop_assert_eq!(ab, config_similarity(&c[1], &c[0], &spec).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(config_similarity(&c[0], &c[0], &spec).unwrap(), 1.0);
    }

    #[test]
    fn noisy_covariance_is_positive_definite(kind in kind_strategy(), n in 2usize..25, seed in any::<u64>()) {
        let spec = KernelSpec::from_space(&SearchSpace::architecture(kind, Bounds::default())).unwrap();
        let k = covariance_matrix(&draw(kind, n, seed), &spec, 1e-4).unwrap();
        prop_assert!(min_eigenvalue(&k) > 0.0);
    }

    #[test]
    fn training_configs_stay_in_bounds(seed in any::<u64>()) {
        let bounds = Bounds::default();
        let arch = Arch::Mlp(MlpArch { hidden: vec![10], drop_prob: 0.0 });
        let decoder = TrainingDecoder::new(bounds.training.clone(), arch);
        for c in random_sample(&decoder, 8, &mut ChaCha8Rng::seed_from_u64(seed)) {
            let log_eta = c.training.eta.log10();
            prop_assert!((-5.0..=-1.0).contains(&log_eta));
            prop_assert!(c.training.lambda == 0.0 || (-6.0..=-3.0).contains(&c.training.lambda.log10()));
            prop_assert!((32..=512).contains(&c.training.batch_size));
        }
    }

    #[test]
    fn text_and_wire_encodings_round_trip(kind in kind_strategy(), seed in any::<u64>()) {
        for c in draw(kind, 4, seed) {
            prop_assert_eq!(&decode_config(&c.encode()).unwrap(), &c);
            prop_assert_eq!(&WireConfig::from_config(&c).to_config().unwrap(), &c);
        }
    }

    #[test]
    fn digest_follows_the_structure(kind in kind_strategy(), seed in any::<u64>()) {
        let shape = if kind == ProblemKind::Cnn { image() } else { flat() };
        let c = draw(kind, 2, seed);
        let a = NetworkPlan::build(&c[0].arch, &shape);
        let b = NetworkPlan::build(&c[1].arch, &shape);
        prop_assert_eq!(a.digest(), NetworkPlan::build(&c[0].arch, &shape).digest());
        prop_assert_eq!(a.param_count(), count_params(&c[0].arch, &shape));
        if a.describe() != b.describe() {
            prop_assert_ne!(a.digest(), b.digest());
        }
    }

    #[test]
    fn parameter_count_matches_the_trainer(
        hidden in proptest::collection::vec(1u32..40, 0..4),
        features in 1u32..12,
        classes in 2u32..6,
    ) {
        let data = blobs(classes, features, 8, 4, 0);
        let arch = MlpArch { hidden, drop_prob: 0.0 };
        let hp = frugal::TrainingHp { eta: 1e-3, lambda: 0.0, batch_size: 4 };
        let report = train(&arch, &hp, &data, 1, 0);
        prop_assert_eq!(report.n_params, count_params(&Arch::Mlp(arch), &data.shape()));
    }
}
