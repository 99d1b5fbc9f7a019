use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modens::benchgen::{generate_dataset, GeneratorConfig};
use modens::dist::{default_tol, WeightedMixture};
use modens::ensemble::{
    fit_propensity, predict_propensity, save_model, train_ensemble, train_member, Dataset, Head, MlpParams,
    TrainConfig,
};
use modens::modulate::outcome_interval;
use modens::par::ExecutionMode;
use modens::sensitivity::identity_bounds;

fn config(head: Head, epochs: usize) -> TrainConfig {
    TrainConfig {
        head,
        hidden: vec![8],
        epochs,
        learning_rate: 2e-2,
        members: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn constant_outcomes_recover_the_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_fn((40, 2), |_| rng.random_range(0.0..1.0));
    let t = (0..40).map(|i| (i % 2) as u8).collect();
    let c = 3.5;
    let data = Dataset::new(x.clone(), t, vec![c; 40], None).unwrap();
    let member = train_member(&data, &config(Head::Gaussian, 300), 4).unwrap();
    let model = modens::ensemble::EnsembleModel::new(vec![member], 4).unwrap();
    for arm in [0u8, 1] {
        for comps in model.predict_components_batch(x.view(), arm).unwrap() {
            let loc = comps[0].location();
            assert!((loc - c).abs() <= c.abs() * 0.01 + 0.01, "location {loc}");
        }
    }
}

/// Logistic MLE on separable data ranks every positive above every negative.
#[test]
fn separable_propensity_has_unit_auc() {
    let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0 * 2.0 - 1.0).collect();
    let t: Vec<u8> = xs.iter().map(|&x| u8::from(x > 0.0)).collect();
    let x = Array2::from_shape_vec((20, 1), xs).unwrap();
    let data = Dataset::new(x.clone(), t.clone(), vec![0.0; 20], None).unwrap();
    let p = fit_propensity(&data, &config(Head::Propensity, 500), 3).unwrap();
    let e = predict_propensity(&p, x.view()).unwrap();
    let min_pos = (0..20).filter(|&i| t[i] == 1).map(|i| e[i]).fold(f64::INFINITY, f64::min);
    let max_neg = (0..20).filter(|&i| t[i] == 0).map(|i| e[i]).fold(0.0, f64::max);
    assert!(min_pos > max_neg, "{min_pos} <= {max_neg}");
}

#[test]
fn coin_flip_treatments_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 400;
    let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.0..1.0));
    let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let data = Dataset::new(x, t, vec![0.0; n], None).unwrap();
    let p = fit_propensity(&data, &config(Head::Propensity, 200), 0).unwrap();
    let test = Array2::from_shape_fn((200, 3), |_| rng.random_range(0.0..1.0));
    let e = predict_propensity(&p, test.view()).unwrap();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
    for e1 in e {
        assert_eq!(e1 + (1.0 - e1), 1.0);
    }
    let zero = MlpParams::zeros(Head::Propensity, &[3, 4, 1]).unwrap();
    assert!(predict_propensity(&zero, test.view()).unwrap().iter().all(|&v| v == 0.5));
}

fn small_benchmark() -> modens::benchgen::GeneratedData {
    generate_dataset(
        None,
        &GeneratorConfig {
            n_visible: 4,
            n_hidden: 4,
            n_train: 300,
            n_valid: 100,
            n_test: 100,
            n_features: 16,
            ..GeneratorConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn unit_weight_interval_matches_plain_mixture() {
    let g = small_benchmark();
    let cfg = TrainConfig { members: 4, ..config(Head::Cauchy, 60) };
    let model = train_ensemble(&g.train, &cfg, 2, ExecutionMode::Parallel).unwrap();
    let rows = model.predict_components_batch(g.test.covariates.view(), 1).unwrap();
    for comps in rows.iter().take(20) {
        let tol = default_tol(comps);
        let iv = outcome_interval(comps, &identity_bounds(), 0.1, tol).unwrap();
        let mix = WeightedMixture::uniform(comps.clone()).unwrap();
        assert!((iv.lo - mix.quantile(0.05, tol).unwrap()).abs() <= 2.0 * tol);
        assert!((iv.hi - mix.quantile(0.95, tol).unwrap()).abs() <= 2.0 * tol);
    }
}

#[test]
fn training_is_deterministic_and_mode_independent() {
    let g = small_benchmark();
    let cfg = TrainConfig { members: 3, ..config(Head::Gaussian, 30) };
    let a = train_ensemble(&g.train, &cfg, 5, ExecutionMode::Parallel).unwrap();
    let b = train_ensemble(&g.train, &cfg, 5, ExecutionMode::Sequential).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_model(&a, &pa).unwrap();
    save_model(&b, &pb).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

/// Held-out NLL of each trained member beats its untrained initialization.
#[test]
fn members_improve_held_out_likelihood() {
    let g = small_benchmark();
    let cfg = TrainConfig { members: 16, ..config(Head::Cauchy, 80) };
    let model = train_ensemble(&g.train, &cfg, 0, ExecutionMode::Parallel).unwrap();
    let nll = |comps: &[modens::dist::ComponentDistribution], ys: &[f64]| -> f64 {
        -comps.iter().zip(ys).map(|(c, &y)| c.logpdf(y)).sum::<f64>() / ys.len() as f64
    };
    let valid = &g.valid;
    let mut better = 0;
    for (j, member) in model.members.iter().enumerate() {
        let single = modens::ensemble::EnsembleModel::new(vec![member.clone()], 0).unwrap();
        let mut init = MlpParams::init(Head::Cauchy, &member.layer_sizes(), &mut ChaCha8Rng::seed_from_u64(j as u64)).unwrap();
        init.output = member.output;
        let untrained = modens::ensemble::EnsembleModel::new(vec![init], 0).unwrap();
        let pred = |m: &modens::ensemble::EnsembleModel| -> Vec<_> {
            (0..valid.len())
                .map(|i| {
                    let x: Vec<f64> = valid.row(i).to_vec();
                    m.predict_components(&x, valid.treatments[i]).unwrap()[0]
                })
                .collect()
        };
        if nll(&pred(&single), &valid.outcomes) < nll(&pred(&untrained), &valid.outcomes) {
            better += 1;
        }
    }
    assert!(better >= 15, "{better}/16 members improved");
}
