use kneeassist::grf_net::{
    build_windows, train, GrfNet, Label, NetParams, NetShape, Segment, Standardizer, TrainConfig, WindowSet,
};
use kneeassist::sim::imu::CHANNELS;
use kneeassist::sim::trial::GrfPredictor;
use kneeassist::Terrain;
use ndarray::Array3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> NetShape {
    NetShape { inputs: CHANNELS, hidden: 8, mlp_hidden: 16, fused: 8 }
}

fn net(seed: u64) -> NetParams {
    NetParams::init(small(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn wavy(n: usize, phase: f64) -> Vec<[f64; CHANNELS]> {
    (0..n).map(|i| std::array::from_fn(|c| (0.2 * i as f64 + phase + 0.7 * c as f64).sin())).collect()
}

fn noisy_set() -> WindowSet {
    let segs: Vec<Segment> = [(Terrain::Solid, 0.0), (Terrain::Sand, 1.3)]
        .into_iter()
        .map(|(terrain, phase)| {
            let imu = wavy(160, phase);
            let labels = imu
                .iter()
                .enumerate()
                .map(|(i, r)| Label {
                    fx_norm: 0.1 * r[3] + 0.05 * ((i * 7919) % 13) as f64 / 13.0,
                    fz_norm: 0.8 * r[0].abs(),
                    terrain,
                    stance: r[0] > -0.3,
                })
                .collect();
            Segment { imu, labels }
        })
        .collect();
    build_windows(&segs, 4, 1, &Standardizer::identity()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_lipschitz_in_each_input(
        seed in 0u64..1000,
        t in 0usize..4,
        c in 0usize..CHANNELS,
        eps in 1e-7f64..1e-3,
    ) {
        let p = net(seed);
        let base = Array3::from_shape_fn((1, 4, CHANNELS), |(_, i, k)| (0.3 * i as f64 - 0.2 * k as f64).cos());
        let mut moved = base.clone();
        moved[(0, t, c)] += eps;
        let a = p.forward_batch(&base.view()).unwrap().outputs;
        let b = p.forward_batch(&moved.view()).unwrap().outputs;
        let change = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Weights are bounded by initialization, so the local gain is too.
        prop_assert!(change <= 50.0 * eps, "output moved {} for input step {}", change, eps);
    }

    #[test]
    fn terrain_probability_is_a_probability(seed in 0u64..1000, scale in 0.0f64..50.0) {
        let g = GrfNet::new(net(seed), Standardizer::identity(), 4).unwrap();
        let window: Vec<[f64; CHANNELS]> = wavy(4, seed as f64).iter().map(|r| r.map(|v| v * scale)).collect();
        let est = g.predict(&window).unwrap();
        prop_assert!((0.0..=1.0).contains(&est.terrain_prob));
        prop_assert!(est.fx_norm.is_finite() && est.fz_norm.is_finite());
    }

    #[test]
    fn standardized_columns_have_zero_mean_and_unit_spread(
        rows in proptest::collection::vec(proptest::array::uniform9(-100.0f64..100.0), 3..40),
    ) {
        let s = Standardizer::fit(rows.iter()).unwrap();
        for c in 0..CHANNELS {
            let z: Vec<f64> = rows.iter().map(|r| s.apply(c, r[c])).collect();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            if s.std[c] > 1e-12 {
                let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
                prop_assert!((var - 1.0).abs() < 1e-9, "population variance {}", var);
            }
        }
    }
}

#[test]
fn kept_model_has_the_lowest_validation_loss_seen() {
    let set = noisy_set();
    for (seed, patience) in [(1, 2), (2, 4)] {
        let cfg = TrainConfig { max_epochs: 40, patience, lr: 2e-2, batch: 16, seed, ..Default::default() };
        let (_, rep) = train(net(seed), &set, &cfg).unwrap();
        let after_best = rep.epochs.iter().filter(|e| e.epoch > rep.best_epoch);
        for e in after_best {
            assert!(rep.best_val_loss <= e.val_loss, "epoch {} beat the kept model", e.epoch);
        }
        if rep.stopped_early {
            assert_eq!(rep.epochs.len() - rep.best_epoch, patience + 1);
        }
    }
}

#[test]
fn saved_checkpoint_predicts_identically() {
    let set = noisy_set();
    let cfg = TrainConfig { max_epochs: 3, batch: 32, ..Default::default() };
    let (p, _) = train(net(9), &set, &cfg).unwrap();
    let g = GrfNet::new(p, Standardizer::identity(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    g.save(&path).unwrap();
    let back = GrfNet::load(&path).unwrap();
    assert_eq!(back, g);
    let window = wavy(4, 0.4);
    assert_eq!(back.predict(&window).unwrap(), g.predict(&window).unwrap());
}
