mod common;

use posegroup_core::model::Weights;
use posegroup_core::train::{prepare_sample, train, Adam, AdamConfig, Sample, TrainConfig, Trainer};
use posegroup_core::{sample_scene, Branches, Error, GenConfig, ModelConfig, ModelParams, NoiseConfig, SkeletonSpec};

fn noiseless_two_person() -> GenConfig {
    GenConfig { persons: (2, 2), dropout: 0.0, outlier_rate: 0.0, ..GenConfig::default() }
}

fn samples(cfg: &GenConfig, spec: &SkeletonSpec, noise: &NoiseConfig, seeds: std::ops::Range<u64>) -> Vec<Sample> {
    seeds
        .filter_map(|s| {
            let scene = sample_scene(cfg, spec, s).unwrap();
            prepare_sample(&scene, spec, noise, 0.5, s).unwrap()
        })
        .collect()
}

fn mean_loss(p: &ModelParams, set: &[Sample]) -> f64 {
    set.iter().map(|s| p.loss(&s.graph, &s.labels).unwrap().total).sum::<f64>() / set.len() as f64
}

fn flat(w: &Weights) -> Vec<f64> {
    w.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let spec = SkeletonSpec::generic(2, 0.8).unwrap();
    let config = ModelConfig { hidden: 4, branches: Branches::GeoOnly, ..ModelConfig::default() };
    let mut p = ModelParams::init(config, &spec, 3).unwrap();
    let before = flat(&p.weights);
    let mut grad = p.weights.zeros_like();
    for (i, t) in grad.tensors_mut().into_iter().enumerate() {
        for (k, g) in t.iter_mut().enumerate() {
            *g = if (i + k) % 3 == 0 { 0.0 } else if k % 2 == 0 { 2.5 } else { -1e-3 };
        }
    }
    let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
    let mut adam = Adam::new(cfg, &p.weights);
    assert!(adam.step(&mut p.weights, &grad));
    let g = flat(&grad);
    for ((b, a), g) in before.iter().zip(flat(&p.weights)).zip(g) {
        // m_hat = g and v_hat = g^2 after one step
        let expected = if g == 0.0 { *b } else { b - 0.01 * g / (g.abs() + 1e-8) };
        assert!((a - expected).abs() < 1e-12, "{a} vs {expected}");
    }
}

#[test]
fn adam_leaves_zero_gradient_tensors_untouched() {
    let spec = SkeletonSpec::generic(2, 0.8).unwrap();
    let config = ModelConfig { hidden: 4, branches: Branches::GeoOnly, ..ModelConfig::default() };
    let mut p = ModelParams::init(config, &spec, 3).unwrap();
    let mut adam = Adam::new(AdamConfig::default(), &p.weights);
    let mut grad = p.weights.zeros_like();
    grad.tensors_mut()[0].fill(1.0);
    adam.step(&mut p.weights, &grad);
    let after_one = flat(&p.weights);
    // a later step touching only tensor 1 must not keep moving tensor 0 on stale momentum
    let mut grad = p.weights.zeros_like();
    grad.tensors_mut()[1].fill(1.0);
    adam.step(&mut p.weights, &grad);
    let len0 = p.weights.tensors()[0].data.len();
    assert_eq!(&flat(&p.weights)[..len0], &after_one[..len0]);
}

#[test]
fn noiseless_training_reduces_loss_tenfold_and_settles() {
    let spec = SkeletonSpec::coco17();
    let cfg = noiseless_two_person();
    let noise = NoiseConfig::noiseless();
    let config = ModelConfig { hidden: 32, ..ModelConfig::default() };
    let params = ModelParams::init(config, &spec, 11).unwrap();
    let held_out = samples(&cfg, &spec, &noise, 900_000..900_010);
    let probe = &held_out[0];
    let start = mean_loss(&params, &held_out);

    let tc = TrainConfig { steps: 2000, accumulate: 4, noise: noise.clone(), ..TrainConfig::default() };
    let mut trainer = Trainer::new(params, &tc);
    let mut probe_losses = vec![trainer.params.loss(&probe.graph, &probe.labels).unwrap().total];
    for i in 0..tc.steps * tc.accumulate {
        let scene = sample_scene(&cfg, &spec, i as u64).unwrap();
        let sample = prepare_sample(&scene, &spec, &noise, 0.5, tc.render_seed(i)).unwrap().unwrap();
        trainer.step(&sample.graph, &sample.labels).unwrap();
        if (i + 1) % (100 * tc.accumulate) == 0 {
            probe_losses.push(trainer.params.loss(&probe.graph, &probe.labels).unwrap().total);
        }
    }
    let end = mean_loss(&trainer.params, &held_out);
    assert!(end * 10.0 <= start, "loss {start} -> {end}");

    // probe losses are taken every 100 optimizer steps, so a 500-step window spans 5 entries
    for (i, &l) in probe_losses.iter().enumerate() {
        if let Some(&later) = probe_losses.get(i + 5) {
            assert!(later <= l * 1.05, "probe loss rose from {l} to {later} after step {}", i * 100);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let spec = SkeletonSpec::coco17();
    let cfg = GenConfig::default();
    let config = ModelConfig { hidden: 8, ..ModelConfig::default() };
    let tc = TrainConfig { steps: 30, seed: 5, ..TrainConfig::default() };
    let run = || {
        let p = ModelParams::init(config.clone(), &spec, 2).unwrap();
        let scenes = (0..).map(|s| sample_scene(&cfg, &spec, s).unwrap());
        train(p, scenes, &tc, &spec, |_| {}).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(flat(&a.weights), flat(&b.weights));
}

#[test]
fn graph_without_edges_does_not_move_weights() {
    let spec = SkeletonSpec::coco17();
    let config = ModelConfig { hidden: 8, ..ModelConfig::default() };
    let p = ModelParams::init(config, &spec, 2).unwrap();
    let before = flat(&p.weights);
    let graph = posegroup_core::build_graph(
        &posegroup_core::DetectionSet::new(vec![common::det(0, 0.5, 0.5, 3, vec![0.0; 8])], 8).unwrap(),
    )
    .unwrap();
    let labels = posegroup_core::EdgeLabels::new_masked(1);
    let mut trainer = Trainer::new(p, &TrainConfig::default());
    for _ in 0..3 {
        let loss = trainer.step(&graph, &labels).unwrap();
        assert_eq!(loss.total, 0.0);
    }
    assert_eq!(flat(&trainer.params.weights), before);
}

#[test]
fn geometry_only_training_leaves_other_branches_alone() {
    let spec = SkeletonSpec::coco17();
    let config = ModelConfig { hidden: 8, branches: Branches::GeoOnly, ..ModelConfig::default() };
    let p = ModelParams::init(config, &spec, 2).unwrap();
    let (app, fuse) = (p.weights.app.clone(), p.weights.fuse.clone());
    let tc = TrainConfig { steps: 10, ..TrainConfig::default() };
    let scenes = (0..).map(|s| sample_scene(&GenConfig::default(), &spec, s).unwrap());
    let (trained, _) = train(p, scenes, &tc, &spec, |_| {}).unwrap();
    assert_eq!(trained.weights.app, app);
    assert_eq!(trained.weights.fuse, fuse);
}

#[test]
fn train_reports_failing_step() {
    let spec = SkeletonSpec::coco17();
    let p = ModelParams::init(ModelConfig { hidden: 4, ..ModelConfig::default() }, &spec, 0).unwrap();
    let tc = TrainConfig { steps: 5, ..TrainConfig::default() };
    let scenes = (0..3).map(|s| sample_scene(&GenConfig::default(), &spec, s).unwrap());
    let err = train(p, scenes, &tc, &spec, |_| {}).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");

    let bad = TrainConfig { steps: 0, ..TrainConfig::default() };
    let p = ModelParams::init(ModelConfig { hidden: 4, ..ModelConfig::default() }, &spec, 0).unwrap();
    assert!(matches!(train(p, std::iter::empty(), &bad, &spec, |_| {}), Err(Error::Config { .. })));
}
