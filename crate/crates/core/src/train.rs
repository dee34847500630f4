//! Single-graph training with Adam.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::appnet::LossBreakdown;
use crate::error::{Error, Result};
use crate::graph::{assign_detections, build_graph, label_edges, DetectionGraph, EdgeLabels, ASSIGN_THRESHOLD};
use crate::math;
use crate::model::{ModelParams, Weights};
use crate::skeleton::SkeletonSpec;
use crate::synth::{render_detections, NoiseConfig, Scene};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with per-array step counts. Arrays whose gradient is identically
/// zero in a step (unused joint-type pairs, inactive branches) are left
/// untouched, moments included.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, weights: &Weights) -> Self {
        let shapes: Vec<usize> = weights.tensors().iter().map(|t| t.data.len()).collect();
        Adam {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: vec![0; shapes.len()],
        }
    }

    /// Applies one update. Returns `false` if any updated weight is not
    /// finite.
    pub fn step(&mut self, weights: &mut Weights, grad: &Weights) -> bool {
        let c = &self.config;
        let grads = grad.tensors();
        let mut finite = true;
        for (i, (w, g)) in weights.tensors_mut().into_iter().zip(&grads).enumerate() {
            if g.data.iter().all(|&x| x == 0.0) {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as f64;
            let step_size = c.learning_rate / (1.0 - libm::pow(c.beta1, t));
            let inv_bc2 = 1.0 / (1.0 - libm::pow(c.beta2, t));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in w.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= step_size * *m / (math::sqrt(*v * inv_bc2) + c.epsilon);
                finite &= w.is_finite();
            }
        }
        finite
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    /// Graphs whose gradients are summed before one optimizer step.
    pub accumulate: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub assign_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            adam: AdamConfig::default(),
            accumulate: 1,
            seed: 0,
            noise: NoiseConfig::default(),
            assign_threshold: ASSIGN_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::config("adam.learning_rate", "must be positive"));
        }
        if self.accumulate == 0 {
            return Err(Error::config("accumulate", "must be at least 1"));
        }
        self.noise.validate()
    }

    /// Seed used to render detections for scene `step`.
    pub fn render_seed(&self, step: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64 + 1)
    }
}

/// One supervised training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: DetectionGraph,
    pub labels: EdgeLabels,
}

/// Renders detections for a scene and derives the graph and labels.
/// Returns `None` if the scene produced no detections.
pub fn prepare_sample(scene: &Scene, spec: &SkeletonSpec, noise: &NoiseConfig, threshold: f64, seed: u64) -> Result<Option<Sample>> {
    let dets = render_detections(scene, noise, seed)?;
    if dets.is_empty() {
        return Ok(None);
    }
    let assignment = assign_detections(&dets, scene, spec, threshold)?;
    let graph = build_graph(&dets)?;
    let labels = label_edges(&graph, &assignment, scene)?;
    Ok(Some(Sample { graph, labels }))
}

/// Loss history entry for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Incremental trainer; one graph per step.
pub struct Trainer {
    pub params: ModelParams,
    adam: Adam,
    grad: Weights,
    pending_count: usize,
    accumulate: usize,
}

impl Trainer {
    pub fn new(params: ModelParams, config: &TrainConfig) -> Self {
        let adam = Adam::new(config.adam.clone(), &params.weights);
        let grad = params.weights.zeros_like();
        Trainer { params, adam, grad, pending_count: 0, accumulate: config.accumulate.max(1) }
    }

    /// Computes the loss and gradients on one graph and applies an update
    /// once `accumulate` graphs have been seen. Graphs without supervised
    /// edges change nothing.
    pub fn step(&mut self, graph: &DetectionGraph, labels: &EdgeLabels) -> Result<LossBreakdown> {
        let loss = self.params.accumulate_gradients(graph, labels, &mut self.grad)?;
        self.pending_count += 1;
        if self.pending_count >= self.accumulate {
            let finite = self.adam.step(&mut self.params.weights, &self.grad);
            self.pending_count = 0;
            self.grad.fill_zero();
            if !finite {
                return Err(Error::numeric("optimizer update"));
            }
        }
        Ok(loss)
    }
}

/// Trains on `config.steps` scenes from `scenes`, rendering each with a
/// step-derived seed. Returns the final parameters and per-step losses.
pub fn train<I>(
    params: ModelParams,
    scenes: I,
    config: &TrainConfig,
    spec: &SkeletonSpec,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(ModelParams, Vec<StepRecord>)>
where
    I: IntoIterator<Item = Scene>,
{
    config.validate()?;
    params.check_skeleton(spec)?;
    let mut trainer = Trainer::new(params, config);
    let mut history = Vec::with_capacity(config.steps);
    let mut scenes = scenes.into_iter();
    for step in 0..config.steps {
        let scene = scenes.next().ok_or_else(|| {
            Error::InvalidArgument(alloc::format!("dataset ended after {step} of {} scenes", config.steps))
        })?;
        let seed = config.render_seed(step);
        let wrap = |e: Error| Error::TrainStep { step, seed, source: Box::new(e) };
        let loss = match prepare_sample(&scene, spec, &config.noise, config.assign_threshold, seed).map_err(wrap)? {
            Some(sample) => trainer.step(&sample.graph, &sample.labels).map_err(wrap)?,
            None => LossBreakdown::default(),
        };
        let record = StepRecord { step, loss };
        on_step(&record);
        history.push(record);
    }
    Ok((trainer.params, history))
}
