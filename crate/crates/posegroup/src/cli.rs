use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use posegroup_core::gradcheck::{check_gradients, GradCheckOptions};
use posegroup_core::metrics::Evaluator;
use posegroup_core::partition::{group, retain_min_joints, GroupOptions};
use posegroup_core::synth::{render_detections, sample_scene};
use posegroup_core::train::train;
use posegroup_core::{
    assign_detections, build_graph, label_edges, Branches, DetectionGraph, DetectionSet, EdgeLabels, Keypoint, ModelConfig,
    ModelParams, SkeletonSpec, Target,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{load_skeleton, RunConfig};
use crate::formats::{self, DetectionRecord, ScenePoses};
use crate::{checkpoint, derive_seed, viz, RENDER_STREAM, SCENE_STREAM};

#[derive(Debug, Parser)]
#[command(name = "posegroup", version, about = "Learned keypoint grouping for multi-person pose estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes and their detections.
    Synth(SynthArgs),
    /// Train a model, or write a freshly initialized one.
    Train(TrainArgs),
    /// Group detections into poses.
    Group(GroupArgs),
    /// Score a model on labeled scenes.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw one scene's graph with predicted edges.
    ExportViz(VizArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives scenes.jsonl and detections.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration supplying [scenes], [noise] and the skeleton.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write labels.txt with each scene's edge labels.
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Train on these scenes instead of the generated stream.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Write the initialized model without training.
    #[arg(long)]
    pub init_only: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `coco17` or a skeleton TOML file.
    #[arg(long, default_value = "coco17")]
    pub skeleton: String,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop poses with fewer joints.
    #[arg(long, default_value_t = 1)]
    pub min_joints: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scenes: PathBuf,
    /// Detections matching the scenes; rendered from them when omitted.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Noise settings for rendering.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check this model instead of a fresh one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "coco17")]
    pub skeleton: String,
    #[arg(long, default_value_t = 8)]
    pub nodes: usize,
    /// Joint types of the fresh model's generic skeleton.
    #[arg(long, default_value_t = 4)]
    pub types: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
    /// SVG path; the JSON sidecar goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Group(a) => group_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ExportViz(a) => export_viz(a),
    }
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_model(args: &ModelArgs) -> Result<(ModelParams, SkeletonSpec)> {
    let spec = load_skeleton(&args.skeleton)?;
    let model = checkpoint::load(&args.checkpoint, &spec).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    Ok((model, spec))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = run_config(a.config.as_deref())?;
    let spec = load_skeleton(&cfg.skeleton)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut scenes = Vec::with_capacity(a.scenes);
    let mut dets = Vec::with_capacity(a.scenes);
    let mut labels = String::new();
    for i in 0..a.scenes {
        let scene = sample_scene(&cfg.scenes, &spec, derive_seed(a.seed, SCENE_STREAM, i as u64))?;
        let set = render_detections(&scene, &cfg.noise, derive_seed(a.seed, RENDER_STREAM, i as u64))?;
        if a.labels {
            let l = if set.is_empty() {
                EdgeLabels::new_masked(0)
            } else {
                let asg = assign_detections(&set, &scene, &spec, cfg.train.assign_threshold)?;
                label_edges(&build_graph(&set)?, &asg, &scene)?
            };
            formats::format_labels(i, &l, &mut labels);
        }
        dets.push(DetectionRecord { scene: i, set });
        scenes.push(scene);
    }
    formats::write_jsonl(&a.out.join("scenes.jsonl"), &scenes)?;
    formats::write_jsonl(&a.out.join("detections.jsonl"), &dets)?;
    if a.labels {
        std::fs::write(a.out.join("labels.txt"), labels)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = run_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let spec = load_skeleton(&cfg.skeleton)?;
    let init = ModelParams::init(cfg.model.clone(), &spec, cfg.train.seed)?;
    if a.init_only {
        checkpoint::save(&init, &a.out)?;
        return Ok(());
    }
    let mut history_file = match &a.history {
        Some(p) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
            std::io::Write::write_all(&mut w, format!("{}\n", formats::HISTORY_HEADER).as_bytes())?;
            Some(w)
        }
        None => None,
    };
    let mut io_error = None;
    let on_step = |r: &posegroup_core::train::StepRecord| {
        if let Some(w) = history_file.as_mut() {
            if let Err(e) = std::io::Write::write_all(w, format!("{}\n", formats::history_line(r)).as_bytes()) {
                io_error.get_or_insert(e);
            }
        }
    };
    let (model, _) = match &a.scenes {
        Some(path) => train(init, formats::read_scenes(path)?, &cfg.train, &spec, on_step)?,
        None => {
            let (gen, base) = (cfg.scenes.clone(), cfg.scene_seed);
            let stream = (0u64..).map(|i| sample_scene(&gen, &spec, derive_seed(base, SCENE_STREAM, i)));
            let scenes: Vec<_> = stream.take(cfg.train.steps).collect::<Result<_, _>>()?;
            train(init, scenes, &cfg.train, &spec, on_step)?
        }
    };
    if let Some(e) = io_error {
        return Err(e).context("writing loss history");
    }
    if let Some(mut w) = history_file {
        std::io::Write::flush(&mut w)?;
    }
    checkpoint::save(&model, &a.out)?;
    Ok(())
}

fn affinity_for(model: &ModelParams, graph: &DetectionGraph) -> Result<posegroup_core::geonet::AffinityMatrix> {
    let out = model.forward(graph)?;
    Ok(out.final_affinity().cloned().unwrap_or_else(|| posegroup_core::geonet::AffinityMatrix::ones(graph.len())))
}

fn check_dims(model: &ModelParams, set: &DetectionSet) -> Result<()> {
    if model.config.branches.uses_app() && set.appearance_dim != model.config.appearance_dim {
        bail!(
            "detections carry {}-dimensional appearance, model expects {}",
            set.appearance_dim,
            model.config.appearance_dim
        );
    }
    Ok(())
}

fn group_cmd(a: GroupArgs) -> Result<()> {
    let (model, spec) = load_model(&a.model)?;
    let options = GroupOptions { threshold: a.threshold, ..GroupOptions::default() };
    let mut out = Vec::new();
    for rec in formats::read_detections(&a.detections)? {
        if rec.set.is_empty() {
            out.push(ScenePoses { scene: rec.scene, poses: Vec::new() });
            continue;
        }
        check_dims(&model, &rec.set)?;
        let graph = build_graph(&rec.set)?;
        let mut poses = group(&affinity_for(&model, &graph)?, &graph, &options)?;
        retain_min_joints(&mut poses, a.min_joints);
        out.push(ScenePoses::new(rec.scene, &poses, &graph, &spec)?);
    }
    formats::write_jsonl(&a.out, &out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, spec) = load_model(&a.model)?;
    let cfg = run_config(a.config.as_deref())?;
    let scenes = formats::read_scenes(&a.scenes)?;
    let dets: Vec<DetectionSet> = match &a.detections {
        Some(p) => {
            let recs = formats::read_detections(p)?;
            if recs.len() != scenes.len() || recs.iter().enumerate().any(|(i, r)| r.scene != i) {
                bail!("{} does not list one record per scene in order", p.display());
            }
            recs.into_iter().map(|r| r.set).collect()
        }
        None => scenes
            .iter()
            .enumerate()
            .map(|(i, s)| render_detections(s, &cfg.noise, derive_seed(a.seed, RENDER_STREAM, i as u64)))
            .collect::<Result<_, _>>()?,
    };
    let options = GroupOptions { threshold: a.threshold, ..GroupOptions::default() };
    let mut ev = Evaluator::new();
    for (scene, set) in scenes.iter().zip(&dets) {
        check_dims(&model, set)?;
        ev.add_scene(&model, scene, set, &spec, cfg.train.assign_threshold, &options)?;
    }
    let text = formats::report_json(&ev.report());
    match &a.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let (model, spec) = match &a.checkpoint {
        Some(path) => {
            let spec = load_skeleton(&a.skeleton)?;
            (checkpoint::load(path, &spec)?, spec)
        }
        None => {
            let spec = SkeletonSpec::generic(a.types, posegroup_core::skeleton::DEFAULT_KAPPA)?;
            let config = ModelConfig { hidden: a.hidden, branches: Branches::Full, ..ModelConfig::default() };
            (ModelParams::init(config, &spec, a.seed)?, spec)
        }
    };
    if a.nodes < 2 {
        bail!("--nodes must be at least 2");
    }
    let (graph, labels) = random_problem(a.nodes, spec.num_types(), model.config.appearance_dim, a.seed)?;
    let options = GradCheckOptions { samples: a.samples, seed: a.seed, ..GradCheckOptions::default() };
    let report = check_gradients(&model, &graph, &labels, &options)?;
    let mut failed = Vec::new();
    for r in &report {
        println!(
            "{:<14} {:>3} coords  {:>2} kinks skipped  rel_err {:.3e}  {}",
            r.group,
            r.coordinates,
            r.skipped,
            r.relative_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(r.group.clone());
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

/// Random detections and labels for a gradient check.
pub fn random_problem(n: usize, types: usize, dim: usize, seed: u64) -> Result<(DetectionGraph, EdgeLabels)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dets = (0..n)
        .map(|id| posegroup_core::Detection {
            id,
            keypoint: Keypoint::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0..types)),
            confidence: 1.0,
            appearance: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let graph = build_graph(&DetectionSet::new(dets, dim)?)?;
    let mut labels = EdgeLabels::new_masked(n);
    for m in 0..n {
        for k in m + 1..n {
            let t = if rng.random_bool(0.4) { Target::One } else { Target::Zero };
            labels.set(m, k, t, rng.random_bool(0.8));
        }
    }
    Ok((graph, labels))
}

fn export_viz(a: VizArgs) -> Result<()> {
    let (model, spec) = load_model(&a.model)?;
    let rec = formats::read_detections(&a.detections)?
        .into_iter()
        .find(|r| r.scene == a.scene)
        .with_context(|| format!("scene {} not in {}", a.scene, a.detections.display()))?;
    if rec.set.is_empty() {
        bail!("scene {} has no detections", a.scene);
    }
    check_dims(&model, &rec.set)?;
    let graph = build_graph(&rec.set)?;
    let affinity = affinity_for(&model, &graph)?;
    let poses = group(&affinity, &graph, &GroupOptions { threshold: a.threshold, ..GroupOptions::default() })?;
    let fig = viz::Figure::new(&graph, &affinity, &poses, &spec, a.threshold);
    std::fs::write(&a.out, fig.to_svg()).with_context(|| format!("writing {}", a.out.display()))?;
    let sidecar = a.out.with_extension("json");
    std::fs::write(&sidecar, serde_json::to_string_pretty(&fig)? + "\n")?;
    Ok(())
}
