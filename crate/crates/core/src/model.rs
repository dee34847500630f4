//! The full association model: both branches, fusion, loss and gradients.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::appnet::{self, branch_term, fuse_pairs, fuse_pairs_backward, supervised_pairs, AppParams, FuseParams, LossBreakdown};
use crate::error::{Error, Result};
use crate::geonet::{self, AffinityMatrix, GeoParams};
use crate::graph::{DetectionGraph, EdgeLabels};
use crate::layout::Layout;
use crate::nn::{NamedTensor, Params};
use crate::skeleton::SkeletonSpec;

/// Checkpoint format version understood by this build.
pub const FORMAT_VERSION: u32 = 1;

/// Which parts of the model are trained and produce the final affinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Branches {
    #[default]
    Full,
    GeoOnly,
    AppOnly,
}

impl Branches {
    pub fn uses_geo(self) -> bool {
        matches!(self, Branches::Full | Branches::GeoOnly)
    }

    pub fn uses_app(self) -> bool {
        matches!(self, Branches::Full | Branches::AppOnly)
    }

    pub fn code(self) -> u8 {
        match self {
            Branches::Full => 0,
            Branches::GeoOnly => 1,
            Branches::AppOnly => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Branches::Full),
            1 => Some(Branches::GeoOnly),
            2 => Some(Branches::AppOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Width of edge embeddings, node features and hidden layers.
    pub hidden: usize,
    pub geo_iterations: usize,
    pub app_iterations: usize,
    pub appearance_dim: usize,
    pub branches: Branches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: geonet::HIDDEN,
            geo_iterations: geonet::ITERATIONS,
            app_iterations: appnet::ITERATIONS,
            appearance_dim: 8,
            branches: Branches::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("hidden", self.hidden),
            ("geo_iterations", self.geo_iterations),
            ("app_iterations", self.app_iterations),
            ("appearance_dim", self.appearance_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Every learnable array of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub geo: GeoParams,
    pub app: AppParams,
    pub fuse: FuseParams,
}

impl Weights {
    pub fn zeros_like(&self) -> Self {
        Weights { geo: self.geo.zeros_like(), app: self.app.zeros_like(), fuse: self.fuse.zeros_like() }
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.collect_mut(&mut out);
        out
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

impl Params for Weights {
    fn collect<'a>(&'a self, _prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        self.geo.collect("geo", out);
        self.app.collect("app", out);
        self.fuse.collect("fuse", out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.geo.collect_mut(out);
        self.app.collect_mut(out);
        self.fuse.collect_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub num_types: usize,
    pub weights: Weights,
    pub skeleton_hash: [u8; 32],
    pub version: u32,
}

/// Affinities from every branch for one graph. Branches the model does not
/// use are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub geo: Vec<AffinityMatrix>,
    pub app: Vec<AffinityMatrix>,
    pub fused: Option<AffinityMatrix>,
}

impl ModelOutput {
    /// The affinity the model's configured branches produce: fused, or the
    /// last iteration of the single trained branch.
    pub fn final_affinity(&self) -> Option<&AffinityMatrix> {
        self.fused.as_ref().or(self.geo.last()).or(self.app.last())
    }
}

impl ModelParams {
    /// Freshly initialized model; weights are drawn from `seed`.
    pub fn init(config: ModelConfig, spec: &SkeletonSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let j = spec.num_types();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geo = GeoParams::init(j, config.hidden, config.geo_iterations, &mut rng);
        let app = AppParams::init(j, config.appearance_dim, config.hidden, config.app_iterations, &mut rng);
        let fuse = FuseParams::init(&mut rng);
        Ok(ModelParams {
            config,
            num_types: j,
            weights: Weights { geo, app, fuse },
            skeleton_hash: spec.digest(),
            version: FORMAT_VERSION,
        })
    }

    /// A model with the shapes of `config` and every weight zero.
    pub fn zeroed(config: ModelConfig, spec: &SkeletonSpec) -> Result<Self> {
        let mut m = Self::init(config, spec, 0)?;
        m.weights.fill_zero();
        Ok(m)
    }

    pub fn check_skeleton(&self, spec: &SkeletonSpec) -> Result<()> {
        if spec.digest() != self.skeleton_hash {
            return Err(Error::ModelIncompatible("skeleton does not match the model's skeleton hash".into()));
        }
        Ok(())
    }

    pub fn forward(&self, graph: &DetectionGraph) -> Result<ModelOutput> {
        let n = graph.len();
        if n < 2 {
            return Ok(ModelOutput { geo: Vec::new(), app: Vec::new(), fused: None });
        }
        let layout = Layout::new(graph);
        let tape = self.forward_tape(&layout, graph)?;
        let geo: Vec<AffinityMatrix> = tape
            .geo
            .iter()
            .flat_map(|t| t.iters.iter())
            .map(|it| AffinityMatrix::from_pair_logits(n, &it.logits))
            .collect();
        let app: Vec<AffinityMatrix> = tape
            .app
            .iter()
            .flat_map(|t| t.iters.iter())
            .map(|it| AffinityMatrix::from_pair_logits(n, &it.logits))
            .collect();
        let fused = tape.fuse.as_ref().map(|(_, c)| AffinityMatrix::from_pair_logits(n, c.output()));
        Ok(ModelOutput { geo, app, fused })
    }

    fn forward_tape(&self, layout: &Layout, graph: &DetectionGraph) -> Result<Tape> {
        let w = &self.weights;
        let branches = self.config.branches;
        let geo = if branches.uses_geo() { Some(geonet::forward_tape(layout, graph, &w.geo)?) } else { None };
        let app = if branches.uses_app() { Some(appnet::forward_tape(layout, graph, &w.app)?) } else { None };
        let fuse = match (&geo, &app) {
            (Some(g), Some(a)) => {
                let gl = &g.iters.last().expect("at least one iteration").logits;
                let al = &a.iters.last().expect("at least one iteration").logits;
                let (input, cache) = fuse_pairs(gl, al, &w.fuse);
                if cache.output().iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric("fusion head"));
                }
                Some((input, cache))
            }
            _ => None,
        };
        Ok(Tape { geo, app, fuse })
    }

    /// Loss and exact gradients with respect to every weight.
    pub fn compute_gradients(&self, graph: &DetectionGraph, labels: &EdgeLabels) -> Result<(LossBreakdown, Weights)> {
        let mut grad = self.weights.zeros_like();
        let loss = self.accumulate_gradients(graph, labels, &mut grad)?;
        Ok((loss, grad))
    }

    /// Like [`ModelParams::compute_gradients`] but adds into `grad`.
    pub fn accumulate_gradients(&self, graph: &DetectionGraph, labels: &EdgeLabels, grad: &mut Weights) -> Result<LossBreakdown> {
        let n = graph.len();
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!("labels cover {} nodes, graph has {n}", labels.len())));
        }
        if n < 2 {
            return Ok(LossBreakdown::default());
        }
        let layout = Layout::new(graph);
        let supervised = supervised_pairs(&layout, labels)?;
        if supervised.is_empty() {
            return Ok(LossBreakdown::default());
        }
        let tape = self.forward_tape(&layout, graph)?;
        let w = &self.weights;
        let mut out = LossBreakdown { edges: supervised.len(), ..Default::default() };

        let mut dgeo: Vec<Vec<f64>> = Vec::new();
        if let Some(g) = &tape.geo {
            let k = 1.0 / g.iters.len() as f64;
            for it in &g.iters {
                let (v, d) = branch_term(&it.logits, &supervised, k);
                out.geo += v;
                dgeo.push(d);
            }
        }
        let mut dapp: Vec<Vec<f64>> = Vec::new();
        if let Some(a) = &tape.app {
            let k = 1.0 / a.iters.len() as f64;
            for it in &a.iters {
                let (v, d) = branch_term(&it.logits, &supervised, k);
                out.app += v;
                dapp.push(d);
            }
        }
        if let Some((input, cache)) = &tape.fuse {
            let (v, d) = branch_term(cache.output(), &supervised, 1.0);
            out.fuse = v;
            let (dg, da) = fuse_pairs_backward(&w.fuse, input, cache, &d, &mut grad.fuse);
            for (t, s) in dgeo.last_mut().expect("geo branch present").iter_mut().zip(&dg) {
                *t += s;
            }
            for (t, s) in dapp.last_mut().expect("app branch present").iter_mut().zip(&da) {
                *t += s;
            }
        }
        out.total = out.fuse + out.geo + out.app;
        if !out.total.is_finite() {
            return Err(Error::numeric("loss"));
        }
        if let Some(g) = &tape.geo {
            geonet::backward_tape(&layout, &w.geo, g, &dgeo, &mut grad.geo);
        }
        if let Some(a) = &tape.app {
            appnet::backward_tape(&layout, &w.app, a, &dapp, &mut grad.app);
        }
        Ok(out)
    }

    /// Loss value only, from a plain forward pass.
    pub fn loss(&self, graph: &DetectionGraph, labels: &EdgeLabels) -> Result<LossBreakdown> {
        let out = self.forward(graph)?;
        if out.final_affinity().is_none() {
            return Ok(LossBreakdown::default());
        }
        appnet::loss(&out.geo, &out.app, out.fused.as_ref(), labels)
    }
}

struct Tape {
    geo: Option<geonet::GeoTape>,
    app: Option<appnet::AppTape>,
    fuse: Option<(Vec<f64>, crate::nn::MlpCache)>,
}

/// Named weight groups used for gradient checks and reporting.
pub const WEIGHT_GROUPS: [&str; 7] = [
    "geo.edge",
    "geo.node",
    "geo.head",
    "app.input",
    "app.affinity",
    "app.node",
    "fuse",
];

/// The weight group a tensor name belongs to.
pub fn weight_group(name: &str) -> &'static str {
    WEIGHT_GROUPS
        .iter()
        .find(|g| name.starts_with(*g))
        .copied()
        .unwrap_or("other")
}
