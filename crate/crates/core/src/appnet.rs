//! Appearance branch, branch fusion and the masked edge loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geonet::AffinityMatrix;
use crate::graph::{DetectionGraph, EdgeLabels, Target};
use crate::layout::Layout;
use crate::math::{bce_with_logits, bce_with_logits_grad, sigmoid};
use crate::nn::{gemm, Linear, Mlp, MlpCache, NamedTensor, Params};

/// Number of appearance refinement iterations.
pub const ITERATIONS: usize = 2;
/// Layer widths of the fusion head.
pub const FUSE_WIDTHS: [usize; 6] = [2, 16, 64, 64, 16, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct AppParams {
    pub hidden: usize,
    /// Per-type affine projection of raw appearance vectors: `D -> H`.
    pub input: Vec<Linear>,
    /// Affinity scorers per iteration: `H -> H -> 1`.
    pub affinity: Vec<Mlp>,
    /// Node updaters per iteration: `2H -> H -> H`.
    pub node: Vec<Mlp>,
}

impl AppParams {
    pub fn init<R: Rng + ?Sized>(
        num_types: usize,
        appearance_dim: usize,
        hidden: usize,
        iterations: usize,
        rng: &mut R,
    ) -> Self {
        AppParams {
            hidden,
            input: (0..num_types).map(|_| Linear::init(appearance_dim, hidden, rng)).collect(),
            affinity: (0..iterations).map(|_| Mlp::init(&[hidden, hidden, 1], false, rng)).collect(),
            node: (0..iterations).map(|_| Mlp::init(&[2 * hidden, hidden, hidden], true, rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AppParams {
            hidden: self.hidden,
            input: self.input.iter().map(Linear::zeros_like).collect(),
            affinity: self.affinity.iter().map(Mlp::zeros_like).collect(),
            node: self.node.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.affinity.len()
    }

    pub fn appearance_dim(&self) -> usize {
        self.input.first().map(|l| l.in_dim).unwrap_or(0)
    }
}

impl Params for AppParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        for (t, l) in self.input.iter().enumerate() {
            l.collect(&format!("{prefix}.input.{t}"), out);
        }
        for (l, m) in self.affinity.iter().enumerate() {
            m.collect(&format!("{prefix}.affinity.{l}"), out);
        }
        for (l, m) in self.node.iter().enumerate() {
            m.collect(&format!("{prefix}.node.{l}"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.input {
            l.collect_mut(out);
        }
        for m in &mut self.affinity {
            m.collect_mut(out);
        }
        for m in &mut self.node {
            m.collect_mut(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseParams {
    pub mlp: Mlp,
}

impl FuseParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        FuseParams { mlp: Mlp::init(&FUSE_WIDTHS, false, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        FuseParams { mlp: self.mlp.zeros_like() }
    }
}

impl Params for FuseParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        self.mlp.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.mlp.collect_mut(out);
    }
}

pub(crate) struct AppIterTape {
    input_nodes: Vec<f64>,
    diff: Vec<f64>,
    score_cache: MlpCache,
    pub(crate) logits: Vec<f64>,
    norm: Vec<f64>,
    sums: Vec<f64>,
    node_input: Vec<f64>,
    node_cache: MlpCache,
}

impl AppIterTape {
    fn output_nodes(&self) -> &[f64] {
        self.node_cache.output()
    }
}

fn iterate(layout: &Layout, nodes: &[f64], params: &AppParams, l: usize) -> AppIterTape {
    let n = layout.n;
    let h = params.hidden;
    let np = layout.num_pairs();
    let mut diff = Vec::with_capacity(np * h);
    for &(a, b) in &layout.pairs {
        let (xa, xb) = (&nodes[a * h..(a + 1) * h], &nodes[b * h..(b + 1) * h]);
        diff.extend(xa.iter().zip(xb).map(|(p, q)| (p - q).abs()));
    }
    let score_cache = params.affinity[l].forward_cached(&diff, np);
    let logits = score_cache.output().to_vec();
    let prob: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let (norm, sums) = layout.normalize(&prob);

    let mut node_input = vec![0.0; n * 2 * h];
    // aggregated neighbours in the first half, own features in the second
    gemm(n, n, h, 1.0, &norm, (n, 1), nodes, (h, 1), 0.0, &mut node_input, (2 * h, 1));
    for m in 0..n {
        node_input[m * 2 * h + h..(m + 1) * 2 * h].copy_from_slice(&nodes[m * h..(m + 1) * h]);
    }
    let node_cache = params.node[l].forward_cached(&node_input, n);
    AppIterTape { input_nodes: nodes.to_vec(), diff, score_cache, logits, norm, sums, node_input, node_cache }
}

/// Backward of one iteration; returns the gradient on the input nodes.
fn iterate_backward(
    layout: &Layout,
    params: &AppParams,
    l: usize,
    tape: &AppIterTape,
    dnodes_out: Option<&[f64]>,
    dlogits: &[f64],
    grad: &mut AppParams,
) -> Vec<f64> {
    let n = layout.n;
    let h = params.hidden;
    let np = layout.num_pairs();
    let x = &tape.input_nodes;
    let mut dx = vec![0.0; n * h];
    let mut dlog = dlogits.to_vec();

    if let Some(dout) = dnodes_out {
        let mut dinput = vec![0.0; n * 2 * h];
        params.node[l].backward(&tape.node_input, &tape.node_cache, dout.to_vec(), n, &mut grad.node[l], Some(&mut dinput));
        for m in 0..n {
            for (g, d) in dx[m * h..(m + 1) * h].iter_mut().zip(&dinput[m * 2 * h + h..(m + 1) * 2 * h]) {
                *g += d;
            }
        }
        // agg = norm * x: dx += norm^T dagg, dnorm = dagg x^T
        gemm(n, n, h, 1.0, &tape.norm, (1, n), &dinput, (2 * h, 1), 1.0, &mut dx, (h, 1));
        let mut dnorm = vec![0.0; n * n];
        gemm(n, h, n, 1.0, &dinput, (2 * h, 1), x, (1, h), 0.0, &mut dnorm, (n, 1));
        let mut dprob = vec![0.0; np];
        layout.normalize_backward(&tape.norm, &tape.sums, &dnorm, &mut dprob);
        for ((d, &z), dp) in dlog.iter_mut().zip(&tape.logits).zip(&dprob) {
            let s = sigmoid(z);
            *d += dp * s * (1.0 - s);
        }
    }

    let mut ddiff = vec![0.0; np * h];
    params.affinity[l].backward(&tape.diff, &tape.score_cache, dlog, np, &mut grad.affinity[l], Some(&mut ddiff));
    for (p, &(a, b)) in layout.pairs.iter().enumerate() {
        for c in 0..h {
            let d = x[a * h + c] - x[b * h + c];
            let g = ddiff[p * h + c];
            if d > 0.0 {
                dx[a * h + c] += g;
                dx[b * h + c] -= g;
            } else if d < 0.0 {
                dx[a * h + c] -= g;
                dx[b * h + c] += g;
            }
        }
    }
    dx
}

pub(crate) struct AppTape {
    input_groups: Vec<(usize, Vec<usize>, Vec<f64>)>,
    pub(crate) iters: Vec<AppIterTape>,
}

fn project(layout: &Layout, graph: &DetectionGraph, params: &AppParams) -> Result<(Vec<f64>, Vec<(usize, Vec<usize>, Vec<f64>)>)> {
    let h = params.hidden;
    let d = params.appearance_dim();
    if graph.appearance_dim() != d {
        return Err(Error::ModelIncompatible(format!(
            "appearance dimension {} does not match model input {d}",
            graph.appearance_dim()
        )));
    }
    let mut nodes = vec![0.0; layout.n * h];
    let mut groups = Vec::with_capacity(layout.slots.len());
    for (t, members) in &layout.slots {
        let lin = params
            .input
            .get(*t)
            .ok_or_else(|| Error::ModelIncompatible(format!("no appearance projection for joint type {t}")))?;
        let mut input = Vec::with_capacity(members.len() * d);
        for &i in members {
            input.extend_from_slice(&graph.node(i).appearance);
        }
        let out = lin.forward(&input, members.len());
        for (r, &i) in members.iter().enumerate() {
            nodes[i * h..(i + 1) * h].copy_from_slice(&out[r * h..(r + 1) * h]);
        }
        groups.push((*t, members.clone(), input));
    }
    Ok((nodes, groups))
}

pub(crate) fn forward_tape(layout: &Layout, graph: &DetectionGraph, params: &AppParams) -> Result<AppTape> {
    let (mut nodes, input_groups) = project(layout, graph, params)?;
    let mut iters = Vec::with_capacity(params.iterations());
    for l in 0..params.iterations() {
        let tape = iterate(layout, &nodes, params, l);
        if tape.logits.iter().any(|v| !v.is_finite()) || tape.output_nodes().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("appearance iteration {l}")));
        }
        nodes = tape.output_nodes().to_vec();
        iters.push(tape);
    }
    Ok(AppTape { input_groups, iters })
}

pub(crate) fn backward_tape(layout: &Layout, params: &AppParams, tape: &AppTape, dlogits: &[Vec<f64>], grad: &mut AppParams) {
    let h = params.hidden;
    let mut dnodes: Option<Vec<f64>> = None;
    for l in (0..tape.iters.len()).rev() {
        let dx = iterate_backward(layout, params, l, &tape.iters[l], dnodes.as_deref(), &dlogits[l], grad);
        dnodes = Some(dx);
    }
    let Some(dnodes) = dnodes else { return };
    for (t, members, input) in &tape.input_groups {
        let mut dy = Vec::with_capacity(members.len() * h);
        for &i in members {
            dy.extend_from_slice(&dnodes[i * h..(i + 1) * h]);
        }
        params.input[*t].backward(input, &dy, members.len(), &mut grad.input[*t], None);
    }
}

/// Projects raw appearance vectors into node features, `N x H` row-major.
pub fn initial_nodes(graph: &DetectionGraph, params: &AppParams) -> Result<Vec<f64>> {
    let layout = Layout::new(graph);
    project(&layout, graph, params).map(|(nodes, _)| nodes)
}

/// One appearance iteration: scores every pair from the absolute feature
/// difference, then updates each node from its affinity-weighted neighbours
/// and itself.
pub fn app_iterate(
    graph: &DetectionGraph,
    nodes_prev: &[f64],
    params: &AppParams,
    l: usize,
) -> Result<(AffinityMatrix, Vec<f64>)> {
    if l >= params.iterations() {
        return Err(Error::InvalidArgument(format!(
            "iteration {l} out of range for {} iterations",
            params.iterations()
        )));
    }
    if nodes_prev.len() != graph.len() * params.hidden {
        return Err(Error::ModelIncompatible(format!(
            "expected {} x {} node features, got {} values",
            graph.len(),
            params.hidden,
            nodes_prev.len()
        )));
    }
    let layout = Layout::new(graph);
    let tape = iterate(&layout, nodes_prev, params, l);
    let a = AffinityMatrix::from_pair_logits(graph.len(), &tape.logits);
    Ok((a, tape.output_nodes().to_vec()))
}

pub(crate) fn fuse_pairs(geo: &[f64], app: &[f64], params: &FuseParams) -> (Vec<f64>, MlpCache) {
    let mut input = Vec::with_capacity(2 * geo.len());
    for (g, a) in geo.iter().zip(app) {
        input.push(*g);
        input.push(*a);
    }
    let cache = params.mlp.forward_cached(&input, geo.len());
    (input, cache)
}

/// Returns the gradients on the geometry and appearance logits.
pub(crate) fn fuse_pairs_backward(
    params: &FuseParams,
    input: &[f64],
    cache: &MlpCache,
    dlogits: &[f64],
    grad: &mut FuseParams,
) -> (Vec<f64>, Vec<f64>) {
    let rows = dlogits.len();
    let mut dinput = vec![0.0; rows * 2];
    params.mlp.backward(input, cache, dlogits.to_vec(), rows, &mut grad.mlp, Some(&mut dinput));
    let dg = dinput.iter().step_by(2).copied().collect();
    let da = dinput.iter().skip(1).step_by(2).copied().collect();
    (dg, da)
}

/// Fuses the final-iteration logits of both branches edge by edge.
pub fn fuse(geo_logits: &AffinityMatrix, app_logits: &AffinityMatrix, params: &FuseParams) -> Result<AffinityMatrix> {
    if geo_logits.n != app_logits.n {
        return Err(Error::InvalidArgument(format!(
            "fusion inputs disagree in size: {} vs {}",
            geo_logits.n, app_logits.n
        )));
    }
    let (_, cache) = fuse_pairs(&geo_logits.pair_logits(), &app_logits.pair_logits(), params);
    Ok(AffinityMatrix::from_pair_logits(geo_logits.n, cache.output()))
}

/// Loss split into its three terms. `total = fuse + geo + app`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub geo: f64,
    pub app: f64,
    pub fuse: f64,
    /// Number of supervised unordered edges.
    pub edges: usize,
}

/// Supervised pairs of `labels` as `(pair index, target)`, checking that no
/// unmasked edge is unlabeled.
pub(crate) fn supervised_pairs(layout: &Layout, labels: &EdgeLabels) -> Result<Vec<(usize, f64)>> {
    if labels.len() != layout.n {
        return Err(Error::InvalidArgument(format!(
            "labels cover {} nodes, graph has {}",
            labels.len(),
            layout.n
        )));
    }
    let mut out = Vec::new();
    for (p, &(a, b)) in layout.pairs.iter().enumerate() {
        if !labels.mask(a, b) {
            continue;
        }
        match labels.target(a, b) {
            Target::One => out.push((p, 1.0)),
            Target::Zero => out.push((p, 0.0)),
            Target::Unlabeled => {
                return Err(Error::Consistency(format!("edge ({a}, {b}) is unmasked but unlabeled")));
            }
        }
    }
    Ok(out)
}

/// Sum over supervised edges of the cross-entropy of every branch output;
/// the per-iteration terms of each branch are averaged. Masked edges are
/// skipped entirely. Empty branch lists contribute nothing.
pub fn loss(
    geo: &[AffinityMatrix],
    app: &[AffinityMatrix],
    fused: Option<&AffinityMatrix>,
    labels: &EdgeLabels,
) -> Result<LossBreakdown> {
    let n = labels.len();
    for a in geo.iter().chain(app).chain(fused) {
        if a.n != n {
            return Err(Error::InvalidArgument("affinity matrix size does not match labels".into()));
        }
    }
    let mut out = LossBreakdown::default();
    for m in 0..n {
        for k in m + 1..n {
            if !labels.mask(m, k) {
                continue;
            }
            let y = labels
                .target(m, k)
                .value()
                .ok_or_else(|| Error::Consistency(format!("edge ({m}, {k}) is unmasked but unlabeled")))?;
            out.edges += 1;
            if let Some(f) = fused {
                out.fuse += bce_with_logits(f.logit(m, k), y);
            }
            if !geo.is_empty() {
                out.geo += geo.iter().map(|a| bce_with_logits(a.logit(m, k), y)).sum::<f64>() / geo.len() as f64;
            }
            if !app.is_empty() {
                out.app += app.iter().map(|a| bce_with_logits(a.logit(m, k), y)).sum::<f64>() / app.len() as f64;
            }
        }
    }
    out.total = out.fuse + out.geo + out.app;
    Ok(out)
}

/// Gradient of one branch's averaged term with respect to each pair logit.
pub(crate) fn branch_term(logits: &[f64], supervised: &[(usize, f64)], weight: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for &(p, y) in supervised {
        value += bce_with_logits(logits[p], y);
        grad[p] = weight * bce_with_logits_grad(logits[p], y);
    }
    (value * weight, grad)
}
