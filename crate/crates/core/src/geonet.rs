//! Geometry-aware association network.
//!
//! Every unordered node pair gets a fixed embedding of its displacement,
//! computed by a network specific to the pair's joint types. Each iteration
//! aggregates a node's incident embeddings, weighted by the previous
//! affinities normalized per row and joint type, into a node feature, then
//! rescores every edge from both end features and the edge embedding. The
//! first iteration starts from all-ones affinities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DetectionGraph;
use crate::layout::{pair_index, Layout};
use crate::math::sigmoid;
use crate::nn::{gemm, Mlp, MlpCache, NamedTensor, Params};

/// Width of edge embeddings and node features.
pub const HIDDEN: usize = 256;
/// Number of refinement iterations.
pub const ITERATIONS: usize = 3;

/// Index of the canonical type pair `(a, b)`, `a <= b`, among `j` types.
pub fn type_pair_index(j: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * j - a * a.saturating_sub(1) / 2 + (b - a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoParams {
    pub num_types: usize,
    pub hidden: usize,
    /// Displacement encoders, one per canonical type pair: `2 -> H -> H`.
    pub edge: Vec<Mlp>,
    /// Node encoders per iteration and per type: `H -> H -> H`.
    pub node: Vec<Vec<Mlp>>,
    /// Affinity heads per iteration: `3H -> H -> 1`.
    pub head: Vec<Mlp>,
}

impl GeoParams {
    pub fn init<R: Rng + ?Sized>(num_types: usize, hidden: usize, iterations: usize, rng: &mut R) -> Self {
        let pairs = num_types * (num_types + 1) / 2;
        let edge = (0..pairs).map(|_| Mlp::init(&[2, hidden, hidden], true, rng)).collect();
        let node = (0..iterations)
            .map(|_| (0..num_types).map(|_| Mlp::init(&[hidden, hidden, hidden], true, rng)).collect())
            .collect();
        let head = (0..iterations).map(|_| Mlp::init(&[3 * hidden, hidden, 1], false, rng)).collect();
        GeoParams { num_types, hidden, edge, node, head }
    }

    pub fn zeros_like(&self) -> Self {
        GeoParams {
            num_types: self.num_types,
            hidden: self.hidden,
            edge: self.edge.iter().map(Mlp::zeros_like).collect(),
            node: self.node.iter().map(|it| it.iter().map(Mlp::zeros_like).collect()).collect(),
            head: self.head.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.head.len()
    }

    fn check_types(&self, graph: &DetectionGraph) -> Result<()> {
        if let Some((&t, _)) = graph.per_type().iter().next_back() {
            if t >= self.num_types {
                let lowest = *graph.per_type().keys().next().unwrap_or(&0);
                return Err(Error::ModelIncompatible(format!(
                    "no edge encoder for joint-type pair ({}, {t}); model has {} types",
                    lowest.min(t),
                    self.num_types
                )));
            }
        }
        Ok(())
    }
}

impl Params for GeoParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        let j = self.num_types;
        for a in 0..j {
            for b in a..j {
                self.edge[type_pair_index(j, a, b)].collect(&format!("{prefix}.edge.{a}-{b}"), out);
            }
        }
        for (l, per_type) in self.node.iter().enumerate() {
            for (t, m) in per_type.iter().enumerate() {
                m.collect(&format!("{prefix}.node.{l}.{t}"), out);
            }
        }
        for (l, m) in self.head.iter().enumerate() {
            m.collect(&format!("{prefix}.head.{l}"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        // `type_pair_index` enumerates pairs in the same order `collect` visits them
        for m in &mut self.edge {
            m.collect_mut(out);
        }
        for per_type in &mut self.node {
            for m in per_type {
                m.collect_mut(out);
            }
        }
        for m in &mut self.head {
            m.collect_mut(out);
        }
    }
}

/// Symmetric `N x N` affinities with the logits they came from. Diagonal
/// entries are zero and carry no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n: usize,
    pub prob: Vec<f64>,
    pub logits: Vec<f64>,
}

impl AffinityMatrix {
    /// All-ones off-diagonal prior.
    pub fn ones(n: usize) -> Self {
        let mut prob = vec![1.0; n * n];
        for i in 0..n {
            prob[i * n + i] = 0.0;
        }
        AffinityMatrix { n, prob, logits: vec![0.0; n * n] }
    }

    /// Builds the dense matrix from per-pair logits.
    pub fn from_pair_logits(n: usize, pair_logits: &[f64]) -> Self {
        let mut prob = vec![0.0; n * n];
        let mut logits = vec![0.0; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let z = pair_logits[pair_index(n, a, b)];
                let p = sigmoid(z);
                for (i, j) in [(a, b), (b, a)] {
                    logits[i * n + j] = z;
                    prob[i * n + j] = p;
                }
            }
        }
        AffinityMatrix { n, prob, logits }
    }

    /// Builds a matrix from probabilities only (logits left at zero).
    pub fn from_probs(n: usize, prob: Vec<f64>) -> Self {
        assert_eq!(prob.len(), n * n);
        AffinityMatrix { n, prob, logits: vec![0.0; n * n] }
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.prob[m * self.n + n]
    }

    pub fn logit(&self, m: usize, n: usize) -> f64 {
        self.logits[m * self.n + n]
    }

    pub(crate) fn pair_probs(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                out.push(self.prob[a * n + b]);
            }
        }
        out
    }

    pub(crate) fn pair_logits(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                out.push(self.logits[a * n + b]);
            }
        }
        out
    }
}

/// Per-row, per-type L1 normalization. Entries of each `(row, type)` group
/// (excluding the diagonal) are divided by their sum; groups summing to zero
/// stay zero.
pub fn normalize_rows_by_type(a: &AffinityMatrix, types: &[usize]) -> Vec<f64> {
    let n = a.n;
    assert_eq!(types.len(), n);
    let mut out = vec![0.0; n * n];
    for m in 0..n {
        let mut sums: alloc::collections::BTreeMap<usize, f64> = alloc::collections::BTreeMap::new();
        for k in (0..n).filter(|&k| k != m) {
            *sums.entry(types[k]).or_insert(0.0) += a.get(m, k);
        }
        for k in (0..n).filter(|&k| k != m) {
            let s = sums[&types[k]];
            if s > 0.0 {
                out[m * n + k] = a.get(m, k) / s;
            }
        }
    }
    out
}

/// Edge embeddings, one per unordered pair and shared by both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEmbeddings {
    pub n: usize,
    pub dim: usize,
    /// Row `pair_index(n, a, b)` holds the embedding of `{a, b}`.
    pub data: Vec<f64>,
}

impl EdgeEmbeddings {
    pub fn get(&self, m: usize, n: usize) -> &[f64] {
        let p = pair_index(self.n, m, n);
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn num_pairs(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }
}

struct EdgeGroup {
    param: usize,
    pairs: Vec<usize>,
    input: Vec<f64>,
    cache: MlpCache,
}

pub(crate) struct EdgeTape {
    groups: Vec<EdgeGroup>,
}

fn embed(layout: &Layout, graph: &DetectionGraph, params: &GeoParams) -> Result<(EdgeEmbeddings, EdgeTape)> {
    params.check_types(graph)?;
    let h = params.hidden;
    let j = params.num_types;
    let mut by_param: alloc::collections::BTreeMap<usize, Vec<usize>> = alloc::collections::BTreeMap::new();
    for (p, &(a, b)) in layout.pairs.iter().enumerate() {
        by_param.entry(type_pair_index(j, layout.types[a], layout.types[b])).or_default().push(p);
    }
    let mut data = vec![0.0; layout.num_pairs() * h];
    let mut groups = Vec::with_capacity(by_param.len());
    for (param, pairs) in by_param {
        let mut input = Vec::with_capacity(2 * pairs.len());
        for &p in &pairs {
            let (a, b) = layout.pairs[p];
            // canonical direction: lower (type, id) first
            let (first, second) = if graph.order_key(a) <= graph.order_key(b) { (a, b) } else { (b, a) };
            let (f, s) = (&graph.node(first).keypoint, &graph.node(second).keypoint);
            input.push(f.x - s.x);
            input.push(f.y - s.y);
        }
        let cache = params.edge[param].forward_cached(&input, pairs.len());
        for (r, &p) in pairs.iter().enumerate() {
            data[p * h..(p + 1) * h].copy_from_slice(&cache.output()[r * h..(r + 1) * h]);
        }
        groups.push(EdgeGroup { param, pairs, input, cache });
    }
    Ok((EdgeEmbeddings { n: layout.n, dim: h, data }, EdgeTape { groups }))
}

fn embed_backward(params: &GeoParams, tape: &EdgeTape, demb: &[f64], grad: &mut GeoParams) {
    let h = params.hidden;
    for g in &tape.groups {
        let mut dy = Vec::with_capacity(g.pairs.len() * h);
        for &p in &g.pairs {
            dy.extend_from_slice(&demb[p * h..(p + 1) * h]);
        }
        params.edge[g.param].backward(&g.input, &g.cache, dy, g.pairs.len(), &mut grad.edge[g.param], None);
    }
}

/// Computes all edge embeddings. Pairs are evaluated once, in the direction
/// that puts the lower `(type, id)` node first.
pub fn embed_edges(graph: &DetectionGraph, params: &GeoParams) -> Result<EdgeEmbeddings> {
    let layout = Layout::new(graph);
    embed(&layout, graph, params).map(|(e, _)| e)
}

pub(crate) struct IterTape {
    norm: Vec<f64>,
    sums: Vec<f64>,
    node_groups: Vec<(Vec<usize>, Vec<f64>, MlpCache)>,
    nodes: Vec<f64>,
    hf: Vec<f64>,
    hr: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

/// One refinement step on pair-indexed affinities `prev_prob`.
fn iterate(
    layout: &Layout,
    emb: &EdgeEmbeddings,
    prev_prob: &[f64],
    params: &GeoParams,
    l: usize,
) -> IterTape {
    let n = layout.n;
    let h = params.hidden;
    let np = layout.num_pairs();
    let (norm, sums) = layout.normalize(prev_prob);

    let mut agg = vec![0.0; n * h];
    for m in 0..n {
        let row = &mut agg[m * h..(m + 1) * h];
        for k in 0..n {
            let w = norm[m * n + k];
            if k == m || w == 0.0 {
                continue;
            }
            for (r, e) in row.iter_mut().zip(emb.get(m, k)) {
                *r += w * e;
            }
        }
    }

    let mut nodes = vec![0.0; n * h];
    let mut node_groups = Vec::with_capacity(layout.slots.len());
    for (t, members) in &layout.slots {
        let mut input = Vec::with_capacity(members.len() * h);
        for &i in members {
            input.extend_from_slice(&agg[i * h..(i + 1) * h]);
        }
        let cache = params.node[l][*t].forward_cached(&input, members.len());
        for (r, &i) in members.iter().enumerate() {
            nodes[i * h..(i + 1) * h].copy_from_slice(&cache.output()[r * h..(r + 1) * h]);
        }
        node_groups.push((members.clone(), input, cache));
    }

    // First layer of the head is linear in [node_m, node_n, edge], so split
    // it into per-node and per-pair products.
    let head = &params.head[l];
    let w1 = &head.layers[0];
    let w2 = &head.layers[1];
    let stride = 3 * h;
    let mut p_proj = vec![0.0; n * h];
    let mut q_proj = vec![0.0; n * h];
    gemm(n, h, h, 1.0, &nodes, (h, 1), &w1.weight, (1, stride), 0.0, &mut p_proj, (h, 1));
    gemm(n, h, h, 1.0, &nodes, (h, 1), &w1.weight[h..], (1, stride), 0.0, &mut q_proj, (h, 1));
    let mut e_proj = Vec::with_capacity(np * h);
    for _ in 0..np {
        e_proj.extend_from_slice(&w1.bias);
    }
    gemm(np, h, h, 1.0, &emb.data, (h, 1), &w1.weight[2 * h..], (1, stride), 1.0, &mut e_proj, (h, 1));

    let mut hf = vec![0.0; np * h];
    let mut hr = vec![0.0; np * h];
    let mut logits = vec![0.0; np];
    for (p, &(a, b)) in layout.pairs.iter().enumerate() {
        let e = &e_proj[p * h..(p + 1) * h];
        let (pa, pb) = (&p_proj[a * h..(a + 1) * h], &p_proj[b * h..(b + 1) * h]);
        let (qa, qb) = (&q_proj[a * h..(a + 1) * h], &q_proj[b * h..(b + 1) * h]);
        let mut acc = 0.0;
        for c in 0..h {
            let f = (pa[c] + qb[c] + e[c]).max(0.0);
            let r = (pb[c] + qa[c] + e[c]).max(0.0);
            hf[p * h + c] = f;
            hr[p * h + c] = r;
            acc += w2.weight[c] * (f + r);
        }
        logits[p] = 0.5 * acc + w2.bias[0];
    }
    IterTape { norm, sums, node_groups, nodes, hf, hr, logits }
}

/// Backward of one iteration. `dlogits` is the gradient on this iteration's
/// logits; gradients flow into `demb`, into `dprev_prob` (the previous pair
/// affinities) and into `grad`.
#[allow(clippy::too_many_arguments)]
fn iterate_backward(
    layout: &Layout,
    emb: &EdgeEmbeddings,
    params: &GeoParams,
    l: usize,
    tape: &IterTape,
    dlogits: &[f64],
    demb: &mut [f64],
    dprev_prob: Option<&mut [f64]>,
    grad: &mut GeoParams,
) {
    let n = layout.n;
    let h = params.hidden;
    let np = layout.num_pairs();
    let head = &params.head[l];
    let w1 = &head.layers[0];
    let w2 = &head.layers[1];
    let stride = 3 * h;

    let mut de = vec![0.0; np * h];
    let mut dp = vec![0.0; n * h];
    let mut dq = vec![0.0; n * h];
    {
        let g2 = &mut grad.head[l].layers[1];
        for (p, &(a, b)) in layout.pairs.iter().enumerate() {
            let d = dlogits[p];
            if d == 0.0 {
                continue;
            }
            g2.bias[0] += d;
            for c in 0..h {
                let f = tape.hf[p * h + c];
                let r = tape.hr[p * h + c];
                g2.weight[c] += 0.5 * d * (f + r);
                let dw = 0.5 * d * w2.weight[c];
                let df = if f > 0.0 { dw } else { 0.0 };
                let dr = if r > 0.0 { dw } else { 0.0 };
                de[p * h + c] = df + dr;
                dp[a * h + c] += df;
                dq[b * h + c] += df;
                dp[b * h + c] += dr;
                dq[a * h + c] += dr;
            }
        }
    }
    let g1 = &mut grad.head[l].layers[0];
    for p in 0..np {
        for (gb, d) in g1.bias.iter_mut().zip(&de[p * h..(p + 1) * h]) {
            *gb += d;
        }
    }
    gemm(h, np, h, 1.0, &de, (1, h), &emb.data, (h, 1), 1.0, &mut g1.weight[2 * h..], (stride, 1));
    gemm(h, n, h, 1.0, &dp, (1, h), &tape.nodes, (h, 1), 1.0, &mut g1.weight, (stride, 1));
    gemm(h, n, h, 1.0, &dq, (1, h), &tape.nodes, (h, 1), 1.0, &mut g1.weight[h..], (stride, 1));
    gemm(np, h, h, 1.0, &de, (h, 1), &w1.weight[2 * h..], (stride, 1), 1.0, demb, (h, 1));
    let mut dnodes = vec![0.0; n * h];
    gemm(n, h, h, 1.0, &dp, (h, 1), &w1.weight, (stride, 1), 1.0, &mut dnodes, (h, 1));
    gemm(n, h, h, 1.0, &dq, (h, 1), &w1.weight[h..], (stride, 1), 1.0, &mut dnodes, (h, 1));

    let mut dagg = vec![0.0; n * h];
    for ((t, members), (_, input, cache)) in layout.slots.iter().zip(&tape.node_groups) {
        let mut dy = Vec::with_capacity(members.len() * h);
        for &i in members {
            dy.extend_from_slice(&dnodes[i * h..(i + 1) * h]);
        }
        let mut dx = vec![0.0; members.len() * h];
        params.node[l][*t].backward(input, cache, dy, members.len(), &mut grad.node[l][*t], Some(&mut dx));
        for (r, &i) in members.iter().enumerate() {
            dagg[i * h..(i + 1) * h].copy_from_slice(&dx[r * h..(r + 1) * h]);
        }
    }

    let want_norm = dprev_prob.is_some();
    let mut dnorm = if want_norm { vec![0.0; n * n] } else { Vec::new() };
    for m in 0..n {
        let da = &dagg[m * h..(m + 1) * h];
        for k in 0..n {
            if k == m {
                continue;
            }
            let w = tape.norm[m * n + k];
            let p = layout.pair(m, k);
            if w != 0.0 {
                for (g, d) in demb[p * h..(p + 1) * h].iter_mut().zip(da) {
                    *g += w * d;
                }
            }
            if want_norm {
                let e = &emb.data[p * h..(p + 1) * h];
                dnorm[m * n + k] = da.iter().zip(e).map(|(x, y)| x * y).sum();
            }
        }
    }
    if let Some(dprev) = dprev_prob {
        layout.normalize_backward(&tape.norm, &tape.sums, &dnorm, dprev);
    }
}

/// Forward record of the whole branch, kept for the backward pass.
pub(crate) struct GeoTape {
    pub(crate) edge: EdgeTape,
    pub(crate) emb: EdgeEmbeddings,
    pub(crate) iters: Vec<IterTape>,
}

pub(crate) fn forward_tape(layout: &Layout, graph: &DetectionGraph, params: &GeoParams) -> Result<GeoTape> {
    let (emb, edge) = embed(layout, graph, params)?;
    if emb.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("geometry edge encoder"));
    }
    let mut prob = vec![1.0; layout.num_pairs()];
    let mut iters = Vec::with_capacity(params.iterations());
    for l in 0..params.iterations() {
        let tape = iterate(layout, &emb, &prob, params, l);
        if tape.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("geometry iteration {l}")));
        }
        prob = tape.logits.iter().map(|&z| sigmoid(z)).collect();
        iters.push(tape);
    }
    Ok(GeoTape { edge, emb, iters })
}

/// Backward of the whole branch given gradients on every iteration's pair
/// logits.
pub(crate) fn backward_tape(layout: &Layout, params: &GeoParams, tape: &GeoTape, dlogits: &[Vec<f64>], grad: &mut GeoParams) {
    let np = layout.num_pairs();
    let h = params.hidden;
    let mut demb = vec![0.0; np * h];
    let mut carry = vec![0.0; np];
    for l in (0..tape.iters.len()).rev() {
        let dl: Vec<f64> = dlogits[l].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let mut dprev = vec![0.0; np];
        let prev = if l > 0 { Some(dprev.as_mut_slice()) } else { None };
        iterate_backward(layout, &tape.emb, params, l, &tape.iters[l], &dl, &mut demb, prev, grad);
        if l > 0 {
            // previous affinities are sigmoids of the previous logits
            carry = tape.iters[l - 1]
                .logits
                .iter()
                .zip(&dprev)
                .map(|(&z, &d)| {
                    let s = sigmoid(z);
                    d * s * (1.0 - s)
                })
                .collect();
        }
    }
    embed_backward(params, &tape.edge, &demb, grad);
}

/// Runs iteration `l` from the affinities `prev`, returning the node
/// features (`N x H`, row-major) and the refined affinities.
pub fn geo_iterate(
    graph: &DetectionGraph,
    emb: &EdgeEmbeddings,
    prev: &AffinityMatrix,
    params: &GeoParams,
    l: usize,
) -> Result<(Vec<f64>, AffinityMatrix)> {
    if l >= params.iterations() {
        return Err(Error::InvalidArgument(format!(
            "iteration {l} out of range for {} iterations",
            params.iterations()
        )));
    }
    if prev.n != graph.len() || emb.n != graph.len() || emb.dim != params.hidden {
        return Err(Error::InvalidArgument("affinity or embedding shape does not match graph".into()));
    }
    params.check_types(graph)?;
    let layout = Layout::new(graph);
    let tape = iterate(&layout, emb, &prev.pair_probs(), params, l);
    let a = AffinityMatrix::from_pair_logits(graph.len(), &tape.logits);
    Ok((tape.nodes, a))
}

/// Output of [`geo_forward`]. Graphs with fewer than two nodes have no edges
/// and produce no matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoForward {
    pub matrices: Vec<AffinityMatrix>,
    pub single_node: bool,
}

/// All per-iteration affinity matrices of the geometry branch.
pub fn geo_forward(graph: &DetectionGraph, params: &GeoParams) -> Result<GeoForward> {
    if graph.len() < 2 {
        return Ok(GeoForward { matrices: Vec::new(), single_node: true });
    }
    let layout = Layout::new(graph);
    let tape = forward_tape(&layout, graph, params)?;
    let matrices = tape.iters.iter().map(|t| AffinityMatrix::from_pair_logits(graph.len(), &t.logits)).collect();
    Ok(GeoForward { matrices, single_node: false })
}
