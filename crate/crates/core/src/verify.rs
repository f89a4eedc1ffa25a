//! Executable checks of the attention stability bound, the existence of
//! separating parameters, the kernel-smoother form of attention, 1-WL colour
//! refinement and permutation equivariance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::erdos_renyi_edges;
use crate::extractors::{ExtractionContext, Extractor, ExtractorKind, GnnKind, GnnLayer, GnnStack};
use crate::graph::{Graph, Permutation};
use crate::model::{bind_constants, Readout, SatConfig, SatModel, Task};
use crate::params::ModelParams;
use crate::posenc::{self, sym_eig, PeKind};
use crate::rng::{derive_seed, normal, seeded, Rng};
use crate::tape::Tape;
use crate::tensor::{l2_norm, Tensor};
use crate::{Error, Result};

/// Largest multiset handled by brute-force matching.
pub const MAX_MATCHING: usize = 8;

/// Calls `visit` with every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    visit(&p);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            p.swap(j, i);
            visit(&p);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn row_dist(a: &Tensor, i: usize, b: &Tensor, j: usize) -> f64 {
    let d: Vec<f64> = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x - y).collect();
    l2_norm(&d)
}

fn check_matching_sizes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::SizeMismatch(a.rows(), b.rows()));
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!("vectors of width {} and {}", a.cols(), b.cols())));
    }
    if a.rows() > MAX_MATCHING {
        return Err(Error::TooLarge { got: a.rows(), max: MAX_MATCHING });
    }
    Ok(())
}

/// Bottleneck matching distance between the row multisets of `a` and `b`:
/// `min over pi of max_w |a_w - b_pi(w)|`.
pub fn matching_metric_d(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_matching_sizes(a, b)?;
    let n = a.rows();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = row_dist(a, i, b, j);
        }
    }
    let mut best = f64::INFINITY;
    for_each_permutation(n, |p| {
        let worst = p.iter().enumerate().fold(0.0f64, |m, (i, &j)| m.max(dist[i * n + j]));
        best = best.min(worst);
    });
    Ok(if n == 0 { 0.0 } else { best })
}

/// Largest singular value, from the top eigenvalue of `A^T A`.
pub fn spectral_norm(a: &Tensor) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let gram = a.transpose().matmul(a)?;
    let (values, _) = sym_eig(&gram)?;
    Ok(libm::sqrt(values.last().copied().unwrap_or(0.0).max(0.0)))
}

/// Single-head attention weights. Rows are inputs: `q = h W_Q + b_Q`,
/// `k = h W_K + b_K`, `f(x) = x W_V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub bq: Option<Tensor>,
    pub bk: Option<Tensor>,
}

impl SingleHead {
    pub fn without_bias(wq: Tensor, wk: Tensor, wv: Tensor) -> Self {
        SingleHead { wq, wk, wv, bq: None, bk: None }
    }

    /// Entries drawn from `N(0, std^2)`; biases when `with_bias`.
    pub fn random(d_h: usize, d_x: usize, d_out: usize, std: f64, with_bias: bool, rng: &mut Rng) -> Self {
        let mut draw = |r: usize, c: usize| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| normal(rng, 0.0, std)).collect()).expect("sized")
        };
        let wq = draw(d_h, d_out);
        let wk = draw(d_h, d_out);
        let wv = draw(d_x, d_out);
        let (bq, bk) = if with_bias { (Some(draw(1, d_out)), Some(draw(1, d_out))) } else { (None, None) };
        SingleHead { wq, wk, wv, bq, bk }
    }

    fn d_out(&self) -> usize {
        self.wq.cols()
    }

    fn project(h: &Tensor, w: &Tensor, b: &Option<Tensor>) -> Result<Tensor> {
        let mut p = h.matmul(w)?;
        if let Some(b) = b {
            for r in 0..p.rows() {
                for (x, y) in p.row_mut(r).iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
        }
        Ok(p)
    }

    /// Attention weights of node `v` over all nodes.
    pub fn weights(&self, h: &Tensor, v: usize) -> Result<Vec<f64>> {
        let q = Self::project(h, &self.wq, &self.bq)?;
        let k = Self::project(h, &self.wk, &self.bk)?;
        let scale = 1.0 / libm::sqrt(self.d_out() as f64);
        let mut z: Vec<f64> =
            (0..h.rows()).map(|w| q.row(v).iter().zip(k.row(w)).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
        crate::tape::softmax_in_place(&mut z);
        Ok(z)
    }

    /// `sum_w softmax(z_v)_w f(x_w)`.
    pub fn attend(&self, h: &Tensor, x: &Tensor, v: usize) -> Result<Vec<f64>> {
        let w = self.weights(h, v)?;
        let fx = x.matmul(&self.wv)?;
        let mut out = vec![0.0; self.d_out()];
        for (r, a) in w.iter().enumerate() {
            for (o, f) in out.iter_mut().zip(fx.row(r)) {
                *o += a * f;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    /// `|SA(v) - SA(v')|`.
    pub lhs: f64,
    /// `C1 (|h_v - h'_v'| + D(H, H')) + C2 D(X, X')`.
    pub rhs: f64,
    /// Same bound with one permutation shared by the `H` and `X` terms,
    /// minimised jointly.
    pub rhs_joint: f64,
    pub c1: f64,
    pub c2: f64,
    pub lip_f: f64,
    pub c_phi: f64,
    /// `max(1, max |x_w|)` over both graphs; scales `C1`.
    pub c_x: f64,
    pub h_dist: f64,
    pub d_hh: f64,
    pub d_xx: f64,
    pub holds: bool,
    pub holds_joint: bool,
}

fn max_row_norm(t: &Tensor) -> f64 {
    (0..t.rows()).map(|r| l2_norm(t.row(r))).fold(0.0, f64::max)
}

/// Evaluates the stability bound for nodes `v` of `(h, x)` and `v2` of
/// `(h2, x2)` under a bias-free single head.
///
/// The value map is `f(x) = x W_V`, so `Lip(f) = |W_V|_2` and
/// `|f(x)| <= Lip(f) c_x`; `C1` carries the extra factor `c_x`.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_bound(
    h: &Tensor,
    x: &Tensor,
    v: usize,
    h2: &Tensor,
    x2: &Tensor,
    v2: usize,
    head: &SingleHead,
    tol: f64,
) -> Result<Theorem1Report> {
    check_matching_sizes(h, h2)?;
    check_matching_sizes(x, x2)?;
    if h.rows() != x.rows() {
        return Err(Error::SizeMismatch(h.rows(), x.rows()));
    }
    let n = h.rows();
    if v >= n || v2 >= n {
        return Err(Error::NodeOutOfRange { index: v.max(v2), num_nodes: n });
    }
    if head.bq.is_some() || head.bk.is_some() {
        return Err(Error::Precondition("the stability bound is stated without attention biases".into()));
    }
    let a = head.attend(h, x, v)?;
    let b = head.attend(h2, x2, v2)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
    let lhs = l2_norm(&diff);
    let lip_f = spectral_norm(&head.wv)?;
    let c_phi = max_row_norm(h).max(max_row_norm(h2));
    let c_x = max_row_norm(x).max(max_row_norm(x2)).max(1.0);
    let d_out = head.d_out() as f64;
    let c1 = libm::sqrt(2.0 / d_out)
        * n as f64
        * lip_f
        * c_x
        * c_phi
        * spectral_norm(&head.wq)?
        * spectral_norm(&head.wk)?;
    let c2 = lip_f;
    let h_dist = row_dist(h, v, h2, v2);
    let d_hh = matching_metric_d(h, h2)?;
    let d_xx = matching_metric_d(x, x2)?;
    let rhs = c1 * (h_dist + d_hh) + c2 * d_xx;
    let mut rhs_joint = f64::INFINITY;
    for_each_permutation(n, |p| {
        let (mut sh, mut sx) = (0.0f64, 0.0f64);
        for (w, &pw) in p.iter().enumerate() {
            sh = sh.max(row_dist(h, w, h2, pw));
            sx = sx.max(row_dist(x, w, x2, pw));
        }
        rhs_joint = rhs_joint.min(c1 * (h_dist + sh) + c2 * sx);
    });
    if n == 0 {
        rhs_joint = 0.0;
    }
    let finite = [lhs, rhs, rhs_joint].iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFinite(format!("lhs {lhs}, rhs {rhs}, joint {rhs_joint}")));
    }
    Ok(Theorem1Report {
        lhs,
        rhs,
        rhs_joint,
        c1,
        c2,
        lip_f,
        c_phi,
        c_x,
        h_dist,
        d_hh,
        d_xx,
        holds: lhs <= rhs + tol,
        holds_joint: lhs <= rhs_joint + tol,
    })
}

/// Extractor outputs `phi(w, G)` for every node of `g`, features as input.
pub fn extract(g: &Graph, extractor: &Extractor, params: &ModelParams) -> Result<Tensor> {
    let ctx = ExtractionContext::new(g, extractor.strategy, extractor.k)?;
    let mut tape = Tape::new();
    let vars = bind_constants(params, &mut tape);
    let x = tape.constant(g.node_feats().clone());
    let h = extractor.apply(&mut tape, &ctx, x, &vars)?;
    Ok(tape.value(h).clone())
}

/// [`theorem1_bound`] with `H` computed by `extractor` on both graphs.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem1(
    g: &Graph,
    g2: &Graph,
    v: usize,
    v2: usize,
    extractor: &Extractor,
    ext_params: &ModelParams,
    head: &SingleHead,
    tol: f64,
) -> Result<Theorem1Report> {
    if g.num_nodes() != g2.num_nodes() {
        return Err(Error::SizeMismatch(g.num_nodes(), g2.num_nodes()));
    }
    if g.num_nodes() > MAX_MATCHING {
        return Err(Error::TooLarge { got: g.num_nodes(), max: MAX_MATCHING });
    }
    let h = extract(g, extractor, ext_params)?;
    let h2 = extract(g2, extractor, ext_params)?;
    theorem1_bound(&h, g.node_feats(), v, &h2, g2.node_feats(), v2, head, tol)
}

fn random_normal_tensor(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| normal(rng, 0.0, std)).collect()).expect("sized")
}

fn random_graph(n: usize, p: f64, feat_dim: usize, rng: &mut Rng) -> Result<Graph> {
    let edges = erdos_renyi_edges(n, p, rng);
    Graph::new(n, &edges, random_normal_tensor(n, feat_dim, 1.0, rng), None)
}

/// Random extractor with weights drawn from `N(0, 0.5^2)`.
fn random_extractor(in_dim: usize, rng: &mut Rng) -> (Extractor, ModelParams) {
    let strategy = if rng.random_bool(0.5) { ExtractorKind::Subtree } else { ExtractorKind::Subgraph };
    let kind = if rng.random_bool(0.5) { GnnKind::Gin } else { GnnKind::Gcn };
    let k = match strategy {
        ExtractorKind::Subtree => rng.random_range(0..=3),
        ExtractorKind::Subgraph => rng.random_range(1..=2),
    };
    let mut params = ModelParams::new();
    let hidden = 4;
    let stack = GnnStack::register(&mut params, "phi", kind, k, in_dim, hidden, None, rng);
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x = normal(rng, 0.0, 0.5);
        }
    }
    let concat_original = rng.random_bool(0.5);
    (Extractor { strategy, k, concat_original, stack }, params)
}

/// Checks the stability bound on `trials` random pairs of Erdős–Rényi
/// graphs with 3 to 7 nodes, random features, extractors and heads. With
/// `same_graph` both sides use the first graph (nodes still drawn
/// independently).
pub fn theorem1_harness(trials: usize, seed: u64, same_graph: bool) -> Result<Vec<Theorem1Report>> {
    let feat_dim = 3;
    (0..trials)
        .map(|t| {
            let mut rng = seeded(derive_seed(seed, t as u64, 0));
            let n = rng.random_range(3..=7);
            let g = random_graph(n, rng.random_range(0.2..0.8), feat_dim, &mut rng)?;
            let g2 = random_graph(n, rng.random_range(0.2..0.8), feat_dim, &mut rng)?;
            let g2 = if same_graph { g.clone() } else { g2 };
            let (extractor, params) = random_extractor(feat_dim, &mut rng);
            let d_h = extractor.output_dim(feat_dim);
            let head = SingleHead::random(d_h, feat_dim, 4, 0.7, false, &mut rng);
            let (v, v2) = (rng.random_range(0..n), rng.random_range(0..n));
            check_theorem1(&g, &g2, v, v2, &extractor, &params, &head, 1e-9)
        })
        .collect()
}

/// Outcome of the separating-parameter search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Outcome {
    pub found: bool,
    /// Draws tried, including the successful one.
    pub draws: usize,
    /// `|SA(v) - SA(v')|` of the witness.
    pub separation: f64,
    pub witness: Option<SingleHead>,
}

/// Searches for attention parameters that separate `v` in `g` from `v2` in
/// `g2`. Features are made distinct by per-node Gaussian noise of scale
/// `noise` (the same noise for both when the graphs are equal); the
/// extractor outputs of `v` and `v2` must differ.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem2_existence(
    g: &Graph,
    g2: &Graph,
    v: usize,
    v2: usize,
    extractor: &Extractor,
    ext_params: &ModelParams,
    n_samples: usize,
    noise: f64,
    seed: u64,
) -> Result<Theorem2Outcome> {
    let mut rng = seeded(seed);
    let jitter = |g: &Graph, rng: &mut Rng| -> Result<Graph> {
        let mut f = g.node_feats().clone();
        for x in f.data_mut() {
            *x += noise * normal(rng, 0.0, 1.0);
        }
        g.with_node_feats(f)
    };
    let gn = jitter(g, &mut rng)?;
    let g2n = if g == g2 { gn.clone() } else { jitter(g2, &mut rng)? };
    let h = extract(&gn, extractor, ext_params)?;
    let h2 = extract(&g2n, extractor, ext_params)?;
    if v >= h.rows() || v2 >= h2.rows() {
        return Err(Error::NodeOutOfRange { index: v.max(v2), num_nodes: h.rows().min(h2.rows()) });
    }
    if row_dist(&h, v, &h2, v2) <= 1e-12 {
        return Err(Error::Precondition("the two nodes have equal subgraph representations".into()));
    }
    let (d_h, d_x) = (h.cols(), gn.feat_dim());
    for draw in 1..=n_samples {
        let head = SingleHead::random(d_h, d_x, 4, 1.0, true, &mut rng);
        let a = head.attend(&h, gn.node_feats(), v)?;
        let b = head.attend(&h2, g2n.node_feats(), v2)?;
        let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        let separation = l2_norm(&diff);
        if separation > 1e-6 {
            return Ok(Theorem2Outcome { found: true, draws: draw, separation, witness: Some(head) });
        }
    }
    Ok(Theorem2Outcome { found: false, draws: n_samples, separation: 0.0, witness: None })
}

/// One-layer GIN with `eps = 0` and identity MLP on scalar features, used
/// as the subgraph extractor of the hexagon/triangles fixture.
pub fn fixture_subgraph_gin(k: usize) -> (Extractor, ModelParams) {
    let mut params = ModelParams::new();
    let stack = GnnStack::register(&mut params, "phi", GnnKind::Gin, 1, 1, 1, None, &mut seeded(0));
    for layer in &stack.layers {
        if let GnnLayer::Gin { w1, w2, .. } = layer {
            *params.get_mut(*w1) = Tensor::scalar(1.0);
            *params.get_mut(*w2) = Tensor::scalar(1.0);
        }
    }
    (Extractor { strategy: ExtractorKind::Subgraph, k, concat_original: false, stack }, params)
}

/// The separating search for node 0 of the hexagon against node 0 of two
/// triangles, with constant unit features and the fixture extractor.
pub fn theorem2_hexagon_vs_triangles(n_samples: usize, seed: u64) -> Result<Theorem2Outcome> {
    let hexagon = Graph::cycle(6);
    let triangles = Graph::cycle(3).disjoint_union(&Graph::cycle(3))?;
    let (extractor, params) = fixture_subgraph_gin(1);
    check_theorem2_existence(&hexagon, &triangles, 0, 0, &extractor, &params, n_samples, 1e-3, seed)
}

/// Compares the matrix form `softmax(Q K^T / sqrt(d)) X W_V` with the
/// per-node kernel smoother `sum_u k(x_v, x_u) f(x_u) / sum_w k(x_v, x_w)`,
/// `k(x, x') = exp(<x W_Q, x' W_K> / sqrt(d))`. Returns the largest deviation.
pub fn kernel_smoother_identity(x: &Tensor, head: &SingleHead) -> Result<f64> {
    let n = x.rows();
    let d = head.d_out() as f64;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wq = tape.constant(head.wq.clone());
    let wk = tape.constant(head.wk.clone());
    let wv = tape.constant(head.wv.clone());
    let q = tape.matmul(xv, wq)?;
    let k = tape.matmul(xv, wk)?;
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / libm::sqrt(d));
    let a = tape.softmax_rows(s);
    let v = tape.matmul(xv, wv)?;
    let out = tape.matmul(a, v)?;
    let matrix = tape.value(out);

    let dot = |u: &[f64], w: &Tensor, row: &[f64], w2: &Tensor| -> f64 {
        let mut total = 0.0;
        for c in 0..w.cols() {
            let a: f64 = u.iter().enumerate().map(|(i, ui)| ui * w.get(i, c)).sum();
            let b: f64 = row.iter().enumerate().map(|(i, ri)| ri * w2.get(i, c)).sum();
            total += a * b;
        }
        total
    };
    let mut worst = 0.0f64;
    for vtx in 0..n {
        let kernel: Vec<f64> =
            (0..n).map(|u| libm::exp(dot(x.row(vtx), &head.wq, x.row(u), &head.wk) / libm::sqrt(d))).collect();
        let z: f64 = kernel.iter().sum();
        for c in 0..head.wv.cols() {
            let mut acc = 0.0;
            for (u, kv) in kernel.iter().enumerate() {
                let f: f64 = x.row(u).iter().enumerate().map(|(i, xi)| xi * head.wv.get(i, c)).sum();
                acc += kv * f;
            }
            worst = worst.max((acc / z - matrix.get(vtx, c)).abs());
        }
    }
    Ok(worst)
}

/// Largest smoother deviation over `instances` random `n x 8` inputs,
/// `n` in `1..=8`.
pub fn kernel_smoother_harness(instances: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for t in 0..instances {
        let mut rng = seeded(derive_seed(seed, t as u64, 0));
        let n = rng.random_range(1..=8);
        let x = random_normal_tensor(n, 8, 1.0, &mut rng);
        let head = SingleHead::random(8, 8, 4, 0.5, false, &mut rng);
        worst = worst.max(kernel_smoother_identity(&x, &head)?);
    }
    Ok(worst)
}

/// 1-WL colour refinement for up to `rounds` rounds, starting from the node
/// feature rows. Colours are dense ids in order of first occurrence.
pub fn wl_refinement(g: &Graph, rounds: usize) -> Vec<usize> {
    let n = g.num_nodes();
    let mut ids: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut colours: Vec<usize> = (0..n)
        .map(|v| {
            let key: Vec<u64> = g.node_feats().row(v).iter().map(|x| x.to_bits()).collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect();
    colours = relabel(&colours);
    for _ in 0..rounds {
        let mut sigs: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        let next: Vec<usize> = (0..n)
            .map(|v| {
                let mut neigh: Vec<usize> = g.neighbors(v).iter().map(|&u| colours[u]).collect();
                neigh.sort_unstable();
                let fresh = sigs.len();
                *sigs.entry((colours[v], neigh)).or_insert(fresh)
            })
            .collect();
        let next = relabel(&next);
        if next == colours {
            break;
        }
        colours = next;
    }
    colours
}

fn relabel(colours: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    colours
        .iter()
        .map(|&c| {
            let fresh = map.len();
            *map.entry(c).or_insert(fresh)
        })
        .collect()
}

/// Whether 1-WL fails to distinguish `a` and `b` (equal colour histograms
/// after refining their disjoint union).
pub fn wl_indistinguishable(a: &Graph, b: &Graph) -> Result<bool> {
    let u = a.disjoint_union(b)?;
    let colours = wl_refinement(&u, u.num_nodes());
    let hist = |cs: &[usize]| {
        let mut h = BTreeMap::new();
        for &c in cs {
            *h.entry(c).or_insert(0usize) += 1;
        }
        h
    };
    let na = a.num_nodes();
    Ok(hist(&colours[..na]) == hist(&colours[na..]))
}

/// Deviations between the model on `g` and on `pi(g)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    /// Max deviation of final node representations after aligning rows.
    pub node: f64,
    /// Max deviation of predictions (rows aligned for node tasks).
    pub prediction: f64,
}

impl EquivarianceReport {
    pub fn max(&self) -> f64 {
        self.node.max(self.prediction)
    }
}

/// Runs the model on `g` and on `g` relabelled by `pi` and compares outputs.
pub fn check_equivariance(
    g: &Graph,
    pi: &Permutation,
    model: &SatModel,
    params: &ModelParams,
) -> Result<EquivarianceReport> {
    if pi.len() != g.num_nodes() {
        return Err(Error::InvalidPermutation(format!("{} entries for {} nodes", pi.len(), g.num_nodes())));
    }
    let run = |graph: &Graph| -> Result<(Tensor, Tensor)> {
        let pg = model.prepare(graph)?;
        let mut tape = Tape::new();
        let vars = bind_constants(params, &mut tape);
        let out = model.forward(&mut tape, &vars, &pg, false, 0)?;
        Ok((tape.value(out.node_repr).clone(), tape.value(out.prediction).clone()))
    };
    let (node_a, pred_a) = run(g)?;
    let (node_b, pred_b) = run(&g.permute(pi)?)?;
    let node = pi.permute_rows(&node_a).max_abs_diff(&node_b);
    let pred_a = if model.cfg.task == Task::NodeClass { pi.permute_rows(&pred_a) } else { pred_a };
    Ok(EquivarianceReport { node, prediction: pred_a.max_abs_diff(&pred_b) })
}

/// One randomly drawn equivariance case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceCase {
    pub config: SatConfig,
    pub num_nodes: usize,
    pub report: EquivarianceReport,
}

/// Random (graph, permutation, config) triples cycling through both
/// extractors, all encodings and all graph readouts. Laplacian cases are
/// redrawn until the encoding is canonical (simple spectrum, unique sign
/// anchors): otherwise eigenvectors are only defined up to rotation within
/// an eigenspace and no labelling-independent choice exists.
pub fn equivariance_harness(cases: usize, seed: u64) -> Result<Vec<EquivarianceCase>> {
    let extractors = [ExtractorKind::Subtree, ExtractorKind::Subgraph];
    let pes = [PeKind::None, PeKind::Rwpe, PeKind::Lappe];
    let readouts = [Readout::Mean, Readout::Sum, Readout::Cls];
    let mut out = Vec::with_capacity(cases);
    for t in 0..cases {
        let mut rng = seeded(derive_seed(seed, t as u64, 0));
        let extractor = extractors[t % 2];
        let pe = pes[(t / 2) % 3];
        let readout = readouts[(t / 6) % 3];
        let pe_dim = if pe == PeKind::None { 0 } else { 4 };
        let min_n = if pe == PeKind::Lappe { 5 } else { 3 };
        let mut attempts = 0;
        let g = loop {
            let n = rng.random_range(min_n..=9);
            let g = random_graph(n, rng.random_range(0.25..0.7), 2, &mut rng)?;
            if pe != PeKind::Lappe || posenc::lap_pe_is_canonical(&g, pe_dim.min(n - 1))? {
                break g;
            }
            attempts += 1;
            if attempts == 10_000 {
                return Err(Error::Precondition("no graph with a canonical Laplacian encoding found".into()));
            }
        };
        let n = g.num_nodes();
        let config = SatConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_heads: 2,
            extractor,
            gnn: if rng.random_bool(0.5) { GnnKind::Gin } else { GnnKind::Gcn },
            k: rng.random_range(1..=3),
            concat_original: rng.random_bool(0.5),
            pe,
            pe_dim,
            readout,
            input_dim: 2,
            ..SatConfig::default()
        };
        let (model, params) = SatModel::new(config.clone(), rng.random())?;
        let pi = Permutation::random(n, &mut rng);
        let report = check_equivariance(&g, &pi, &model, &params)?;
        out.push(EquivarianceCase { config, num_nodes: n, report });
    }
    Ok(out)
}

/// Central-difference gradient check of a full model on one graph: dropout
/// active with a fixed seed, cross-entropy against class 0 for
/// classification, L1 against `1.0` otherwise.
pub fn model_grad_check(cfg: &SatConfig, g: &Graph, seed: u64, eps: f64) -> Result<f64> {
    let (model, params) = SatModel::new(cfg.clone(), seed)?;
    let pg = model.prepare(g)?;
    let target = match cfg.task {
        Task::Regression => crate::data::Target::Scalar(1.0),
        Task::GraphClass => crate::data::Target::Class(0),
        Task::NodeClass => crate::data::Target::NodeClasses((0..g.num_nodes()).map(|v| v % cfg.output_dim).collect()),
    };
    let kind = crate::train::TrainConfig::loss_for(cfg.task);
    crate::gradcheck::grad_check(
        |tape, vars| {
            let out = model.forward(tape, vars, &pg, true, derive_seed(seed, 1, 1))?;
            crate::train::loss(tape, out.prediction, &target, kind)
        },
        &params,
        eps,
    )
}

/// One gradient-check configuration and its worst error over the graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub label: alloc::string::String,
    pub max_rel_error: f64,
}

/// Gradient checks of two-layer models with a virtual readout node over
/// both extractor strategies (k = 2), GIN and GCN, with and without edge
/// features, each on `graphs` random 6-node graphs.
pub fn gradcheck_harness(graphs: usize, seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut out = Vec::new();
    for extractor in [ExtractorKind::Subtree, ExtractorKind::Subgraph] {
        for gnn in [GnnKind::Gin, GnnKind::Gcn] {
            for edge_dim in [0usize, 2] {
                let cfg = SatConfig {
                    num_layers: 2,
                    hidden_dim: 8,
                    num_heads: 2,
                    extractor,
                    gnn,
                    k: 2,
                    concat_original: true,
                    pe: PeKind::Rwpe,
                    pe_dim: 3,
                    readout: Readout::Cls,
                    dropout: 0.1,
                    task: Task::GraphClass,
                    input_dim: 2,
                    edge_dim,
                    output_dim: 3,
                };
                let mut worst = 0.0f64;
                for i in 0..graphs {
                    let mut rng = seeded(derive_seed(seed, i as u64, edge_dim as u64));
                    let mut g = random_graph(6, 0.5, 2, &mut rng)?;
                    if edge_dim > 0 {
                        let ef = random_normal_tensor(g.num_edges(), edge_dim, 1.0, &mut rng);
                        g = Graph::new(6, g.edges(), g.node_feats().clone(), Some(ef))?;
                    }
                    worst = worst.max(model_grad_check(&cfg, &g, derive_seed(seed, i as u64, 7), 1e-6)?);
                }
                let label = format!("{extractor:?}/{gnn:?}/edge_dim={edge_dim}").to_lowercase();
                out.push(GradCheckCase { label, max_rel_error: worst });
            }
        }
    }
    Ok(out)
}
