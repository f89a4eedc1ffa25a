//! Structure extractors: GCN / GIN message passing, and the k-subtree and
//! k-subgraph strategies that turn node features into subgraph
//! representations for the attention kernel.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::params::{ModelParams, ParamId};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    #[default]
    Gin,
}

/// How a node's structural context is summarised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// k rounds of message passing on the whole graph.
    #[default]
    Subtree,
    /// Message passing inside each node's k-hop induced subgraph, sum-pooled.
    Subgraph,
}

/// Directed message-passing structure of one graph.
#[derive(Clone, Debug)]
pub struct Topology {
    num_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    edge: Vec<usize>,
    /// `1 / sqrt((d_src + 1)(d_dst + 1))` per arc, then `1 / (d_v + 1)` per node.
    gcn_coef: Vec<f64>,
    edge_feats: Option<Tensor>,
}

impl Topology {
    pub fn new(g: &Graph) -> Topology {
        let n = g.num_nodes();
        let mut src = Vec::with_capacity(2 * g.num_edges());
        let mut dst = Vec::with_capacity(2 * g.num_edges());
        let mut edge = Vec::with_capacity(2 * g.num_edges());
        for (i, &(u, v)) in g.edges().iter().enumerate() {
            src.extend([u, v]);
            dst.extend([v, u]);
            edge.extend([i, i]);
        }
        let hat = |v: usize| (g.degree(v) + 1) as f64;
        let mut gcn_coef: Vec<f64> =
            src.iter().zip(&dst).map(|(&s, &d)| 1.0 / libm::sqrt(hat(s) * hat(d))).collect();
        gcn_coef.extend((0..n).map(|v| 1.0 / hat(v)));
        Topology { num_nodes: n, src, dst, edge, gcn_coef, edge_feats: g.edge_feats().cloned() }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn has_edge_feats(&self) -> bool {
        self.edge_feats.is_some()
    }
}

/// Disjoint union of every node's induced k-hop subgraph.
#[derive(Clone, Debug)]
pub struct SubgraphUnion {
    topo: Topology,
    /// Parent node behind each union node.
    gather: Vec<usize>,
    /// Centre whose subgraph each union node belongs to.
    owner: Vec<usize>,
    num_centres: usize,
}

impl SubgraphUnion {
    pub fn new(g: &Graph, k: usize) -> Result<SubgraphUnion> {
        let mut gather = Vec::new();
        let mut owner = Vec::new();
        let mut edges = Vec::new();
        let mut edge_rows: Vec<usize> = Vec::new();
        for u in 0..g.num_nodes() {
            let ball = g.k_hop_neighborhood(u, k)?;
            let sub = g.induced_subgraph(&ball, u)?;
            let base = gather.len();
            gather.extend_from_slice(&sub.mapping);
            owner.extend(core::iter::repeat_n(u, sub.mapping.len()));
            for &(a, b) in sub.graph.edges() {
                edges.push((base + a, base + b));
                let (pa, pb) = (sub.mapping[a], sub.mapping[b]);
                edge_rows.push(g.edge_index(pa, pb).expect("induced edge exists in parent"));
            }
        }
        let feats = Tensor::zeros(gather.len(), 0);
        let edge_feats = g.edge_feats().map(|ef| ef.select_rows(&edge_rows));
        let union = Graph::new(gather.len(), &edges, feats, edge_feats)?;
        Ok(SubgraphUnion { topo: Topology::new(&union), gather, owner, num_centres: g.num_nodes() })
    }

    pub fn total_nodes(&self) -> usize {
        self.gather.len()
    }
}

/// Per-layer parameter handles of a GNN.
#[derive(Clone, Debug, PartialEq)]
pub enum GnnLayer {
    Gcn { weight: ParamId, bias: ParamId },
    Gin {
        eps: ParamId,
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        edge_embed: Option<ParamId>,
    },
}

/// k-layer GNN used as a structure extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnStack {
    pub kind: GnnKind,
    pub layers: Vec<GnnLayer>,
    pub hidden_dim: usize,
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
pub(crate) fn init_weight(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let bound = 1.0 / libm::sqrt(rows.max(1) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

impl GnnStack {
    /// Registers `layers` GNN layers mapping `in_dim -> hidden -> ... -> hidden`.
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        kind: GnnKind,
        layers: usize,
        in_dim: usize,
        hidden_dim: usize,
        edge_dim: Option<usize>,
        rng: &mut Rng,
    ) -> GnnStack {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let d_in = if l == 0 { in_dim } else { hidden_dim };
            let p = format!("{prefix}.{l}");
            let layer = match kind {
                GnnKind::Gcn => GnnLayer::Gcn {
                    weight: params.push(format!("{p}.weight"), init_weight(d_in, hidden_dim, rng)),
                    bias: params.push(format!("{p}.bias"), Tensor::zeros(1, hidden_dim)),
                },
                GnnKind::Gin => GnnLayer::Gin {
                    eps: params.push(format!("{p}.eps"), Tensor::scalar(0.0)),
                    w1: params.push(format!("{p}.mlp.w1"), init_weight(d_in, hidden_dim, rng)),
                    b1: params.push(format!("{p}.mlp.b1"), Tensor::zeros(1, hidden_dim)),
                    w2: params.push(format!("{p}.mlp.w2"), init_weight(hidden_dim, hidden_dim, rng)),
                    b2: params.push(format!("{p}.mlp.b2"), Tensor::zeros(1, hidden_dim)),
                    edge_embed: edge_dim
                        .map(|de| params.push(format!("{p}.edge_embed"), init_weight(de, d_in, rng))),
                },
            };
            out.push(layer);
        }
        GnnStack { kind, layers: out, hidden_dim }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn run(&self, tape: &mut Tape, topo: &Topology, mut h: Var, vars: &[Var]) -> Result<Var> {
        for layer in &self.layers {
            h = match layer {
                GnnLayer::Gcn { weight, bias } => gcn_layer(tape, topo, h, vars[weight.0], vars[bias.0])?,
                GnnLayer::Gin { eps, w1, b1, w2, b2, edge_embed } => {
                    let mlp = GinMlp { w1: vars[w1.0], b1: vars[b1.0], w2: vars[w2.0], b2: vars[b2.0] };
                    gin_layer(tape, topo, h, vars[eps.0], mlp, edge_embed.map(|e| vars[e.0]))?
                }
            };
        }
        Ok(h)
    }
}

fn check_rows(tape: &Tape, topo: &Topology, h: Var) -> Result<()> {
    let rows = tape.shape(h).0;
    if rows != topo.num_nodes {
        return Err(Error::DimensionMismatch(format!(
            "{rows} feature rows for {} nodes",
            topo.num_nodes
        )));
    }
    Ok(())
}

/// `ReLU(D^{-1/2} (A + I) D^{-1/2} H W + b)` with `D` the degrees of `A + I`.
pub fn gcn_layer(tape: &mut Tape, topo: &Topology, h: Var, weight: Var, bias: Var) -> Result<Var> {
    check_rows(tape, topo, h)?;
    let n = topo.num_nodes;
    let mut rows = topo.src.clone();
    rows.extend(0..n);
    let mut ids = topo.dst.clone();
    ids.extend(0..n);
    let gathered = tape.row_gather(h, rows)?;
    let weighted = tape.scale_rows(gathered, topo.gcn_coef.clone())?;
    let agg = tape.segment_sum(weighted, ids, n)?;
    let lin = tape.matmul(agg, weight)?;
    let lin = tape.add_row(lin, bias)?;
    Ok(tape.relu(lin))
}

/// Two-layer perceptron `W2 ReLU(W1 x + b1) + b2` inside a GIN layer.
#[derive(Clone, Copy, Debug)]
pub struct GinMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `MLP((1 + eps) h_u + sum_{v ~ u} m(h_v, e_uv))` where the message is
/// `ReLU(h_v + e_uv W_e)` when the graph has edge features and `h_v` otherwise.
pub fn gin_layer(
    tape: &mut Tape,
    topo: &Topology,
    h: Var,
    eps: Var,
    mlp: GinMlp,
    edge_embed: Option<Var>,
) -> Result<Var> {
    check_rows(tape, topo, h)?;
    let n = topo.num_nodes;
    let mut msgs = tape.row_gather(h, topo.src.clone())?;
    match (&topo.edge_feats, edge_embed) {
        (Some(ef), Some(we)) => {
            let e = tape.constant(ef.select_rows(&topo.edge));
            let e = tape.matmul(e, we)?;
            let m = tape.add(msgs, e)?;
            msgs = tape.relu(m);
        }
        (None, None) => {}
        (Some(_), None) => {
            return Err(Error::ParamMismatch("graph has edge features but the GIN layer has no edge embedding".into()))
        }
        (None, Some(_)) => {
            return Err(Error::ParamMismatch("GIN layer expects edge features the graph does not have".into()))
        }
    }
    let agg = tape.segment_sum(msgs, topo.dst.clone(), n)?;
    let own = tape.scale_by(h, eps, 1.0)?;
    let pre = tape.add(own, agg)?;
    let z = tape.matmul(pre, mlp.w1)?;
    let z = tape.add_row(z, mlp.b1)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, mlp.w2)?;
    tape.add_row(z, mlp.b2)
}

/// `phi(u, G) = GNN^(k)(G)_u`; `k = 0` returns `x` untouched.
pub fn extract_subtree(
    tape: &mut Tape,
    topo: &Topology,
    x: Var,
    stack: &GnnStack,
    k: usize,
    vars: &[Var],
) -> Result<Var> {
    if stack.len() != k {
        return Err(Error::ParamMismatch(format!("stack has {} layers, k = {k}", stack.len())));
    }
    if k == 0 {
        return Ok(x);
    }
    stack.run(tape, topo, x, vars)
}

/// For every node, runs the stack on its induced k-hop subgraph and sums
/// the outputs; optionally concatenates the node's own input features.
pub fn extract_subgraph(
    tape: &mut Tape,
    union: &SubgraphUnion,
    x: Var,
    stack: &GnnStack,
    concat_original: bool,
    vars: &[Var],
) -> Result<Var> {
    if stack.is_empty() {
        return Err(Error::Config("subgraph extractor needs k >= 1".into()));
    }
    let rows = tape.shape(x).0;
    if rows != union.num_centres {
        return Err(Error::DimensionMismatch(format!(
            "{rows} feature rows for {} nodes",
            union.num_centres
        )));
    }
    let h = tape.row_gather(x, union.gather.clone())?;
    let h = stack.run(tape, &union.topo, h, vars)?;
    let pooled = tape.segment_sum(h, union.owner.clone(), union.num_centres)?;
    if concat_original {
        tape.concat(&[pooled, x], 1)
    } else {
        Ok(pooled)
    }
}

/// Structure extractor of one layer: strategy, depth and GNN weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    pub strategy: ExtractorKind,
    pub k: usize,
    pub concat_original: bool,
    pub stack: GnnStack,
}

/// Cached structure a graph needs for extraction.
#[derive(Clone, Debug)]
pub struct ExtractionContext {
    pub topo: Topology,
    pub union: Option<SubgraphUnion>,
}

impl ExtractionContext {
    pub fn new(g: &Graph, strategy: ExtractorKind, k: usize) -> Result<Self> {
        let union = match strategy {
            ExtractorKind::Subgraph if k > 0 => Some(SubgraphUnion::new(g, k)?),
            _ => None,
        };
        Ok(ExtractionContext { topo: Topology::new(g), union })
    }
}

impl Extractor {
    pub fn output_dim(&self, in_dim: usize) -> usize {
        match (self.strategy, self.k) {
            (_, 0) => in_dim,
            (ExtractorKind::Subtree, _) => self.stack.hidden_dim,
            (ExtractorKind::Subgraph, _) => {
                self.stack.hidden_dim + if self.concat_original { in_dim } else { 0 }
            }
        }
    }

    pub fn apply(&self, tape: &mut Tape, ctx: &ExtractionContext, x: Var, vars: &[Var]) -> Result<Var> {
        match self.strategy {
            ExtractorKind::Subtree => extract_subtree(tape, &ctx.topo, x, &self.stack, self.k, vars),
            ExtractorKind::Subgraph => {
                let union = ctx
                    .union
                    .as_ref()
                    .ok_or_else(|| Error::Config("subgraph extractor needs k >= 1".into()))?;
                extract_subgraph(tape, union, x, &self.stack, self.concat_original, vars)
            }
        }
    }
}
