//! The structure-aware transformer.
//!
//! Each layer computes a structure extractor output `H` from the current node
//! features `X`, forms queries and keys from `H` and values from `X`, runs
//! dense softmax attention over all nodes, and then applies the
//! degree-scaled residual, a two-layer FFN and two layer norms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use crate::extractors::{ExtractorKind, GnnKind};
use crate::extractors::{init_weight, ExtractionContext, Extractor, GnnStack};
use crate::graph::Graph;
use crate::params::{ModelParams, ParamId};
use crate::posenc::{self, PeKind};
use crate::rng::{derive_seed, seeded};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Mean,
    Sum,
    /// Embedding of a virtual node appended without edges.
    Cls,
    /// Node-level tasks.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Regression,
    GraphClass,
    NodeClass,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub extractor: ExtractorKind,
    pub gnn: GnnKind,
    pub k: usize,
    /// Subgraph strategy only: append the node's own features to the pooled summary.
    pub concat_original: bool,
    pub pe: PeKind,
    pub pe_dim: usize,
    pub readout: Readout,
    pub dropout: f64,
    pub task: Task,
    /// Raw node feature width, before any positional encoding.
    pub input_dim: usize,
    /// Edge feature width; 0 when graphs carry none.
    pub edge_dim: usize,
    pub output_dim: usize,
}

impl Default for SatConfig {
    fn default() -> Self {
        SatConfig {
            num_layers: 6,
            hidden_dim: 64,
            num_heads: 8,
            extractor: ExtractorKind::Subtree,
            gnn: GnnKind::Gin,
            k: 3,
            concat_original: true,
            pe: PeKind::Rwpe,
            pe_dim: 20,
            readout: Readout::Mean,
            dropout: 0.0,
            task: Task::Regression,
            input_dim: 1,
            edge_dim: 0,
            output_dim: 1,
        }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.output_dim == 0 || self.input_dim == 0 {
            return fail("input_dim and output_dim must be positive".into());
        }
        if self.extractor == ExtractorKind::Subgraph && self.k == 0 {
            return fail("the subgraph extractor needs k >= 1; k = 0 is the plain transformer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if (self.pe == PeKind::None) != (self.pe_dim == 0) {
            return fail("pe_dim must be 0 exactly when pe is none".into());
        }
        match (self.task, self.readout) {
            (Task::NodeClass, Readout::None) => {}
            (Task::NodeClass, _) => return fail("node-level tasks use readout none".into()),
            (_, Readout::None) => return fail("graph-level tasks need a readout".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Width of the node features the model consumes.
    pub fn encoded_dim(&self) -> usize {
        self.input_dim + if self.pe == PeKind::None { 0 } else { self.pe_dim }
    }

    pub fn ffn_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// GCN layers ignore edge features.
    fn edge_dim_opt(&self) -> Option<usize> {
        (self.edge_dim > 0 && self.gnn == GnnKind::Gin).then_some(self.edge_dim)
    }
}

/// Parameter handles of one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub extractor: Extractor,
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub bo: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Attention weights retained for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    /// `layers[l][h]` is the row-stochastic weight matrix of head `h` in layer `l`.
    pub layers: Vec<Vec<Tensor>>,
    /// Row/column of the virtual readout node, when present.
    pub cls_index: Option<usize>,
}

/// One `(layer, head)` attention matrix with node labels, for export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    /// Node label per row/column: the node index, or `"cls"`.
    pub nodes: Vec<alloc::string::String>,
    pub weights: Vec<Vec<f64>>,
    /// Attention of the virtual node over every node, when present.
    pub cls_row: Option<Vec<f64>>,
}

impl AttentionTrace {
    pub fn records(&self) -> Vec<AttentionRecord> {
        use alloc::string::ToString;
        let mut out = Vec::new();
        for (l, heads) in self.layers.iter().enumerate() {
            for (h, w) in heads.iter().enumerate() {
                let nodes = (0..w.rows())
                    .map(|i| if Some(i) == self.cls_index { "cls".to_string() } else { i.to_string() })
                    .collect();
                out.push(AttentionRecord {
                    layer: l,
                    head: h,
                    nodes,
                    weights: (0..w.rows()).map(|r| w.row(r).to_vec()).collect(),
                    cls_row: self.cls_index.map(|c| w.row(c).to_vec()),
                });
            }
        }
        out
    }
}

/// A graph with its positional encoding attached and message-passing
/// structure cached, ready for repeated forward passes.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    /// Input graph with encoding columns appended.
    pub graph: Graph,
    /// Number of real nodes (excludes the virtual readout node).
    pub num_nodes: usize,
    ctx: ExtractionContext,
    /// `1 / sqrt(max(d_v, 1))` over real nodes then the virtual one.
    degree_scale: Vec<f64>,
}

/// Outputs of [`SatModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `1 x output_dim` for graph tasks, `n x output_dim` for node tasks.
    pub prediction: Var,
    /// Final hidden representation of the real nodes (`n x hidden`).
    pub node_repr: Var,
    /// Graph embedding fed to the head (graph tasks only).
    pub graph_repr: Option<Var>,
    pub trace: AttentionTrace,
}

/// Parameter layout of a model built from a [`SatConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct SatModel {
    pub cfg: SatConfig,
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub cls: Option<ParamId>,
    pub layers: Vec<LayerParams>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl SatModel {
    /// Builds the layout and initial parameters: uniform `±1/sqrt(fan_in)`
    /// weights, zero biases, unit norm gains.
    pub fn new(cfg: SatConfig, seed: u64) -> Result<(SatModel, ModelParams)> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let mut p = ModelParams::new();
        let h = cfg.hidden_dim;
        let dh = cfg.head_dim();
        let in_w = p.push("input.weight", init_weight(cfg.encoded_dim(), h, &mut rng));
        let in_b = p.push("input.bias", Tensor::zeros(1, h));
        let cls = (cfg.readout == Readout::Cls).then(|| p.push("cls", init_weight(h, 1, &mut rng).transpose()));
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let pre = format!("layer{l}");
            let stack = GnnStack::register(
                &mut p,
                &format!("{pre}.extractor"),
                cfg.gnn,
                cfg.k,
                h,
                h,
                cfg.edge_dim_opt(),
                &mut rng,
            );
            let extractor = Extractor {
                strategy: cfg.extractor,
                k: cfg.k,
                concat_original: cfg.concat_original,
                stack,
            };
            let d_phi = extractor.output_dim(h);
            let heads = (0..cfg.num_heads)
                .map(|i| {
                    let hp = format!("{pre}.head{i}");
                    HeadParams {
                        wq: p.push(format!("{hp}.wq"), init_weight(d_phi, dh, &mut rng)),
                        bq: p.push(format!("{hp}.bq"), Tensor::zeros(1, dh)),
                        wk: p.push(format!("{hp}.wk"), init_weight(d_phi, dh, &mut rng)),
                        bk: p.push(format!("{hp}.bk"), Tensor::zeros(1, dh)),
                        wv: p.push(format!("{hp}.wv"), init_weight(h, dh, &mut rng)),
                    }
                })
                .collect();
            let f = cfg.ffn_dim();
            layers.push(LayerParams {
                extractor,
                heads,
                wo: p.push(format!("{pre}.attn_out.weight"), init_weight(h, h, &mut rng)),
                bo: p.push(format!("{pre}.attn_out.bias"), Tensor::zeros(1, h)),
                w1: p.push(format!("{pre}.ffn.w1"), init_weight(h, f, &mut rng)),
                b1: p.push(format!("{pre}.ffn.b1"), Tensor::zeros(1, f)),
                w2: p.push(format!("{pre}.ffn.w2"), init_weight(f, h, &mut rng)),
                b2: p.push(format!("{pre}.ffn.b2"), Tensor::zeros(1, h)),
                ln1_gain: p.push(format!("{pre}.norm1.gain"), Tensor::filled(1, h, 1.0)),
                ln1_bias: p.push(format!("{pre}.norm1.bias"), Tensor::zeros(1, h)),
                ln2_gain: p.push(format!("{pre}.norm2.gain"), Tensor::filled(1, h, 1.0)),
                ln2_bias: p.push(format!("{pre}.norm2.bias"), Tensor::zeros(1, h)),
            });
        }
        let head_w = p.push("head.weight", init_weight(h, cfg.output_dim, &mut rng));
        let head_b = p.push("head.bias", Tensor::zeros(1, cfg.output_dim));
        Ok((SatModel { cfg, in_w, in_b, cls, layers, head_w, head_b }, p))
    }

    /// Attaches the configured positional encoding and caches structure.
    pub fn prepare(&self, raw: &Graph) -> Result<PreparedGraph> {
        let pe = posenc::encode(raw, self.cfg.pe, self.cfg.pe_dim)?;
        self.prepare_encoded(posenc::attach_encoding(raw, &pe)?)
    }

    /// Like [`SatModel::prepare`] for a graph whose features already carry
    /// the encoding.
    pub fn prepare_encoded(&self, graph: Graph) -> Result<PreparedGraph> {
        if graph.feat_dim() != self.cfg.encoded_dim() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} feature columns, model expects {} (input {} + encoding {})",
                graph.feat_dim(),
                self.cfg.encoded_dim(),
                self.cfg.input_dim,
                self.cfg.encoded_dim() - self.cfg.input_dim
            )));
        }
        let want_edges = self.cfg.edge_dim_opt();
        let has_edges = graph.edge_dim();
        match (want_edges, has_edges) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::DimensionMismatch(format!("edge features have width {b}, model expects {a}")))
            }
            (Some(_), None) => return Err(Error::DimensionMismatch("model expects edge features".into())),
            _ => {}
        }
        let n = graph.num_nodes();
        let mut structural = if want_edges.is_none() && has_edges.is_some() {
            Graph::new(n, graph.edges(), graph.node_feats().clone(), None)?
        } else {
            graph.clone()
        };
        if self.cfg.readout == Readout::Cls {
            structural = structural.with_isolated_nodes(1);
        }
        let ctx = ExtractionContext::new(&structural, self.cfg.extractor, self.cfg.k)?;
        let degree_scale =
            structural.degrees().iter().map(|&d| 1.0 / libm::sqrt(d.max(1) as f64)).collect();
        Ok(PreparedGraph { graph, num_nodes: n, ctx, degree_scale })
    }

    /// Structure-aware multi-head attention over all nodes of `x`.
    ///
    /// Returns the `n x hidden` output (after the output projection) and
    /// the per-head weight matrices.
    pub fn sa_attention(
        &self,
        tape: &mut Tape,
        pg: &PreparedGraph,
        x: Var,
        layer: &LayerParams,
        vars: &[Var],
    ) -> Result<(Var, Vec<Tensor>)> {
        let phi = layer.extractor.apply(tape, &pg.ctx, x, vars)?;
        let scale = 1.0 / libm::sqrt(self.cfg.head_dim() as f64);
        let mut outs = Vec::with_capacity(layer.heads.len());
        let mut weights = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let (o, w) = attention_head(tape, phi, x, head, vars, scale)?;
            weights.push(tape.value(w).clone());
            outs.push(o);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        let y = tape.matmul(cat, vars[layer.wo.0])?;
        Ok((tape.add_row(y, vars[layer.bo.0])?, weights))
    }

    /// One transformer layer with the degree-scaled residual.
    #[allow(clippy::too_many_arguments)]
    pub fn sat_layer(
        &self,
        tape: &mut Tape,
        pg: &PreparedGraph,
        x: Var,
        layer: &LayerParams,
        vars: &[Var],
        train: bool,
        seed: u64,
    ) -> Result<(Var, Vec<Tensor>)> {
        let rate = self.cfg.dropout;
        let (attn, weights) = self.sa_attention(tape, pg, x, layer, vars)?;
        let attn = tape.dropout(attn, rate, train, derive_seed(seed, 0, 0))?;
        let attn = tape.scale_rows(attn, pg.degree_scale.clone())?;
        let x1 = tape.add(x, attn)?;
        let x1 = tape.layer_norm(x1, vars[layer.ln1_gain.0], vars[layer.ln1_bias.0], LAYER_NORM_EPS)?;
        let f = tape.matmul(x1, vars[layer.w1.0])?;
        let f = tape.add_row(f, vars[layer.b1.0])?;
        let f = tape.relu(f);
        let f = tape.matmul(f, vars[layer.w2.0])?;
        let f = tape.add_row(f, vars[layer.b2.0])?;
        let f = tape.dropout(f, rate, train, derive_seed(seed, 0, 1))?;
        let x2 = tape.add(x1, f)?;
        let x2 = tape.layer_norm(x2, vars[layer.ln2_gain.0], vars[layer.ln2_bias.0], LAYER_NORM_EPS)?;
        Ok((x2, weights))
    }

    /// Full forward pass. `seed` drives dropout when `train` is set.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        pg: &PreparedGraph,
        train: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        let n = pg.num_nodes;
        let feats = tape.constant(pg.graph.node_feats().clone());
        let x = tape.matmul(feats, vars[self.in_w.0])?;
        let mut x = tape.add_row(x, vars[self.in_b.0])?;
        let cls_index = self.cls.map(|_| n);
        if let Some(cls) = self.cls {
            x = tape.concat(&[x, vars[cls.0]], 0)?;
        }
        let mut trace = AttentionTrace { layers: Vec::with_capacity(self.layers.len()), cls_index };
        for (l, layer) in self.layers.iter().enumerate() {
            let (y, w) = self.sat_layer(tape, pg, x, layer, vars, train, derive_seed(seed, l as u64 + 1, 0))?;
            x = y;
            trace.layers.push(w);
        }
        let node_repr = if self.cls.is_some() { tape.row_gather(x, (0..n).collect())? } else { x };
        let graph_repr = match self.cfg.readout {
            Readout::None => None,
            Readout::Cls => Some(tape.row_gather(x, vec![n])?),
            Readout::Mean | Readout::Sum => Some(readout_pool(tape, node_repr, self.cfg.readout)?),
        };
        let pre_head = graph_repr.unwrap_or(node_repr);
        let pred = tape.matmul(pre_head, vars[self.head_w.0])?;
        let prediction = tape.add_row(pred, vars[self.head_b.0])?;
        Ok(ForwardOutput { prediction, node_repr, graph_repr, trace })
    }

    /// Convenience: forward pass in evaluation mode returning plain tensors.
    pub fn predict(&self, params: &ModelParams, pg: &PreparedGraph) -> Result<(Tensor, AttentionTrace)> {
        let mut tape = Tape::new();
        let vars = bind_constants(params, &mut tape);
        let out = self.forward(&mut tape, &vars, pg, false, 0)?;
        Ok((tape.value(out.prediction).clone(), out.trace))
    }

    /// Checks that `params` has this layout's names and shapes.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let (_, fresh) = SatModel::new(self.cfg.clone(), 0)?;
        let mut probe = fresh;
        probe.load_from(params)
    }
}

/// Binds parameters as constants (no gradient bookkeeping).
pub fn bind_constants(params: &ModelParams, tape: &mut Tape) -> Vec<Var> {
    params.tensors().iter().map(|t| tape.constant(t.clone())).collect()
}

fn attention_head(
    tape: &mut Tape,
    phi: Var,
    x: Var,
    head: &HeadParams,
    vars: &[Var],
    scale: f64,
) -> Result<(Var, Var)> {
    let q = tape.matmul(phi, vars[head.wq.0])?;
    let q = tape.add_row(q, vars[head.bq.0])?;
    let k = tape.matmul(phi, vars[head.wk.0])?;
    let k = tape.add_row(k, vars[head.bk.0])?;
    let v = tape.matmul(x, vars[head.wv.0])?;
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, scale);
    let w = tape.softmax_rows(s);
    Ok((tape.matmul(w, v)?, w))
}

/// Mean or sum over rows, as a `1 x cols` row.
pub fn readout_pool(tape: &mut Tape, x: Var, method: Readout) -> Result<Var> {
    let n = tape.shape(x).0;
    let s = tape.segment_sum(x, vec![0; n], 1)?;
    match method {
        Readout::Sum => Ok(s),
        Readout::Mean => Ok(tape.scale(s, 1.0 / n.max(1) as f64)),
        other => Err(Error::Config(format!("{other:?} is not a pooling readout"))),
    }
}

/// Readout of a plain node matrix: mean/sum over the non-virtual rows, or
/// the virtual row itself.
pub fn readout(x: &Tensor, method: Readout, cls_index: Option<usize>) -> Result<Vec<f64>> {
    match (method, cls_index) {
        (Readout::Cls, Some(c)) if c < x.rows() => Ok(x.row(c).to_vec()),
        (Readout::Cls, _) => Err(Error::Config("cls readout requires a virtual node".into())),
        (Readout::None, _) => Err(Error::Config("readout none has no graph embedding".into())),
        (Readout::Mean | Readout::Sum, _) => {
            let rows: Vec<usize> = (0..x.rows()).filter(|&r| Some(r) != cls_index).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(x.select_rows(&rows));
            let p = readout_pool(&mut tape, xv, method)?;
            Ok(tape.value(p).data().to_vec())
        }
    }
}
