//! Absolute positional encodings: random-walk return probabilities and
//! Laplacian eigenvectors, plus the dense symmetric eigensolver behind the
//! latter.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::tensor::{order_free_sum, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeKind {
    #[default]
    None,
    /// Random-walk return probabilities for steps `1..=dim`.
    Rwpe,
    /// The `dim` lowest non-trivial Laplacian eigenvectors.
    Lappe,
}

/// Per-node encoding matrix (`n x dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct PosEncoding {
    pub kind: PeKind,
    pub values: Tensor,
}

impl PosEncoding {
    pub fn none(num_nodes: usize) -> Self {
        PosEncoding { kind: PeKind::None, values: Tensor::zeros(num_nodes, 0) }
    }
}

/// Random-walk encoding: entry `(v, i-1)` is `[(A D^-1)^i]_{vv}` for `i = 1..=steps`.
///
/// Isolated nodes get an all-zero row. Sums run in value order, so
/// relabelling the graph permutes the rows bit-exactly.
pub fn rwpe(g: &Graph, steps: usize) -> Result<PosEncoding> {
    if steps == 0 {
        return Err(Error::Config("random-walk encoding needs at least one step".into()));
    }
    let n = g.num_nodes();
    // walk[u][v]: probability of being at v after the current number of steps
    // starting from u; rows of (A D^-1)^i transposed for cache-friendly updates.
    let mut walk: Vec<Vec<f64>> = (0..n)
        .map(|u| {
            let mut row = vec![0.0; n];
            row[u] = 1.0;
            row
        })
        .collect();
    let mut out = Tensor::zeros(n, steps);
    let mut terms = Vec::new();
    for step in 0..steps {
        let mut next = vec![vec![0.0; n]; n];
        for u in 0..n {
            for v in 0..n {
                // (M P)[u][v] = sum_{w in N(v)} M[u][w] / d_v
                let dv = g.degree(v);
                if dv == 0 {
                    continue;
                }
                terms.clear();
                terms.extend(g.neighbors(v).iter().map(|&w| walk[u][w]).filter(|x| *x != 0.0));
                next[u][v] = order_free_sum(&mut terms) / dv as f64;
            }
        }
        walk = next;
        for v in 0..n {
            out.set(v, step, walk[v][v]);
        }
    }
    Ok(PosEncoding { kind: PeKind::Rwpe, values: out })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and a matrix whose column `i` is
/// the unit eigenvector of eigenvalue `i`.
pub fn sym_eig(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    const MAX_SWEEPS: usize = 50;
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", n, m.cols())));
    }
    let scale = m.data().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = m.clone();
    let mut v = Tensor::identity(n);
    let tol = 1e-12 * scale;
    let mut converged = false;
    for _ in 0..=MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .fold(0.0f64, |acc, (i, j)| acc.max(a.get(i, j).abs()));
        if off < tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Tensor::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, new, v.get(k, old));
        }
    }
    Ok((values, vectors))
}

/// `I - D^{-1/2} A D^{-1/2}`, with `D^{-1/2}` taken as zero on isolated nodes.
pub fn normalized_laplacian(g: &Graph) -> Tensor {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / libm::sqrt(d as f64) })
        .collect();
    let mut l = Tensor::identity(n);
    for &(u, v) in g.edges() {
        let w = -inv_sqrt[u] * inv_sqrt[v];
        l.set(u, v, w);
        l.set(v, u, w);
    }
    l
}

/// Laplacian spectrum and sign-fixed eigenvectors for columns `1..=m`.
pub fn lap_pe_with_spectrum(g: &Graph, m: usize) -> Result<(Vec<f64>, PosEncoding)> {
    let n = g.num_nodes();
    if m + 1 > n {
        return Err(Error::TooManyEigenvectors { requested: m, available: n.saturating_sub(1) });
    }
    let (values, vectors) = sym_eig(&normalized_laplacian(g))?;
    let mut out = Tensor::zeros(n, m);
    for j in 0..m {
        let col: Vec<f64> = (0..n).map(|k| vectors.get(k, j + 1)).collect();
        let sign = if col[sign_anchor(&col)] < 0.0 { -1.0 } else { 1.0 };
        for (k, x) in col.iter().enumerate() {
            out.set(k, j, sign * x);
        }
    }
    Ok((values, PosEncoding { kind: PeKind::Lappe, values: out }))
}

/// Laplacian encoding: eigenvectors of the `m` smallest eigenvalues after the
/// first, each flipped so that its first largest-magnitude entry is positive.
pub fn lap_pe(g: &Graph, m: usize) -> Result<PosEncoding> {
    lap_pe_with_spectrum(g, m).map(|(_, pe)| pe)
}

fn sign_anchor(col: &[f64]) -> usize {
    let max = col.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    col.iter().position(|x| x.abs() >= max - 1e-10).unwrap_or(0)
}

/// Whether [`lap_pe`] is a function of the graph alone up to relabelling:
/// the selected eigenvalues are simple and each sign anchor is unambiguous.
pub fn lap_pe_is_canonical(g: &Graph, m: usize) -> Result<bool> {
    let (values, pe) = lap_pe_with_spectrum(g, m)?;
    const GAP: f64 = 1e-6;
    for j in 1..=m {
        let lo = values[j] - values[j - 1];
        let hi = values.get(j + 1).map_or(f64::INFINITY, |v| v - values[j]);
        if lo < GAP || hi < GAP {
            return Ok(false);
        }
        let col: Vec<f64> = (0..g.num_nodes()).map(|k| pe.values.get(k, j - 1)).collect();
        let max = col.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let near = col.iter().filter(|x| x.abs() > max - GAP).count();
        if near > 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Encoding of kind `kind` with `dim` columns. Laplacian encodings of graphs
/// with too few nodes are padded with zero columns.
pub fn encode(g: &Graph, kind: PeKind, dim: usize) -> Result<PosEncoding> {
    match kind {
        PeKind::None => Ok(PosEncoding::none(g.num_nodes())),
        PeKind::Rwpe => rwpe(g, dim),
        PeKind::Lappe => {
            let avail = g.num_nodes().saturating_sub(1).min(dim);
            let mut pe = if avail == 0 {
                PosEncoding { kind: PeKind::Lappe, values: Tensor::zeros(g.num_nodes(), 0) }
            } else {
                lap_pe(g, avail)?
            };
            if avail < dim {
                pe.values = pe.values.hcat(&Tensor::zeros(g.num_nodes(), dim - avail))?;
            }
            Ok(pe)
        }
    }
}

/// Appends the encoding columns to the node features.
pub fn attach_encoding(g: &Graph, pe: &PosEncoding) -> Result<Graph> {
    if pe.kind == PeKind::None {
        return Ok(g.clone());
    }
    if pe.values.rows() != g.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "encoding has {} rows for {} nodes",
            pe.values.rows(),
            g.num_nodes()
        )));
    }
    g.with_node_feats(g.node_feats().hcat(&pe.values)?)
}
