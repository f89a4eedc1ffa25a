//! Datasets, synthetic generators and splits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Permutation};
use crate::model::Task;
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Label of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Scalar(f64),
    Class(usize),
    NodeClasses(Vec<usize>),
}

impl Target {
    pub fn task(&self) -> Task {
        match self {
            Target::Scalar(_) => Task::Regression,
            Target::Class(_) => Task::GraphClass,
            Target::NodeClasses(_) => Task::NodeClass,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub graph: Graph,
    pub target: Target,
}

/// Index lists into [`Dataset::samples`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<GraphSample>,
    task: Task,
    num_classes: usize,
    feat_dim: usize,
    edge_dim: usize,
    pub splits: Splits,
}

impl Dataset {
    /// Validates consistency of targets and feature widths. All samples
    /// start in the training split.
    pub fn new(samples: Vec<GraphSample>) -> Result<Dataset> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let task = first.target.task();
        let feat_dim = first.graph.feat_dim();
        let edge_dim = first.graph.edge_dim().unwrap_or(0);
        let mut num_classes = 0;
        for (i, s) in samples.iter().enumerate() {
            if s.target.task() != task {
                return Err(Error::Dataset(format!("sample {i}: target kind differs from sample 0")));
            }
            if s.graph.feat_dim() != feat_dim {
                return Err(Error::Dataset(format!(
                    "sample {i}: {} node feature columns, expected {feat_dim}",
                    s.graph.feat_dim()
                )));
            }
            if s.graph.edge_dim().unwrap_or(0) != edge_dim {
                return Err(Error::Dataset(format!("sample {i}: edge feature width differs from sample 0")));
            }
            match &s.target {
                Target::Scalar(y) if !y.is_finite() => {
                    return Err(Error::Dataset(format!("sample {i}: non-finite target")))
                }
                Target::Class(c) => num_classes = num_classes.max(c + 1),
                Target::NodeClasses(cs) => {
                    if cs.len() != s.graph.num_nodes() {
                        return Err(Error::Dataset(format!(
                            "sample {i}: {} node labels for {} nodes",
                            cs.len(),
                            s.graph.num_nodes()
                        )));
                    }
                    num_classes = cs.iter().fold(num_classes, |m, &c| m.max(c + 1));
                }
                Target::Scalar(_) => {}
            }
        }
        let splits = Splits { train: (0..samples.len()).collect(), ..Splits::default() };
        Ok(Dataset { samples, task, num_classes, feat_dim, edge_dim, splits })
    }

    pub fn samples(&self) -> &[GraphSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// 0 for regression.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// 0 when graphs carry no edge features.
    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    /// Model output width for this task.
    pub fn output_dim(&self) -> usize {
        if self.task == Task::Regression {
            1
        } else {
            self.num_classes
        }
    }

    /// Replaces the splits after checking they are disjoint and in range.
    pub fn with_splits(mut self, splits: Splits) -> Result<Dataset> {
        let mut seen = vec![false; self.len()];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= self.len() || seen[i] {
                return Err(Error::Dataset(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        self.splits = splits;
        Ok(self)
    }
}

/// Balanced hexagon (class 0) versus two triangles (class 1), constant
/// features, node order shuffled per sample. Classes alternate.
pub fn gen_cycle_vs_triangles(n_graphs: usize, seed: u64) -> Result<Dataset> {
    if n_graphs == 0 || !n_graphs.is_multiple_of(2) {
        return Err(Error::Dataset(format!("n_graphs must be positive and even, got {n_graphs}")));
    }
    let mut rng = seeded(seed);
    let hexagon = Graph::cycle(6);
    let triangles = Graph::cycle(3).disjoint_union(&Graph::cycle(3))?;
    let samples = (0..n_graphs)
        .map(|i| {
            let class = i % 2;
            let base = if class == 0 { &hexagon } else { &triangles };
            let pi = Permutation::random(6, &mut rng);
            Ok(GraphSample { graph: base.permute(&pi)?, target: Target::Class(class) })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

/// Number of triangles, by enumerating edges and common higher neighbours.
pub fn triangle_count(g: &Graph) -> usize {
    let mut count = 0;
    for &(u, v) in g.edges() {
        count += g.neighbors(v).iter().filter(|&&w| w > v && g.has_edge(u, w)).count();
    }
    count
}

/// Erdős–Rényi graphs with constant features; target is the triangle count.
pub fn gen_triangle_count_regression(n_graphs: usize, n_nodes: usize, edge_prob: f64, seed: u64) -> Result<Dataset> {
    if n_nodes > 30 {
        return Err(Error::TooLarge { got: n_nodes, max: 30 });
    }
    if n_nodes == 0 || !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::Dataset(format!("need n_nodes >= 1 and edge_prob in [0, 1], got {n_nodes}, {edge_prob}")));
    }
    let mut rng = seeded(seed);
    let samples = (0..n_graphs)
        .map(|_| {
            let g = Graph::with_constant_features(n_nodes, &erdos_renyi_edges(n_nodes, edge_prob, &mut rng))?;
            let y = triangle_count(&g) as f64;
            Ok(GraphSample { graph: g, target: Target::Scalar(y) })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

pub fn erdos_renyi_edges(n: usize, p: f64, rng: &mut crate::rng::Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Stochastic block model graphs labelled by block.
///
/// Features have `blocks.len() + 1` columns. In every block one randomly
/// chosen node carries the one-hot indicator of its block; all other nodes
/// carry a 1 in the last column only. Node order is shuffled.
pub fn gen_sbm_node_classification(
    n_graphs: usize,
    blocks: &[usize],
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<Dataset> {
    if blocks.len() < 2 || blocks.contains(&0) {
        return Err(Error::Dataset(format!("need at least two non-empty blocks, got {blocks:?}")));
    }
    if !(p_in > p_out && (0.0..=1.0).contains(&p_in) && (0.0..=1.0).contains(&p_out)) {
        return Err(Error::Dataset(format!("need 0 <= p_out < p_in <= 1, got p_in {p_in}, p_out {p_out}")));
    }
    let nb = blocks.len();
    let n: usize = blocks.iter().sum();
    let labels: Vec<usize> = blocks.iter().enumerate().flat_map(|(b, &s)| core::iter::repeat_n(b, s)).collect();
    let mut rng = seeded(seed);
    let mut samples = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let p = if labels[u] == labels[v] { p_in } else { p_out };
                if rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let mut feats = Tensor::zeros(n, nb + 1);
        let mut start = 0;
        for (b, &size) in blocks.iter().enumerate() {
            let seed_node = start + rng.random_range(0..size);
            for v in start..start + size {
                if v == seed_node {
                    feats.set(v, b, 1.0);
                } else {
                    feats.set(v, nb, 1.0);
                }
            }
            start += size;
        }
        let g = Graph::new(n, &edges, feats, None)?;
        let pi = Permutation::random(n, &mut rng);
        let mut permuted = vec![0; n];
        for (v, &l) in labels.iter().enumerate() {
            permuted[pi.apply(v)] = l;
        }
        samples.push(GraphSample { graph: g.permute(&pi)?, target: Target::NodeClasses(permuted) });
    }
    Dataset::new(samples)
}

/// Seeded train/val/test split. Train and validation sizes are rounded
/// fractions; the test split takes the remainder. With `stratify`, each
/// graph class is split separately.
pub fn split(mut dataset: Dataset, fractions: [f64; 3], seed: u64, stratify: bool) -> Result<Dataset> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Dataset(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut rng = seeded(seed);
    let mut splits = Splits::default();
    let mut assign = |mut idx: Vec<usize>, rng: &mut crate::rng::Rng| {
        idx.shuffle(rng);
        let n = idx.len() as f64;
        let n_train = libm::round(fractions[0] * n) as usize;
        let n_val = (libm::round(fractions[1] * n) as usize).min(idx.len() - n_train);
        splits.train.extend_from_slice(&idx[..n_train]);
        splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&idx[n_train + n_val..]);
    };
    if stratify {
        if dataset.task != Task::GraphClass {
            return Err(Error::Dataset("stratified splits need graph class labels".into()));
        }
        for class in 0..dataset.num_classes {
            let idx = (0..dataset.len())
                .filter(|&i| dataset.samples[i].target == Target::Class(class))
                .collect();
            assign(idx, &mut rng);
        }
    } else {
        assign((0..dataset.len()).collect(), &mut rng);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    dataset.splits = splits;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_counts(d: &Dataset, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; d.num_classes()];
        for &i in idx {
            if let Target::Class(k) = d.samples()[i].target {
                c[k] += 1;
            }
        }
        c
    }

    #[test]
    fn cycle_vs_triangles_construction() {
        let d = gen_cycle_vs_triangles(40, 7).unwrap();
        assert_eq!(d.task(), Task::GraphClass);
        assert_eq!(class_counts(&d, &d.splits.train), vec![20, 20]);
        for s in d.samples() {
            assert_eq!((s.graph.num_nodes(), s.graph.num_edges()), (6, 6));
            assert!(s.graph.degrees().iter().all(|&x| x == 2));
            assert!(s.graph.node_feats().data().iter().all(|&x| x == 1.0));
            let tri = triangle_count(&s.graph);
            assert_eq!(tri, if s.target == Target::Class(0) { 0 } else { 2 });
        }
        assert!(gen_cycle_vs_triangles(3, 0).is_err());
    }

    #[test]
    fn generators_are_pure_functions_of_seed() {
        assert_eq!(gen_cycle_vs_triangles(10, 3).unwrap(), gen_cycle_vs_triangles(10, 3).unwrap());
        assert_eq!(
            gen_triangle_count_regression(10, 9, 0.4, 3).unwrap(),
            gen_triangle_count_regression(10, 9, 0.4, 3).unwrap()
        );
        assert_eq!(
            gen_sbm_node_classification(3, &[4, 5], 0.8, 0.1, 3).unwrap(),
            gen_sbm_node_classification(3, &[4, 5], 0.8, 0.1, 3).unwrap()
        );
        assert_ne!(gen_cycle_vs_triangles(10, 3).unwrap(), gen_cycle_vs_triangles(10, 4).unwrap());
    }

    #[test]
    fn triangle_count_fixtures() {
        assert_eq!(triangle_count(&Graph::complete(4)), 4);
        assert_eq!(triangle_count(&Graph::path(7)), 0);
        let star = Graph::with_constant_features(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        assert_eq!(triangle_count(&star), 0);
    }

    #[test]
    fn triangle_targets_match_brute_force() {
        let d = gen_triangle_count_regression(30, 10, 0.4, 11).unwrap();
        for s in d.samples() {
            let g = &s.graph;
            let n = g.num_nodes();
            let mut brute = 0;
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        if g.has_edge(a, b) && g.has_edge(b, c) && g.has_edge(a, c) {
                            brute += 1;
                        }
                    }
                }
            }
            assert_eq!(s.target, Target::Scalar(brute as f64));
        }
        assert!(matches!(gen_triangle_count_regression(1, 31, 0.3, 0), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn sbm_without_cross_edges_aligns_components_with_blocks() {
        let d = gen_sbm_node_classification(5, &[4, 6, 3], 0.9, 0.0, 2).unwrap();
        assert_eq!(d.task(), Task::NodeClass);
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.feat_dim(), 4);
        for s in d.samples() {
            let Target::NodeClasses(labels) = &s.target else { panic!() };
            for &(u, v) in s.graph.edges() {
                assert_eq!(labels[u], labels[v]);
            }
            for b in 0..3 {
                assert!(labels.contains(&b));
                let seeds: Vec<usize> = (0..13).filter(|&v| s.graph.node_feats().get(v, b) == 1.0).collect();
                assert_eq!(seeds.len(), 1);
                assert_eq!(labels[seeds[0]], b);
            }
        }
    }

    #[test]
    fn sbm_intra_block_density_matches_p_in() {
        let (p_in, blocks) = (0.6, [5usize, 7]);
        let d = gen_sbm_node_classification(200, &blocks, p_in, 0.05, 5).unwrap();
        let (mut hits, mut pairs) = (0usize, 0usize);
        for s in d.samples() {
            let Target::NodeClasses(labels) = &s.target else { panic!() };
            let n = labels.len();
            for u in 0..n {
                for v in u + 1..n {
                    if labels[u] == labels[v] {
                        pairs += 1;
                        hits += s.graph.has_edge(u, v) as usize;
                    }
                }
            }
        }
        let est = hits as f64 / pairs as f64;
        let sigma = (p_in * (1.0 - p_in) / pairs as f64).sqrt();
        assert!((est - p_in).abs() < 3.0 * sigma, "{est} vs {p_in} (sigma {sigma})");
    }

    #[test]
    fn sbm_rejects_degenerate_inputs() {
        assert!(gen_sbm_node_classification(1, &[5], 0.5, 0.1, 0).is_err());
        assert!(gen_sbm_node_classification(1, &[5, 0], 0.5, 0.1, 0).is_err());
        assert!(gen_sbm_node_classification(1, &[5, 5], 0.1, 0.5, 0).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = gen_triangle_count_regression(100, 6, 0.3, 0).unwrap();
        let a = split(d.clone(), [0.8, 0.1, 0.1], 4, false).unwrap();
        assert_eq!((a.splits.train.len(), a.splits.val.len(), a.splits.test.len()), (80, 10, 10));
        let b = split(d.clone(), [0.8, 0.1, 0.1], 4, false).unwrap();
        assert_eq!(a.splits, b.splits);
        let mut all: Vec<usize> = a.splits.train.iter().chain(&a.splits.val).chain(&a.splits.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split(d.clone(), [0.8, 0.1, 0.1], 4, true).is_err());
        assert!(split(d, [0.8, 0.3, 0.1], 4, false).is_err());
    }

    #[test]
    fn stratified_split_balances_classes() {
        let d = split(gen_cycle_vs_triangles(100, 1).unwrap(), [0.8, 0.1, 0.1], 9, true).unwrap();
        assert_eq!(class_counts(&d, &d.splits.train), vec![40, 40]);
        assert_eq!(class_counts(&d, &d.splits.val), vec![5, 5]);
        assert_eq!(class_counts(&d, &d.splits.test), vec![5, 5]);
    }

    #[test]
    fn dataset_rejects_mixed_targets() {
        let g = Graph::cycle(3);
        let samples = vec![
            GraphSample { graph: g.clone(), target: Target::Scalar(1.0) },
            GraphSample { graph: g.clone(), target: Target::Class(1) },
        ];
        assert!(Dataset::new(samples).is_err());
        let bad_nodes = vec![GraphSample { graph: g, target: Target::NodeClasses(vec![0, 1]) }];
        assert!(Dataset::new(bad_nodes).is_err());
        assert!(matches!(Dataset::new(Vec::new()), Err(Error::EmptyDataset)));
    }
}
