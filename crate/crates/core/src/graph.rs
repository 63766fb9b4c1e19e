//! Node partitions, stochastic block models, and sampled digraph instances.
//!
//! A `Partition` splits nodes `0..n` into k classes. An `SbmModel` attaches a
//! k-by-k block matrix to a partition: entry `(u, v)` is the probability that
//! a directed edge (a potential content transfer) exists from a node of class
//! u to a node of class v. Self-loops are always excluded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

/// An ordered partition of nodes `0..n_total` into contiguous classes `0..k`.
///
/// Immutable after construction; the per-class sizes are precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    class_of: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    /// Build a partition where the first `sizes[0]` nodes form class 0, the
    /// next `sizes[1]` form class 1, and so on.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::EmptyClass);
        }
        let mut class_of = Vec::with_capacity(sizes.iter().sum());
        for (c, &s) in sizes.iter().enumerate() {
            class_of.extend(std::iter::repeat(c).take(s));
        }
        Ok(Partition {
            class_of,
            sizes: sizes.to_vec(),
        })
    }

    /// Build a partition from an explicit class label per node. Labels must
    /// cover `0..k` with no empty class.
    pub fn from_class_of(class_of: Vec<usize>) -> Result<Self> {
        if class_of.is_empty() {
            return Err(Error::EmptyClass);
        }
        let k = class_of.iter().max().unwrap() + 1;
        let mut sizes = vec![0usize; k];
        for &c in &class_of {
            sizes[c] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::EmptyClass);
        }
        Ok(Partition { class_of, sizes })
    }

    pub fn n_total(&self) -> usize {
        self.class_of.len()
    }

    pub fn num_classes(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    #[inline]
    pub fn class_of(&self, node: usize) -> usize {
        self.class_of[node]
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_of
    }
}

/// Count how many of the given nodes fall in each partition class.
///
/// Returns a length-k vector; an empty node list yields all zeros.
pub fn class_counts(partition: &Partition, nodes: &[usize]) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; partition.num_classes()];
    for &node in nodes {
        if node >= partition.n_total() {
            return Err(Error::NodeOutOfRange {
                node,
                n_total: partition.n_total(),
            });
        }
        counts[partition.class_of(node)] += 1;
    }
    Ok(counts)
}

/// A stochastic block model: a partition plus a block probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmModel {
    partition: Partition,
    block: SquareMatrix,
}

impl SbmModel {
    pub fn new(partition: Partition, block: SquareMatrix) -> Result<Self> {
        if block.k() != partition.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "block matrix",
                expected: partition.num_classes(),
                found: block.k(),
            });
        }
        if !block.is_probability_matrix() {
            let bad = block
                .iter()
                .map(|(_, _, x)| x)
                .find(|x| !x.is_finite() || !(0.0..=1.0).contains(x))
                .unwrap_or(f64::NAN);
            return Err(Error::OutOfRange {
                what: "block matrix entry",
                value: bad,
            });
        }
        Ok(SbmModel { partition, block })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn block(&self) -> &SquareMatrix {
        &self.block
    }

    pub fn n_total(&self) -> usize {
        self.partition.n_total()
    }

    pub fn num_classes(&self) -> usize {
        self.partition.num_classes()
    }

    /// Same partition, different block matrix.
    pub fn with_block(&self, block: SquareMatrix) -> Result<Self> {
        SbmModel::new(self.partition.clone(), block)
    }

    /// Probability of a directed edge from node `i` to node `j`: the block
    /// entry for their classes, or 0 for `i == j` (no self-loops).
    pub fn edge_prob(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.n_total();
        for node in [i, j] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, n_total: n });
            }
        }
        if i == j {
            return Ok(0.0);
        }
        Ok(self
            .block
            .get(self.partition.class_of(i), self.partition.class_of(j)))
    }
}

/// A concrete directed graph drawn from an `SbmModel`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectedGraphInstance {
    n_total: usize,
    /// Out-neighbor lists, each sorted ascending.
    out: Vec<Vec<usize>>,
    edge_count: usize,
}

impl DirectedGraphInstance {
    /// Build an instance from an explicit directed edge list.
    pub fn from_edges(n_total: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut out = vec![Vec::new(); n_total];
        for &(i, j) in edges {
            for node in [i, j] {
                if node >= n_total {
                    return Err(Error::NodeOutOfRange { node, n_total });
                }
            }
            out[i].push(j);
        }
        let mut edge_count = 0;
        for row in &mut out {
            row.sort_unstable();
            row.dedup();
            edge_count += row.len();
        }
        Ok(DirectedGraphInstance {
            n_total,
            out,
            edge_count,
        })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out[node]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out[i].binary_search(&j).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
    }
}

/// Sample one directed graph instance from the model.
///
/// Exactly one uniform variate is drawn per ordered node pair, in a fixed
/// (i, j) iteration order. This makes the draw reproducible for a given seed
/// and gives a monotone coupling across block matrices: re-sampling with the
/// same seed and a pointwise larger block matrix yields a superset of edges.
pub fn sample_instance(model: &SbmModel, rng: &mut impl Rng) -> DirectedGraphInstance {
    let n = model.n_total();
    let partition = model.partition();
    let block = model.block();
    let mut out = vec![Vec::new(); n];
    let mut edge_count = 0usize;
    for i in 0..n {
        let u = partition.class_of(i);
        let row = &mut out[i];
        for j in 0..n {
            let p = if i == j { 0.0 } else { block.get(u, partition.class_of(j)) };
            // Draw unconditionally (even for p = 0) to keep the stream
            // aligned across models that share a seed.
            let x: f64 = rng.gen();
            if x < p {
                row.push(j);
                edge_count += 1;
            }
        }
    }
    DirectedGraphInstance {
        n_total: n,
        out,
        edge_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_class_model() -> SbmModel {
        let partition = Partition::from_sizes(&[500, 500]).unwrap();
        let block =
            SquareMatrix::from_rows(vec![vec![0.01, 0.002], vec![0.002, 0.01]]).unwrap();
        SbmModel::new(partition, block).unwrap()
    }

    #[test]
    fn partition_from_sizes_assigns_contiguous_labels() {
        let p = Partition::from_sizes(&[2, 3]).unwrap();
        assert_eq!(p.n_total(), 5);
        assert_eq!(p.num_classes(), 2);
        assert_eq!(p.class_labels(), &[0, 0, 1, 1, 1]);
    }

    #[test]
    fn partition_rejects_empty_and_zero_classes() {
        assert!(Partition::from_sizes(&[]).is_err());
        assert!(Partition::from_sizes(&[3, 0, 2]).is_err());
        assert!(Partition::from_class_of(vec![0, 2, 2]).is_err()); // class 1 missing
    }

    #[test]
    fn edge_prob_reads_the_block_for_the_class_pair() {
        let model = two_class_model();
        // Nodes 0 and 600 land in different classes.
        assert_eq!(model.edge_prob(0, 600).unwrap(), 0.002);
        assert_eq!(model.edge_prob(600, 0).unwrap(), 0.002);
        assert_eq!(model.edge_prob(0, 1).unwrap(), 0.01);
        assert_eq!(model.edge_prob(0, 0).unwrap(), 0.0); // self-loop
        assert!(model.edge_prob(0, 1000).is_err());
    }

    #[test]
    fn edge_prob_single_class() {
        let partition = Partition::from_sizes(&[10]).unwrap();
        let block = SquareMatrix::from_rows(vec![vec![0.007]]).unwrap();
        let model = SbmModel::new(partition, block).unwrap();
        assert_eq!(model.edge_prob(3, 4).unwrap(), 0.007);
    }

    #[test]
    fn model_rejects_out_of_range_probabilities() {
        let partition = Partition::from_sizes(&[5]).unwrap();
        let block = SquareMatrix::from_rows(vec![vec![1.5]]).unwrap();
        assert!(SbmModel::new(partition, block).is_err());
    }

    #[test]
    fn zero_block_samples_no_edges() {
        let partition = Partition::from_sizes(&[10]).unwrap();
        let model = SbmModel::new(partition, SquareMatrix::zeros(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_instance(&model, &mut rng);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn all_ones_block_samples_complete_digraph() {
        let partition = Partition::from_sizes(&[4]).unwrap();
        let model = SbmModel::new(partition, SquareMatrix::filled(1, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_instance(&model, &mut rng);
        assert_eq!(g.edge_count(), 12); // n(n-1) ordered pairs, no self-loops
        assert!(!g.has_edge(2, 2));
        assert!(g.has_edge(2, 3));
    }

    #[test]
    fn sampling_is_deterministic_for_a_seed() {
        let model = two_class_model();
        let g1 = sample_instance(&model, &mut ChaCha8Rng::seed_from_u64(9));
        let g2 = sample_instance(&model, &mut ChaCha8Rng::seed_from_u64(9));
        let e1: Vec<_> = g1.edges().collect();
        let e2: Vec<_> = g2.edges().collect();
        assert_eq!(e1, e2);
    }

    #[test]
    fn shared_seed_instances_are_monotone_in_the_block() {
        let partition = Partition::from_sizes(&[30, 30]).unwrap();
        let low = SbmModel::new(
            partition.clone(),
            SquareMatrix::from_rows(vec![vec![0.05, 0.01], vec![0.01, 0.05]]).unwrap(),
        )
        .unwrap();
        let high = SbmModel::new(
            partition,
            SquareMatrix::from_rows(vec![vec![0.10, 0.05], vec![0.02, 0.08]]).unwrap(),
        )
        .unwrap();
        let g_low = sample_instance(&low, &mut ChaCha8Rng::seed_from_u64(4));
        let g_high = sample_instance(&high, &mut ChaCha8Rng::seed_from_u64(4));
        for (i, j) in g_low.edges() {
            assert!(g_high.has_edge(i, j), "edge ({i}, {j}) lost when block grew");
        }
    }

    #[test]
    fn class_counts_examples() {
        let p = Partition::from_sizes(&[2, 3]).unwrap();
        assert_eq!(class_counts(&p, &[]).unwrap(), vec![0, 0]);
        assert_eq!(class_counts(&p, &[0, 1, 2]).unwrap(), vec![2, 1]);
        assert_eq!(class_counts(&p, &[0, 1, 2, 3, 4]).unwrap(), vec![2, 3]);
        assert!(class_counts(&p, &[5]).is_err());
    }
}
