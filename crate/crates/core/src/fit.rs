//! Building and estimating the per-content block matrices.
//!
//! The transfer probability from class u to class v decomposes into a
//! per-user share propensity and a class-to-class affinity: for each content
//! type, `b[u][v]` is the class-u average of (user propensity x class
//! affinity). When user-level parameters are unknown, `b` is estimated
//! frequentistly from labeled cascade records as successes / opportunities,
//! where an opportunity is one (infectious, susceptible) node pair exposed
//! for one step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Partition, SbmModel};
use crate::matrix::SquareMatrix;
use crate::sir::CascadeRecord;

/// Per-user share propensities for true (+) and false (-) content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    pub r_plus: f64,
    pub r_minus: f64,
}

/// Class-to-class transfer affinities for true (+) and false (-) content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTransfer {
    pub c_plus: SquareMatrix,
    pub c_minus: SquareMatrix,
}

/// The pair of block models governing true and false content on one shared
/// partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentModelPair {
    plus: SbmModel,
    minus: SbmModel,
}

impl ContentModelPair {
    pub fn new(partition: Partition, b_plus: SquareMatrix, b_minus: SquareMatrix) -> Result<Self> {
        Ok(ContentModelPair {
            plus: SbmModel::new(partition.clone(), b_plus)?,
            minus: SbmModel::new(partition, b_minus)?,
        })
    }

    /// Model for true content.
    pub fn plus(&self) -> &SbmModel {
        &self.plus
    }

    /// Model for false content.
    pub fn minus(&self) -> &SbmModel {
        &self.minus
    }

    pub fn partition(&self) -> &Partition {
        self.plus.partition()
    }
}

/// Content label attached to a recorded cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentLabel {
    True,
    False,
}

/// A cascade record plus the content label it propagated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCascade {
    pub label: ContentLabel,
    #[serde(flatten)]
    pub record: CascadeRecord,
}

/// Compose block matrices from user propensities and class affinities:
/// `b[u][v]` is the mean propensity over users of class u times `c[u][v]`,
/// computed per content type.
pub fn build_block_matrices(
    users: &[UserParams],
    partition: &Partition,
    transfer: &ClassTransfer,
) -> Result<ContentModelPair> {
    let k = partition.num_classes();
    if users.len() != partition.n_total() {
        return Err(Error::DimensionMismatch {
            what: "user parameter list",
            expected: partition.n_total(),
            found: users.len(),
        });
    }
    if transfer.c_plus.k() != k || transfer.c_minus.k() != k {
        return Err(Error::DimensionMismatch {
            what: "class transfer matrix",
            expected: k,
            found: transfer.c_plus.k().min(transfer.c_minus.k()),
        });
    }
    for (idx, u) in users.iter().enumerate() {
        for (what, value) in [("r_plus", u.r_plus), ("r_minus", u.r_minus)] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                let _ = idx;
                return Err(Error::OutOfRange { what, value });
            }
        }
    }
    let mut mean_plus = vec![0.0f64; k];
    let mut mean_minus = vec![0.0f64; k];
    for (node, params) in users.iter().enumerate() {
        let c = partition.class_of(node);
        mean_plus[c] += params.r_plus;
        mean_minus[c] += params.r_minus;
    }
    for (u, &size) in partition.sizes().iter().enumerate() {
        mean_plus[u] /= size as f64;
        mean_minus[u] /= size as f64;
    }
    let b_plus = transfer.c_plus.map(|u, _, c| mean_plus[u] * c);
    let b_minus = transfer.c_minus.map(|u, _, c| mean_minus[u] * c);
    ContentModelPair::new(partition.clone(), b_plus, b_minus)
}

/// Per-content-type estimation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationDiag {
    /// Exposure opportunities per class pair (sum of i_u * s_v over steps).
    pub opportunities: SquareMatrix,
    /// Successful transfers per class pair.
    pub successes: SquareMatrix,
    /// Class pairs with zero observed opportunities; their estimate is 0.
    pub unobserved: Vec<(usize, usize)>,
}

/// Result of estimating both block matrices from a labeled corpus.
#[derive(Debug, Clone)]
pub struct BlockEstimate {
    pub models: ContentModelPair,
    pub plus: EstimationDiag,
    pub minus: EstimationDiag,
}

/// Estimate both block matrices from labeled cascades with transfer logs.
///
/// Records are assumed to come from unit infectious period runs, so the
/// infectious set at step t is exactly the set infected at step t.
pub fn estimate_block_matrices(
    cascades: &[LabeledCascade],
    partition: &Partition,
) -> Result<BlockEstimate> {
    estimate_block_matrices_smoothed(cascades, partition, 0.0)
}

/// Same as `estimate_block_matrices` with a Laplace pseudo-count: each class
/// pair is treated as having `pseudo_count` extra successes and failures.
pub fn estimate_block_matrices_smoothed(
    cascades: &[LabeledCascade],
    partition: &Partition,
    pseudo_count: f64,
) -> Result<BlockEstimate> {
    if pseudo_count < 0.0 || !pseudo_count.is_finite() {
        return Err(Error::OutOfRange {
            what: "pseudo_count",
            value: pseudo_count,
        });
    }
    let plus = accumulate(cascades, partition, ContentLabel::True)?;
    let minus = accumulate(cascades, partition, ContentLabel::False)?;
    let b_plus = rate_matrix(&plus, pseudo_count);
    let b_minus = rate_matrix(&minus, pseudo_count);
    Ok(BlockEstimate {
        models: ContentModelPair::new(partition.clone(), b_plus, b_minus)?,
        plus,
        minus,
    })
}

fn accumulate(
    cascades: &[LabeledCascade],
    partition: &Partition,
    label: ContentLabel,
) -> Result<EstimationDiag> {
    let k = partition.num_classes();
    let mut opportunities = SquareMatrix::zeros(k);
    let mut successes = SquareMatrix::zeros(k);
    let mut seen = false;
    for cascade in cascades.iter().filter(|c| c.label == label) {
        seen = true;
        let record = &cascade.record;
        record.validate(k)?;
        let transfers = record
            .transfers
            .as_ref()
            .ok_or(Error::MissingTransferLog)?;
        // Susceptible counts before step 0: everyone not seeded.
        let mut s_counts: Vec<f64> = partition
            .sizes()
            .iter()
            .zip(&record.steps[0])
            .map(|(&size, &seeded)| size as f64 - seeded as f64)
            .collect();
        for (t, events) in transfers.iter().enumerate() {
            let i_counts = &record.steps[t];
            for u in 0..k {
                if i_counts[u] == 0 {
                    continue;
                }
                for v in 0..k {
                    opportunities.set(
                        u,
                        v,
                        opportunities.get(u, v) + i_counts[u] as f64 * s_counts[v],
                    );
                }
            }
            for event in events {
                for (u, &h) in event.hits.iter().enumerate() {
                    if h > 0 {
                        successes.set(u, event.class, successes.get(u, event.class) + h as f64);
                    }
                }
            }
            for (v, &newly) in record.steps[t + 1].iter().enumerate() {
                s_counts[v] -= newly as f64;
            }
        }
    }
    if !seen {
        return Err(Error::InsufficientData { label });
    }
    let unobserved = opportunities
        .iter()
        .filter(|&(_, _, opp)| opp == 0.0)
        .map(|(u, v, _)| (u, v))
        .collect();
    Ok(EstimationDiag {
        opportunities,
        successes,
        unobserved,
    })
}

fn rate_matrix(diag: &EstimationDiag, pseudo_count: f64) -> SquareMatrix {
    diag.opportunities.map(|u, v, opp| {
        let denom = opp + 2.0 * pseudo_count;
        if denom == 0.0 {
            0.0
        } else {
            ((diag.successes.get(u, v) + pseudo_count) / denom).min(1.0)
        }
    })
}

/// Merge every class smaller than `threshold_fraction * n_total` into a
/// single residual class, in one pass.
///
/// Returns the merged partition and a remap vector from old class index to
/// new class index. Surviving classes keep their relative order and the
/// residual class (if any) comes last. With no small classes the partition is
/// returned unchanged and the remap is the identity.
pub fn merge_small_partitions(
    partition: &Partition,
    threshold_fraction: f64,
) -> Result<(Partition, Vec<usize>)> {
    if !threshold_fraction.is_finite() || !(0.0..=1.0).contains(&threshold_fraction) {
        return Err(Error::OutOfRange {
            what: "threshold_fraction",
            value: threshold_fraction,
        });
    }
    let cutoff = threshold_fraction * partition.n_total() as f64;
    let small: Vec<bool> = partition
        .sizes()
        .iter()
        .map(|&s| (s as f64) < cutoff)
        .collect();
    if small.iter().all(|&b| !b) {
        let identity = (0..partition.num_classes()).collect();
        return Ok((partition.clone(), identity));
    }
    let n_large = small.iter().filter(|&&b| !b).count();
    let mut remap = vec![0usize; partition.num_classes()];
    let mut next = 0usize;
    for (c, &is_small) in small.iter().enumerate() {
        if is_small {
            // All small classes share the final index. With every class
            // small, the residual class is the only class (index 0).
            remap[c] = n_large;
        } else {
            remap[c] = next;
            next += 1;
        }
    }
    let class_of = partition
        .class_labels()
        .iter()
        .map(|&c| remap[c])
        .collect();
    Ok((Partition::from_class_of(class_of)?, remap))
}
