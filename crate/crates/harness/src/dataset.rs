//! Labeled cascade corpora: fabrication from known ground truth, JSONL
//! persistence, class remapping, and the fit-and-replay evaluation
//! pipeline.

use anyhow::{bail, Context, Result};
use dropcast_core::{
    estimate_block_matrices, merge_small_partitions, replay_with_dropouts,
    run_cascade_with_transfers, CascadeRecord, ContentLabel, ContentModelPair, LabeledCascade,
    Partition, SbmModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::config::{DatasetGenConfig, NamedPolicy};
use crate::sweep::{derive_seed, synthetic_matrices, uniform_seeds};

/// Fabricate a labeled corpus from a known ground-truth content pair.
/// Labels alternate so both classes of content are equally represented;
/// every record carries transfer logs so it can be re-estimated and
/// replayed.
pub fn generate_dataset(
    config: &DatasetGenConfig,
) -> Result<(Partition, ContentModelPair, Vec<LabeledCascade>)> {
    config.validate()?;
    let partition = config.partition()?;
    let base = config.base()?;
    let (b_plus, b_minus) = synthetic_matrices(&base, config.x, config.y)?;
    let models = ContentModelPair::new(partition.clone(), b_plus.clone(), b_minus.clone())?;
    let real_plus = SbmModel::new(partition.clone(), b_plus)?;
    let real_minus = SbmModel::new(partition.clone(), b_minus)?;
    let n = partition.n_total();
    let mut cascades = Vec::with_capacity(config.cascades);
    for i in 0..config.cascades {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, 1, i as u64));
        let seeds = uniform_seeds(n, config.n_seeds, &mut rng);
        let (label, model) = if i % 2 == 0 {
            (ContentLabel::False, &real_minus)
        } else {
            (ContentLabel::True, &real_plus)
        };
        let record = run_cascade_with_transfers(model, &seeds, 1, &mut rng)?;
        cascades.push(LabeledCascade { label, record });
    }
    Ok((partition, models, cascades))
}

/// Write one labeled cascade per line.
pub fn write_labeled_jsonl(path: &Path, cascades: &[LabeledCascade]) -> Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for cascade in cascades {
        serde_json::to_writer(&mut out, cascade)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a labeled JSONL corpus; blank lines are ignored.
pub fn read_labeled_jsonl(path: &Path) -> Result<Vec<LabeledCascade>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let reader = std::io::BufReader::new(file);
    let mut cascades = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cascade: LabeledCascade = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        cascades.push(cascade);
    }
    if cascades.is_empty() {
        bail!("{} contains no cascades", path.display());
    }
    Ok(cascades)
}

/// Rewrite a record's per-class vectors under a class remap (old class u
/// folds into remap[u]).
pub fn remap_record(record: &CascadeRecord, remap: &[usize], new_k: usize) -> CascadeRecord {
    let fold = |counts: &[usize]| -> Vec<usize> {
        let mut out = vec![0usize; new_k];
        for (old, &c) in counts.iter().enumerate() {
            out[remap[old]] += c;
        }
        out
    };
    CascadeRecord {
        seeds: record.seeds.clone(),
        steps: record.steps.iter().map(|s| fold(s)).collect(),
        r_inf: record.r_inf,
        transfers: record.transfers.as_ref().map(|steps| {
            steps
                .iter()
                .map(|events| {
                    events
                        .iter()
                        .map(|e| {
                            let mut hits = vec![0u64; new_k];
                            for (old, &h) in e.hits.iter().enumerate() {
                                hits[remap[old]] += h;
                            }
                            dropcast_core::InfectionEvent {
                                class: remap[e.class],
                                hits,
                            }
                        })
                        .collect()
                })
                .collect()
        }),
    }
}

/// Replay metrics for one policy: mean reach and the probability of a
/// cascade staying below the low-size threshold, per content type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub policy: String,
    pub samples_per_label: usize,
    pub true_mean_r_inf: f64,
    pub true_low_prob: f64,
    pub false_mean_r_inf: f64,
    pub false_low_prob: f64,
}

/// Outcome of the full fit-and-replay pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub total_cascades: usize,
    pub classes_before_merge: usize,
    pub classes_after_merge: usize,
    /// Low-size threshold used for the replay metrics (absolute count).
    pub low_threshold: f64,
    pub policies: Vec<PolicyMetrics>,
}

/// Fit block matrices to a labeled corpus and replay sampled cascades
/// under each policy.
///
/// Small classes (below `merge_fraction` of the user count) are merged
/// first. `samples = 0` replays every cascade of each label exactly once;
/// a positive count draws that many with replacement. An unaltered
/// ("control") policy replays records verbatim, so with `samples = 0` its
/// mean reach equals the corpus mean exactly.
pub fn run_dataset_pipeline(
    cascades: &[LabeledCascade],
    partition: &Partition,
    policies: &[NamedPolicy],
    samples: usize,
    low_threshold: f64,
    merge_fraction: f64,
    master_seed: u64,
) -> Result<PipelineReport> {
    if cascades.is_empty() {
        bail!("empty dataset");
    }
    let (merged, remap) = merge_small_partitions(partition, merge_fraction)?;
    let new_k = merged.num_classes();
    let remapped: Vec<LabeledCascade> = cascades
        .iter()
        .map(|c| LabeledCascade {
            label: c.label,
            record: remap_record(&c.record, &remap, new_k),
        })
        .collect();
    let estimate = estimate_block_matrices(&remapped, &merged)?;
    let models = &estimate.models;

    let mut report = PipelineReport {
        total_cascades: cascades.len(),
        classes_before_merge: partition.num_classes(),
        classes_after_merge: new_k,
        low_threshold,
        policies: Vec::new(),
    };
    for policy in policies {
        let mut metrics = PolicyMetrics {
            policy: policy.name.clone(),
            samples_per_label: 0,
            true_mean_r_inf: 0.0,
            true_low_prob: 0.0,
            false_mean_r_inf: 0.0,
            false_low_prob: 0.0,
        };
        for label in [ContentLabel::True, ContentLabel::False] {
            let pool: Vec<&LabeledCascade> =
                remapped.iter().filter(|c| c.label == label).collect();
            if pool.is_empty() {
                bail!("dataset has no {label:?}-labeled cascades");
            }
            // Sample picks and replay coin flips are derived from the
            // label and index only, never the policy, so every policy
            // replays the same draws: comparisons are paired.
            let label_tag = match label {
                ContentLabel::True => 1u64,
                ContentLabel::False => 2u64,
            };
            let picks: Vec<&LabeledCascade> = if samples == 0 {
                pool.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    master_seed,
                    0xD5 ^ label_tag,
                    0,
                ));
                use rand::Rng;
                (0..samples).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
            };
            let mut total = 0.0;
            let mut low = 0usize;
            for (i, pick) in picks.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    master_seed,
                    0x8E ^ label_tag,
                    i as u64,
                ));
                let replayed =
                    replay_with_dropouts(&pick.record, models, policy.spec.as_config(), &mut rng)?;
                total += replayed.record.r_inf as f64;
                if (replayed.record.r_inf as f64) < low_threshold {
                    low += 1;
                }
            }
            let n = picks.len() as f64;
            metrics.samples_per_label = picks.len();
            match label {
                ContentLabel::True => {
                    metrics.true_mean_r_inf = total / n;
                    metrics.true_low_prob = low as f64 / n;
                }
                ContentLabel::False => {
                    metrics.false_mean_r_inf = total / n;
                    metrics.false_low_prob = low as f64 / n;
                }
            }
        }
        report.policies.push(metrics);
    }
    Ok(report)
}
