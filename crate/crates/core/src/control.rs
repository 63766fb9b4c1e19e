//! Step-by-step containment control loops.
//!
//! Each step observes the current susceptible/infectious class counts,
//! solves for a dropout matrix using the *model* networks (the fitted
//! true/false block matrices), applies it to the *real* network, and
//! simulates one infection step on the altered network. The loop runs until
//! the cascade dies out or a step cap is reached.
//!
//! Two loops are exposed: `run_algorithm1` dispatches on the configured
//! solver (exponential-form or linearized, each falling back to the soft
//! trade-off when its hard constraint is infeasible), while `run_algorithm2`
//! always uses the linearized solver with the soft fallback. A third entry
//! point, `replay_with_dropouts`, applies the same control policy to a
//! recorded cascade by thinning its logged transfer events instead of
//! simulating fresh ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{
    apply_dropout, feasibility_convex, feasibility_lp, solve_convex, solve_lp, solve_soft,
    DropoutMatrix, SolverReport, StepCounts,
};
use crate::error::{Error, Result};
use crate::fit::ContentModelPair;
use crate::graph::{class_counts, SbmModel};
use crate::sir::{CascadeRecord, SirState};

/// Which per-step optimizer the control loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverChoice {
    #[serde(rename = "convex")]
    Convex,
    #[serde(rename = "lp-with-soft-fallback")]
    Lp,
}

/// Parameters of a controlled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Required expected growth factor for true content (the constraint
    /// target is `alpha * |I_t|`).
    pub alpha: f64,
    /// Weight of the true-content term in the soft fallback objective.
    pub lambda: f64,
    pub solver: SolverChoice,
    /// Hard cap on executed steps, guarding against non-termination.
    pub max_steps: usize,
    /// Base RNG seed; harness code derives per-trial generators from it.
    pub seed: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            alpha: 1.5,
            lambda: 1.0,
            solver: SolverChoice::Lp,
            max_steps: 200,
            seed: 0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::OutOfRange {
                what: "alpha",
                value: self.alpha,
            });
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::OutOfRange {
                what: "lambda",
                value: self.lambda,
            });
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput(
                "max_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A controlled cascade: the usual record plus one solver report per
/// executed step (the report's `branch` field records which formulation
/// produced the applied dropout matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledRunRecord {
    #[serde(flatten)]
    pub record: CascadeRecord,
    pub reports: Vec<SolverReport>,
}

enum LoopKind {
    /// Dispatch on `config.solver`.
    Configured,
    /// Always linearized-with-soft-fallback, regardless of config.
    ForcedLp,
}

/// Control loop with a pluggable per-step solver. The solver named in
/// `config` is tried first each step; when its hard constraint cannot be
/// met, the soft trade-off is used for that step instead.
pub fn run_algorithm1<R: Rng>(
    models: &ContentModelPair,
    real_model: &SbmModel,
    seeds: &[usize],
    config: &ControlConfig,
    rng: &mut R,
) -> Result<ControlledRunRecord> {
    run_controlled(models, real_model, seeds, config, rng, LoopKind::Configured)
}

/// Control loop fixed to the linearized solver: each step takes the
/// feasible linear program when the constraint can be met and the soft
/// trade-off otherwise.
pub fn run_algorithm2<R: Rng>(
    models: &ContentModelPair,
    real_model: &SbmModel,
    seeds: &[usize],
    config: &ControlConfig,
    rng: &mut R,
) -> Result<ControlledRunRecord> {
    run_controlled(models, real_model, seeds, config, rng, LoopKind::ForcedLp)
}

fn run_controlled<R: Rng>(
    models: &ContentModelPair,
    real_model: &SbmModel,
    seeds: &[usize],
    config: &ControlConfig,
    rng: &mut R,
    kind: LoopKind,
) -> Result<ControlledRunRecord> {
    config.validate()?;
    if models.partition().sizes() != real_model.partition().sizes() {
        return Err(Error::DimensionMismatch {
            what: "model and real partitions",
            expected: models.partition().num_classes(),
            found: real_model.partition().num_classes(),
        });
    }
    let partition = real_model.partition();
    let b_minus = models.minus().block();
    let b_plus = models.plus().block();

    let mut state = SirState::initial(partition.n_total(), seeds)?;
    let mut steps = vec![class_counts(partition, seeds)?];
    let mut reports = Vec::new();

    let mut executed = 0usize;
    while state.infected_count() > 0 && executed < config.max_steps {
        let counts = StepCounts::from_state(&state, partition);
        let report = solve_step(&counts, b_minus, b_plus, config, &kind)?;
        let altered = apply_dropout(real_model, &report.dropout)?;
        let (next, new_nodes) = crate::sir::sir_step(&state, &altered, 1, rng)?;
        state = next;
        steps.push(class_counts(partition, &new_nodes)?);
        reports.push(report);
        executed += 1;
    }

    let r_inf = steps.iter().map(|s| s.iter().sum::<usize>()).sum();
    Ok(ControlledRunRecord {
        record: CascadeRecord {
            seeds: seeds.to_vec(),
            steps,
            r_inf,
            transfers: None,
        },
        reports,
    })
}

fn solve_step(
    counts: &StepCounts,
    b_minus: &crate::matrix::SquareMatrix,
    b_plus: &crate::matrix::SquareMatrix,
    config: &ControlConfig,
    kind: &LoopKind,
) -> Result<SolverReport> {
    let use_convex = match kind {
        LoopKind::Configured => config.solver == SolverChoice::Convex,
        LoopKind::ForcedLp => false,
    };
    if use_convex {
        if feasibility_convex(counts, b_plus, config.alpha) {
            solve_convex(counts, b_minus, b_plus, config.alpha)
        } else {
            solve_soft(counts, b_minus, b_plus, config.lambda)
        }
    } else if feasibility_lp(counts, b_plus, config.alpha) {
        solve_lp(counts, b_minus, b_plus, config.alpha)
    } else {
        solve_soft(counts, b_minus, b_plus, config.lambda)
    }
}

/// Re-run a recorded cascade (which must carry its transfer log) under a
/// control policy, dropping logged transfer events instead of simulating
/// fresh ones.
///
/// Each recorded infection event survives with probability
/// `1 - prod_u (1 - f_u * d_uv)^{h_u}`, where `h_u` counts the event's
/// successful exposures from class u, `d` is the dropout matrix solved from
/// the *replayed* state, and `f_u` is the fraction of recorded class-u
/// infectious nodes still infected in the replay. A node whose infection
/// event is dropped stays susceptible. With `config = None` no alteration is
/// applied and the replay reproduces the recorded cascade exactly.
///
/// Infectious periods are reconstructed as one step (records do not carry
/// the infectious period, and every recorded event already names the step
/// of each exposure).
pub fn replay_with_dropouts<R: Rng>(
    record: &CascadeRecord,
    models: &ContentModelPair,
    config: Option<&ControlConfig>,
    rng: &mut R,
) -> Result<ControlledRunRecord> {
    let partition = models.partition();
    let k = partition.num_classes();
    record.validate(k)?;
    let transfers = record
        .transfers
        .as_ref()
        .ok_or(Error::MissingTransferLog)?;
    if let Some(cfg) = config {
        cfg.validate()?;
    }
    let b_minus = models.minus().block();
    let b_plus = models.plus().block();

    let mut s_counts: Vec<usize> = partition
        .sizes()
        .iter()
        .zip(&record.steps[0])
        .map(|(&size, &seeded)| size - seeded)
        .collect();
    let mut alive = record.steps[0].clone();
    let mut steps = vec![alive.clone()];
    let mut reports = Vec::new();

    let max_steps = config.map_or(usize::MAX, |c| c.max_steps);
    for (t, events) in transfers.iter().enumerate() {
        if steps.len() > max_steps || alive.iter().all(|&x| x == 0) {
            break;
        }
        let dropout = match config {
            None => DropoutMatrix::ones(k),
            Some(cfg) => {
                let counts = StepCounts::new(s_counts.clone(), alive.clone())?;
                // Replay honors the configured solver, like run_algorithm1.
                let report = solve_step(&counts, b_minus, b_plus, cfg, &LoopKind::Configured)?;
                let d = report.dropout.clone();
                reports.push(report);
                d
            }
        };
        // Fraction of each recorded source class still infectious here.
        let f: Vec<f64> = record.steps[t]
            .iter()
            .zip(&alive)
            .map(|(&recorded, &live)| {
                if recorded == 0 {
                    0.0
                } else {
                    live as f64 / recorded as f64
                }
            })
            .collect();
        let mut survived = vec![0usize; k];
        for event in events {
            let mut escape = 1.0f64;
            for (u, &h) in event.hits.iter().enumerate() {
                if h > 0 {
                    let keep = (f[u] * dropout.get(u, event.class)).min(1.0);
                    escape *= (1.0 - keep).powi(h as i32);
                }
            }
            // escape = 0 covers the no-alteration case exactly: no coin is
            // flipped, so the identity replay consumes no randomness.
            let survives = escape <= 0.0 || rng.gen::<f64>() < 1.0 - escape;
            if survives {
                survived[event.class] += 1;
            }
        }
        for v in 0..k {
            s_counts[v] -= survived[v];
        }
        alive = survived.clone();
        steps.push(survived);
    }

    let r_inf = steps.iter().map(|s| s.iter().sum::<usize>()).sum();
    Ok(ControlledRunRecord {
        record: CascadeRecord {
            seeds: record.seeds.clone(),
            steps,
            r_inf,
            transfers: None,
        },
        reports,
    })
}

/// Step-over-step infectious growth factors `|I_{t+1}| / |I_t|`, one per
/// consecutive pair with a nonzero denominator.
pub fn empirical_branching_ratios(record: &ControlledRunRecord) -> Result<Vec<f64>> {
    let sums: Vec<usize> = record
        .record
        .steps
        .iter()
        .map(|s| s.iter().sum::<usize>())
        .collect();
    if sums.len() < 2 {
        return Err(Error::InvalidInput(
            "branching ratios need at least two recorded steps".into(),
        ));
    }
    Ok(sums
        .windows(2)
        .filter(|w| w[0] > 0)
        .map(|w| w[1] as f64 / w[0] as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Partition;
    use crate::matrix::SquareMatrix;
    use crate::sir::run_cascade_with_transfers;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: Vec<Vec<f64>>) -> SquareMatrix {
        SquareMatrix::from_rows(rows).unwrap()
    }

    fn two_class_setup(b_real: f64) -> (ContentModelPair, SbmModel) {
        let partition = Partition::from_sizes(&[500, 500]).unwrap();
        let b_plus = mat(vec![vec![0.012, 0.002], vec![0.002, 0.012]]);
        let b_minus = mat(vec![vec![0.008, 0.002], vec![0.002, 0.008]]);
        let models = ContentModelPair::new(partition.clone(), b_plus, b_minus).unwrap();
        let real = SbmModel::new(partition, SquareMatrix::filled(2, b_real)).unwrap();
        (models, real)
    }

    #[test]
    fn empty_seed_set_never_enters_the_loop() {
        let (models, real) = two_class_setup(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let run = run_algorithm1(&models, &real, &[], &ControlConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(run.record.r_inf, 0);
        assert_eq!(run.record.steps, vec![vec![0, 0]]);
        assert!(run.reports.is_empty());
    }

    #[test]
    fn inert_real_network_stops_after_the_seeds() {
        let (models, real) = two_class_setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let run = run_algorithm2(&models, &real, &[0, 600], &ControlConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(run.record.r_inf, 2);
        assert_eq!(run.record.steps, vec![vec![1, 1], vec![0, 0]]);
        assert_eq!(run.reports.len(), 1);
    }

    #[test]
    fn unattainable_target_takes_the_soft_branch_immediately() {
        let (models, real) = two_class_setup(0.01);
        let config = ControlConfig {
            alpha: 50.0, // far beyond what any dropout can deliver
            ..ControlConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let run = run_algorithm2(&models, &real, &[0, 600], &config, &mut rng).unwrap();
        assert_eq!(
            run.reports[0].branch,
            crate::dropout::SolverBranch::SoftLp
        );
    }

    #[test]
    fn zero_alpha_always_takes_the_feasible_branch() {
        let (models, real) = two_class_setup(0.01);
        let config = ControlConfig {
            alpha: 0.0,
            ..ControlConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let run = run_algorithm2(&models, &real, &[0, 600], &config, &mut rng).unwrap();
        assert!(!run.reports.is_empty());
        for report in &run.reports {
            assert_eq!(report.branch, crate::dropout::SolverBranch::Lp);
        }
    }

    #[test]
    fn feasible_branch_reports_meet_the_constraint_target() {
        let (models, real) = two_class_setup(0.01);
        let config = ControlConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let run = run_algorithm2(&models, &real, &[0, 1, 600, 601], &config, &mut rng).unwrap();
        for (t, report) in run.reports.iter().enumerate() {
            if report.branch == crate::dropout::SolverBranch::Lp {
                let i_t: usize = run.record.steps[t].iter().sum();
                assert!(
                    report.constraint_value >= config.alpha * i_t as f64 - 1e-9,
                    "step {t}: constraint {} below target {}",
                    report.constraint_value,
                    config.alpha * i_t as f64
                );
            }
        }
    }

    #[test]
    fn applied_dropouts_are_reproducible_from_the_recorded_trajectory() {
        // Re-derive (S_t, I_t) from the step counts and confirm each logged
        // report is exactly what the solver returns for that state.
        let (models, real) = two_class_setup(0.01);
        let config = ControlConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let run = run_algorithm2(&models, &real, &[0, 600], &config, &mut rng).unwrap();
        let sizes = models.partition().sizes().to_vec();
        let mut s: Vec<usize> = sizes
            .iter()
            .zip(&run.record.steps[0])
            .map(|(&n, &seeded)| n - seeded)
            .collect();
        for (t, report) in run.reports.iter().enumerate() {
            let counts = StepCounts::new(s.clone(), run.record.steps[t].clone()).unwrap();
            let again = solve_step(
                &counts,
                models.minus().block(),
                models.plus().block(),
                &config,
                &LoopKind::ForcedLp,
            )
            .unwrap();
            assert_eq!(again.dropout, report.dropout, "step {t}");
            for v in 0..s.len() {
                s[v] -= run.record.steps[t + 1][v];
            }
        }
    }

    #[test]
    fn partition_mismatch_is_rejected() {
        let (models, _) = two_class_setup(0.01);
        let other = SbmModel::new(
            Partition::from_sizes(&[400, 600]).unwrap(),
            SquareMatrix::filled(2, 0.01),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(run_algorithm1(&models, &other, &[0], &ControlConfig::default(), &mut rng)
            .is_err());
    }

    #[test]
    fn branching_ratio_examples() {
        let rec = |steps: Vec<Vec<usize>>| ControlledRunRecord {
            record: CascadeRecord {
                seeds: (0..steps[0].iter().sum::<usize>()).collect(),
                steps: steps.clone(),
                r_inf: steps.iter().flatten().sum(),
                transfers: None,
            },
            reports: Vec::new(),
        };
        assert_eq!(
            empirical_branching_ratios(&rec(vec![vec![10], vec![15]])).unwrap(),
            vec![1.5]
        );
        assert_eq!(
            empirical_branching_ratios(&rec(vec![vec![10], vec![0]])).unwrap(),
            vec![0.0]
        );
        // Zero-denominator pairs are skipped.
        assert_eq!(
            empirical_branching_ratios(&rec(vec![vec![10], vec![0], vec![0]])).unwrap(),
            vec![0.0]
        );
        assert!(empirical_branching_ratios(&rec(vec![vec![10]])).is_err());
    }

    fn recorded_cascade(seed: u64) -> (ContentModelPair, CascadeRecord) {
        let partition = Partition::from_sizes(&[60, 40]).unwrap();
        let block = mat(vec![vec![0.02, 0.005], vec![0.005, 0.02]]);
        let model = SbmModel::new(partition.clone(), block.clone()).unwrap();
        let models = ContentModelPair::new(
            partition,
            block.clone(),
            mat(vec![vec![0.015, 0.006], vec![0.006, 0.015]]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let record = run_cascade_with_transfers(&model, &[0, 70], 1, &mut rng).unwrap();
        (models, record)
    }

    #[test]
    fn replay_without_alteration_reproduces_the_record_exactly() {
        for seed in 0..20 {
            let (models, record) = recorded_cascade(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(999);
            let replayed = replay_with_dropouts(&record, &models, None, &mut rng).unwrap();
            assert_eq!(replayed.record.steps, record.steps, "seed {seed}");
            assert_eq!(replayed.record.r_inf, record.r_inf);
            assert_eq!(replayed.record.seeds, record.seeds);
            assert!(replayed.reports.is_empty());
            // No randomness may be consumed: a second replay from a
            // different RNG must agree.
            let mut rng2 = ChaCha8Rng::seed_from_u64(12345);
            let again = replay_with_dropouts(&record, &models, None, &mut rng2).unwrap();
            assert_eq!(again.record.steps, replayed.record.steps);
        }
    }

    #[test]
    fn replay_with_total_dropout_keeps_only_the_seeds() {
        // alpha far out of reach forces the soft branch; lambda = 0 with
        // strictly positive false-content entries then drops every pair.
        let (models, record) = recorded_cascade(11);
        let config = ControlConfig {
            alpha: 1e6,
            lambda: 0.0,
            ..ControlConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let replayed = replay_with_dropouts(&record, &models, Some(&config), &mut rng).unwrap();
        assert_eq!(replayed.record.r_inf, record.seeds.len());
        assert_eq!(replayed.record.steps[0], record.steps[0]);
        if record.terminated_at() > 0 {
            assert_eq!(replayed.record.steps[1], vec![0, 0]);
        }
    }

    #[test]
    fn replay_is_a_thinning_of_the_recorded_cascade() {
        let (models, record) = recorded_cascade(13);
        let config = ControlConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let replayed = replay_with_dropouts(&record, &models, Some(&config), &mut rng).unwrap();
        assert!(replayed.record.r_inf <= record.r_inf);
        for (t, step) in replayed.record.steps.iter().enumerate() {
            for (v, &n) in step.iter().enumerate() {
                assert!(n <= record.steps[t][v], "step {t} class {v}");
            }
        }
        assert_eq!(replayed.reports.len() + 1, replayed.record.steps.len());
    }

    #[test]
    fn replay_requires_a_transfer_log() {
        let (models, mut record) = recorded_cascade(17);
        record.transfers = None;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            replay_with_dropouts(&record, &models, None, &mut rng),
            Err(Error::MissingTransferLog)
        ));
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert!(ControlConfig {
            alpha: -1.0,
            ..ControlConfig::default()
        }
        .validate()
        .is_err());
        assert!(ControlConfig {
            lambda: f64::NAN,
            ..ControlConfig::default()
        }
        .validate()
        .is_err());
        assert!(ControlConfig {
            max_steps: 0,
            ..ControlConfig::default()
        }
        .validate()
        .is_err());
        assert!(ControlConfig::default().validate().is_ok());
    }

    #[test]
    fn controlled_record_json_embeds_reports() {
        let (models, real) = two_class_setup(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let run = run_algorithm2(&models, &real, &[0], &ControlConfig::default(), &mut rng)
            .unwrap();
        let json = serde_json::to_string(&run).unwrap();
        assert!(json.contains(r#""seeds":[0]"#));
        assert!(json.contains(r#""reports":["#));
        let back: ControlledRunRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, run);
    }
}
