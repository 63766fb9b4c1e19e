//! Grid sweeps over the synthetic two-matrix family: build the content
//! pair per cell, run paired true/false trials, and aggregate statistics.

use anyhow::Result;
use dropcast_core::{
    cascade_statistics, feasibility_convex, feasibility_lp, run_algorithm1, run_cascade,
    CascadeStats, ContentModelPair, Partition, SbmModel, SolverChoice, SquareMatrix, StepCounts,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SyntheticConfig;

/// Build the true/false content pair from a shared base: the true matrix
/// gains `x` on the diagonal and loses `y` off it; the false matrix is the
/// mirror image, so the two always sum to twice the base.
pub fn synthetic_matrices(
    base: &SquareMatrix,
    x: f64,
    y: f64,
) -> Result<(SquareMatrix, SquareMatrix)> {
    let plus = base.map(|u, v, b| if u == v { b + x } else { b - y });
    let minus = base.map(|u, v, b| if u == v { b - x } else { b + y });
    for (name, m) in [("true-content", &plus), ("false-content", &minus)] {
        if !m.is_probability_matrix() {
            anyhow::bail!(
                "{name} matrix leaves [0,1] at x={x}, y={y}; adjust base or ranges"
            );
        }
    }
    Ok((plus, minus))
}

/// One grid cell's outcome. A cell whose matrices cannot be built carries
/// the skip reason instead of statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub x: f64,
    pub y: f64,
    /// Whether the controller's hard constraint is satisfiable at the
    /// start of a cascade (evaluated at the proportional seed split).
    /// Absent for baseline sweeps, which have no constraint.
    pub feasible_at_start: Option<bool>,
    /// Reason this cell was skipped, if it was.
    pub skipped: Option<String>,
    pub true_stats: Option<CascadeStats>,
    pub false_stats: Option<CascadeStats>,
}

/// All cells of a sweep, in lexicographic (x, y) order, plus the config
/// that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SyntheticConfig,
    pub cells: Vec<SweepCell>,
}

/// Equal-weight collation of per-cell means across the grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Collation {
    pub cells_counted: usize,
    pub true_mean: f64,
    pub false_mean: f64,
    pub true_low_fraction: f64,
    pub false_low_fraction: f64,
}

impl SweepResult {
    pub fn all_skipped(&self) -> bool {
        self.cells.iter().all(|c| c.skipped.is_some())
    }

    /// Average the per-cell statistics with equal weight per cell,
    /// ignoring skipped cells.
    pub fn collate(&self) -> Option<Collation> {
        let live: Vec<&SweepCell> = self.cells.iter().filter(|c| c.skipped.is_none()).collect();
        if live.is_empty() {
            return None;
        }
        let n = live.len() as f64;
        let mut c = Collation {
            cells_counted: live.len(),
            true_mean: 0.0,
            false_mean: 0.0,
            true_low_fraction: 0.0,
            false_low_fraction: 0.0,
        };
        for cell in &live {
            let t = cell.true_stats.as_ref().expect("live cell has stats");
            let f = cell.false_stats.as_ref().expect("live cell has stats");
            c.true_mean += t.mean_normalized;
            c.false_mean += f.mean_normalized;
            c.true_low_fraction += t.low_fraction;
            c.false_low_fraction += f.low_fraction;
        }
        c.true_mean /= n;
        c.false_mean /= n;
        c.true_low_fraction /= n;
        c.false_low_fraction /= n;
        Some(c)
    }
}

/// SplitMix64 round, used to derive independent per-task seeds from the
/// master seed without overlapping streams.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic seed for (master, task, trial).
pub fn derive_seed(master: u64, task: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(task)).wrapping_add(trial))
}

/// Distinct uniform seed nodes.
pub fn uniform_seeds(n: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < count {
        picked.insert(rng.gen_range(0..n));
    }
    picked.into_iter().collect()
}

/// Seeds split across classes proportionally to class sizes (largest
/// remainder), used to evaluate start-of-run feasibility deterministically.
fn proportional_counts(partition: &Partition, n_seeds: usize) -> StepCounts {
    let n = partition.n_total();
    let k = partition.num_classes();
    let mut i_counts = vec![0usize; k];
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(k);
    let mut assigned = 0usize;
    for (u, &size) in partition.sizes().iter().enumerate() {
        let share = n_seeds as f64 * size as f64 / n as f64;
        i_counts[u] = share.floor() as usize;
        assigned += i_counts[u];
        remainders.push((share - share.floor(), u));
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, u) in remainders.iter().take(n_seeds - assigned) {
        i_counts[u] += 1;
    }
    let s_counts: Vec<usize> = partition
        .sizes()
        .iter()
        .zip(&i_counts)
        .map(|(&size, &i)| size - i)
        .collect();
    StepCounts::new(s_counts, i_counts).expect("proportional counts are consistent")
}

fn run_cell(
    config: &SyntheticConfig,
    partition: &Partition,
    base: &SquareMatrix,
    cell_index: u64,
    x: f64,
    y: f64,
) -> SweepCell {
    let (b_plus, b_minus) = match synthetic_matrices(base, x, y) {
        Ok(pair) => pair,
        Err(e) => {
            return SweepCell {
                x,
                y,
                feasible_at_start: None,
                skipped: Some(e.to_string()),
                true_stats: None,
                false_stats: None,
            }
        }
    };
    let models = ContentModelPair::new(partition.clone(), b_plus.clone(), b_minus.clone())
        .expect("validated matrices");
    let real_plus = SbmModel::new(partition.clone(), b_plus.clone()).expect("validated");
    let real_minus = SbmModel::new(partition.clone(), b_minus).expect("validated");

    let feasible_at_start = config.control.as_config().map(|c| {
        let counts = proportional_counts(partition, config.n_seeds);
        match c.solver {
            SolverChoice::Convex => feasibility_convex(&counts, &b_plus, c.alpha),
            SolverChoice::Lp => feasibility_lp(&counts, &b_plus, c.alpha),
        }
    });

    let n = partition.n_total();
    let mut true_records = Vec::with_capacity(config.trials_per_cell);
    let mut false_records = Vec::with_capacity(config.trials_per_cell);
    for trial in 0..config.trials_per_cell {
        // One child generator per trial; both content types clone it, so
        // they observe the same randomness stream (paired design).
        let mut trial_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, cell_index, trial as u64));
        let seeds = uniform_seeds(n, config.n_seeds, &mut trial_rng);
        let mut rng_true = trial_rng.clone();
        let mut rng_false = trial_rng;
        match config.control.as_config() {
            None => {
                true_records
                    .push(run_cascade(&real_plus, &seeds, 1, &mut rng_true).expect("valid run"));
                false_records
                    .push(run_cascade(&real_minus, &seeds, 1, &mut rng_false).expect("valid run"));
            }
            Some(ctl) => {
                true_records.push(
                    run_algorithm1(&models, &real_plus, &seeds, ctl, &mut rng_true)
                        .expect("valid run")
                        .record,
                );
                false_records.push(
                    run_algorithm1(&models, &real_minus, &seeds, ctl, &mut rng_false)
                        .expect("valid run")
                        .record,
                );
            }
        }
    }
    SweepCell {
        x,
        y,
        feasible_at_start,
        skipped: None,
        true_stats: Some(cascade_statistics(&true_records, n).expect("non-empty records")),
        false_stats: Some(cascade_statistics(&false_records, n).expect("non-empty records")),
    }
}

/// Run the full grid. Cells execute in a parallel worker pool and are
/// reduced in grid order, so results are deterministic for a fixed
/// master seed regardless of thread count.
pub fn run_sweep(config: &SyntheticConfig) -> Result<SweepResult> {
    config.validate()?;
    let partition = config.partition()?;
    let base = config.base()?;
    let xs = config.x_range.points();
    let ys = config.y_range.points();
    let grid: Vec<(u64, f64, f64)> = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
        .enumerate()
        .map(|(i, (x, y))| (i as u64, x, y))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(i, x, y)| run_cell(config, &partition, &base, i, x, y))
        .collect();
    Ok(SweepResult {
        config: config.clone(),
        cells,
    })
}
