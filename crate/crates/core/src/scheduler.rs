//! The outer training loop: class-stratified batching, Bernoulli schedule
//! masks, synchronous or asynchronous orchestration of the two stages, and
//! per-iteration reporting.
//!
//! Asynchrony follows the mask-simulated staleness scheme: a level whose
//! mask entry is −1 reads its forward weight from the previous iteration
//! and skips its stage-two update, so any weight read is at most one
//! iteration old.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{validate, HyperParams, NetworkConfig, ScheduleMode};
use crate::data::{to_class_matrix, LabeledDataset};
use crate::error::{LpnError, Result};
use crate::eval::goal_propagation_gap;
use crate::goal::GoalSolveSettings;
use crate::objective::mean_column_nnz;
use crate::stages::{
    level_breakdown, level_ctx, level_params, online_blend, stage_one_best_effort,
    stage_two_node, StageTwoOptions,
};
use crate::state::{init_weights, save_weights, ClassMatrix, IterationRecord, TrainReport, WeightSet};

/// Per-level update/hold draw for one iteration; entries are ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMask {
    pub phi: Vec<i8>,
    pub iteration: usize,
}

/// `L` independent draws, +1 with probability `p`.
pub fn draw_mask(levels: usize, p: f64, rng: &mut ChaCha8Rng, iteration: usize) -> ScheduleMask {
    let phi = (0..levels)
        .map(|_| if rng.random::<f64>() < p { 1 } else { -1 })
        .collect();
    ScheduleMask { phi, iteration }
}

/// Class-stratified batches without replacement within an epoch. Every
/// batch keeps the class-major layout with the same per-class count; the
/// final batch of an epoch may be smaller when the per-class count does
/// not divide evenly.
pub struct BatchIter<'a> {
    source: &'a ClassMatrix,
    k_batch: usize,
    rng: ChaCha8Rng,
    /// Per-class shuffled index queues for the current epoch.
    order: Vec<Vec<usize>>,
    cursor: usize,
}

impl<'a> BatchIter<'a> {
    pub fn new(source: &'a ClassMatrix, fraction: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(LpnError::FractionOutOfRange(fraction));
        }
        let k_batch = ((fraction * source.per_class as f64).ceil() as usize)
            .clamp(1, source.per_class);
        let mut it = BatchIter {
            source,
            k_batch,
            rng,
            order: Vec::new(),
            cursor: 0,
        };
        it.reshuffle();
        Ok(it)
    }

    pub fn k_batch(&self) -> usize {
        self.k_batch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.source.per_class.div_ceil(self.k_batch)
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order = (0..self.source.classes)
            .map(|_| {
                let mut idx: Vec<usize> = (0..self.source.per_class).collect();
                idx.shuffle(&mut self.rng);
                idx
            })
            .collect();
        self.cursor = 0;
    }

    /// Next stratified batch; reshuffles into a new epoch when exhausted.
    pub fn next_batch(&mut self) -> ClassMatrix {
        if self.cursor >= self.source.per_class {
            self.reshuffle();
        }
        let take = self.k_batch.min(self.source.per_class - self.cursor);
        let rows = self.source.data.nrows();
        let mut data = ndarray::Array2::<f64>::zeros((rows, self.source.classes * take));
        for c in 0..self.source.classes {
            for t in 0..take {
                let src = self.source.col_index(c, self.order[c][self.cursor + t]);
                data.column_mut(c * take + t)
                    .assign(&self.source.data.column(src));
            }
        }
        self.cursor += take;
        ClassMatrix::new(data, self.source.classes, take).expect("stratified batch layout")
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub stage_two: StageTwoOptions,
    pub goal: GoalSolveSettings,
    /// Probability of a +1 draw in asynchronous mode.
    pub bernoulli_p: Option<f64>,
    /// Save a weight checkpoint every N iterations (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Record the goal-propagation gap on the full training set each
    /// iteration.
    pub probe_goal_gap: bool,
}

/// Trains on a labeled dataset: samples are arranged class-major with the
/// minimum per-class count, then [`train_class_matrix`] runs the loop.
pub fn train(
    config: &NetworkConfig,
    hp: &HyperParams,
    dataset: &LabeledDataset,
    opts: &TrainOptions,
) -> Result<(WeightSet, TrainReport)> {
    let k_min = dataset
        .class_counts
        .iter()
        .copied()
        .min()
        .unwrap_or(0);
    if dataset.class_counts.len() < 2 {
        return Err(LpnError::SingleClass(dataset.class_counts.len()));
    }
    let cm = to_class_matrix(dataset, k_min)?;
    train_class_matrix(config, hp, &cm, opts)
}

/// The training loop proper, on an already class-structured set.
pub fn train_class_matrix(
    config: &NetworkConfig,
    hp: &HyperParams,
    full_set: &ClassMatrix,
    opts: &TrainOptions,
) -> Result<(WeightSet, TrainReport)> {
    validate(config, hp)?;
    if full_set.classes < 2 {
        return Err(LpnError::SingleClass(full_set.classes));
    }
    if full_set.data.nrows() != config.input_dim {
        return Err(LpnError::ShapeMismatch {
            op: "train",
            expected: format!("{} sample rows", config.input_dim),
            got: format!("{}", full_set.data.nrows()),
        });
    }
    let levels = config.levels();
    let mut current = init_weights(config, hp.seed);
    let mut shadow = current.snapshot();

    // Independent streams so the mask draws of asynchronous mode do not
    // perturb batch sampling; async with p = 1 then matches sync exactly.
    let batch_rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0xd1b5_4a32_d192_ed03);
    let mut batches = BatchIter::new(full_set, hp.batch_fraction, batch_rng)?;

    let bernoulli_p = opts.bernoulli_p.unwrap_or(0.5);
    let mut report = TrainReport::default();

    for iter in 0..hp.max_iters {
        let started = Instant::now();
        let batch = batches.next_batch();
        let mask = match config.schedule_mode {
            ScheduleMode::Synchronous => ScheduleMask {
                phi: vec![1; levels],
                iteration: iter,
            },
            ScheduleMode::Asynchronous => draw_mask(levels, bernoulli_p, &mut mask_rng, iter),
        };

        // The weights each level sees this iteration: its own from the
        // current set when masked in, from one iteration ago when held.
        let effective = mix_weights(&current, &shadow, &mask);

        let outcome = stage_one_best_effort(&batch, &effective, config, hp, &opts.goal)?;
        let state = outcome.state;

        let masked_levels: Vec<usize> = (1..=levels).filter(|l| mask.phi[l - 1] == 1).collect();
        let results: Vec<_> = masked_levels
            .par_iter()
            .map(|&l| {
                let ctx = level_ctx(&state, &effective, config, hp, l);
                let init = level_params(&state, &effective, config, l);
                stage_two_node(&ctx, init, &opts.stage_two)
            })
            .collect::<Result<Vec<_>>>()?;

        // Per-level objective terms at stage-two exit; held levels are
        // evaluated at their unchanged parameters.
        let mut r1 = vec![0.0; levels];
        let mut r2 = vec![0.0; levels];
        let mut r3 = vec![0.0; levels];
        let mut r4 = vec![0.0; levels];
        let mut sparsity = vec![0.0; levels];
        for res in &results {
            let i = res.level - 1;
            r1[i] = res.breakdown.r1;
            r2[i] = res.breakdown.r2;
            r3[i] = res.breakdown.r3;
            r4[i] = res.breakdown.r4;
            sparsity[i] = res.breakdown.sparsity;
        }
        for l in 1..=levels {
            if mask.phi[l - 1] == 1 {
                continue;
            }
            let ctx = level_ctx(&state, &effective, config, hp, l);
            let params = level_params(&state, &effective, config, l);
            let terms = level_breakdown(&ctx, &params)?;
            let i = l - 1;
            r1[i] = terms.r1;
            r2[i] = terms.r2;
            r3[i] = terms.r3;
            r4[i] = terms.r4;
            sparsity[i] = terms.sparsity;
        }
        let total = r1.iter().sum::<f64>()
            + r2.iter().sum::<f64>()
            + r3.iter().sum::<f64>()
            + r4.iter().sum::<f64>()
            + sparsity.iter().sum::<f64>();

        let prev_current = current.snapshot();
        for res in results {
            let l = res.level;
            let blended = online_blend(current.a(l - 1), &res.a, hp.rho)?;
            current.forward[l - 1] = blended;
            if let (Some(b_new), Some(bs)) = (res.b, current.backward.as_mut()) {
                bs[l - 1] = b_new;
            }
        }
        shadow = prev_current;

        let mean_nnz_last = mean_column_nnz(&state.level(levels).u);
        let goal_gap = if opts.probe_goal_gap {
            Some(goal_propagation_gap(
                &current,
                hp,
                full_set,
                config.goal_node,
                &opts.goal,
            )?)
        } else {
            None
        };

        report.iterations.push(IterationRecord {
            iter,
            r1,
            r2,
            r3,
            r4,
            sparsity,
            total,
            goal_overlap: outcome.goal_overlap,
            mean_nnz_last,
            mask: mask.phi.clone(),
            wall_secs: started.elapsed().as_secs_f64(),
            goal_failures: usize::from(outcome.goal_failure.is_some()),
            goal_gap,
        });

        if opts.checkpoint_every > 0 && (iter + 1) % opts.checkpoint_every == 0 {
            if let Some(dir) = &opts.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                save_weights(&dir.join(format!("checkpoint_{:05}.lpnw", iter + 1)), &current)?;
            }
        }
    }

    Ok((current, report))
}

fn mix_weights(current: &WeightSet, shadow: &WeightSet, mask: &ScheduleMask) -> WeightSet {
    // A_{l-1} and B_l both belong to level l's parameter set, so both
    // follow φ(l). mask index is 0-based on levels.
    let forward = current
        .forward
        .iter()
        .zip(shadow.forward.iter())
        .enumerate()
        .map(|(i, (cur, old))| {
            if mask.phi[i] == 1 {
                cur.clone()
            } else {
                old.clone()
            }
        })
        .collect();
    let backward = match (&current.backward, &shadow.backward) {
        (Some(cur), Some(old)) => Some(
            cur.iter()
                .zip(old.iter())
                .enumerate()
                .map(|(i, (c, o))| if mask.phi[i] == 1 { c.clone() } else { o.clone() })
                .collect(),
        ),
        _ => None,
    };
    WeightSet { forward, backward }
}
