//! The seeded floor-contact task used for micro-training runs and curves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{micro_train_with, rollout, sample_query, CurveRow, Example, MicroTask, MicroTrainConfig, MicroTrainReport};
use crate::error::Result;
use crate::io::synth::{init_spec, synthesize_scenario, ScenarioConfig, SyntheticScenario};
use crate::metrics::{contact_labels, contact_prf};
use crate::network::GraftWeights;
use crate::scene::SpatialIndex;
use crate::training::LossWeights;

pub const TASK_NAMES: [&str; 1] = ["floor-contact"];

#[derive(Clone, Debug, PartialEq)]
pub struct ContactBenchConfig {
    pub scenario: ScenarioConfig,
    /// Held-out queries drawn at `eval_difficulty` from seeds `eval_seed..`.
    pub eval_count: usize,
    pub eval_seed: u64,
    pub eval_difficulty: f64,
    /// Noise multiplier of ordinary training queries.
    pub train_difficulty: f64,
    pub hard_fraction: f64,
    pub hard_multiplier: f64,
    pub contact_tau: f64,
}

impl Default for ContactBenchConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            eval_count: 16,
            eval_seed: 1000,
            eval_difficulty: 2.0,
            train_difficulty: 1.0,
            hard_fraction: 0.5,
            hard_multiplier: 2.0,
            contact_tau: 0.05,
        }
    }
}

pub struct ContactBench {
    pub config: ContactBenchConfig,
    pub scenario: SyntheticScenario,
    pub index: SpatialIndex,
    pub eval: Vec<Example>,
    gt_labels: Vec<Vec<bool>>,
}

impl ContactBench {
    pub fn new(config: ContactBenchConfig) -> Result<Self> {
        let scenario = synthesize_scenario(&config.scenario)?;
        let index = SpatialIndex::new(scenario.cloud.clone());
        let spec = init_spec(config.eval_difficulty);
        let mut eval = Vec::with_capacity(config.eval_count);
        for i in 0..config.eval_count {
            let gt = &scenario.gt[i % scenario.gt.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(config.eval_seed + i as u64);
            eval.push(Example {
                query: sample_query(gt, &spec, &mut rng)?,
                gt: gt.clone(),
                scale: 1.0,
            });
        }
        let gt_labels = eval
            .iter()
            .map(|ex| contact_labels(&scenario.model, &scenario.model.forward(&ex.gt)?, &index, config.contact_tau))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            scenario,
            index,
            eval,
            gt_labels,
        })
    }

    pub fn task(&self) -> MicroTask<'_> {
        MicroTask {
            model: &self.scenario.model,
            scene: &self.index,
            gt_pool: self.scenario.gt.clone(),
            spec: init_spec(self.config.train_difficulty),
            hard_fraction: self.config.hard_fraction,
            hard_multiplier: self.config.hard_multiplier,
        }
    }

    /// Mean contact F1 over the held-out queries after each of `0..=steps`
    /// refinement steps.
    pub fn f1_by_step(&self, w: &GraftWeights, steps: usize) -> Result<Vec<f64>> {
        let model = &self.scenario.model;
        let mut out = vec![0.0; steps + 1];
        for (ex, gl) in self.eval.iter().zip(&self.gt_labels) {
            let mut states = vec![ex.query.clone()];
            states.extend(rollout(w, model, &self.index, &ex.query, steps)?);
            for (k, s) in states.iter().enumerate() {
                let l = contact_labels(model, &model.forward(s)?, &self.index, self.config.contact_tau)?;
                out[k] += contact_prf(&l, gl)?.f1 / self.eval.len() as f64;
            }
        }
        Ok(out)
    }

    /// Mean per-query rollout loss over the held-out queries.
    pub fn rollout_loss(&self, w: &GraftWeights, steps: usize, lw: &LossWeights) -> Result<f64> {
        Ok(self.task().batch_loss(w, &self.eval, steps, lw)? / self.eval.len().max(1) as f64)
    }

    pub fn train(&self, w: &mut GraftWeights, cfg: &MicroTrainConfig) -> Result<MicroTrainReport> {
        micro_train_with(w, &self.task(), cfg, |_, _, _| Ok(()))
    }
}

/// One row of a quality-versus-iteration curve.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct QualityRow {
    pub iteration: usize,
    pub train_loss: f64,
    /// Held-out F1 after a full rollout, measured after this iteration.
    pub f1: f64,
    pub wall_ms: f64,
}

/// Trains while measuring held-out F1 every `every` iterations (and after
/// the last one).
pub fn quality_curve(
    bench: &ContactBench,
    w: &mut GraftWeights,
    cfg: &MicroTrainConfig,
    steps: usize,
    every: usize,
) -> Result<(Vec<QualityRow>, MicroTrainReport)> {
    let mut rows = vec![QualityRow {
        iteration: 0,
        train_loss: f64::NAN,
        f1: bench.f1_by_step(w, steps)?[steps],
        wall_ms: 0.0,
    }];
    let last = cfg.iterations.saturating_sub(1);
    let report = micro_train_with(w, &bench.task(), cfg, |k, w, row: &CurveRow| {
        if (k + 1) % every.max(1) == 0 || k == last {
            rows.push(QualityRow {
                iteration: k + 1,
                train_loss: row.loss,
                f1: bench.f1_by_step(w, steps)?[steps],
                wall_ms: row.wall_ms,
            });
        }
        Ok(())
    })?;
    Ok((rows, report))
}
