//! Rollout loss, query sampling, the learning-rate schedule and a
//! desk-scale trainer for micro networks.
//!
//! The trainer fits the output layers of selected decoder heads. Each
//! rollout step is supervised on its own output with the step input held
//! fixed; the loss gradient with respect to the raw head outputs comes from
//! central differences and is chained onto the output-layer weights
//! through the cached hidden activations.

pub mod bench;
mod loss;
mod sampling;

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use loss::{step_loss, LossBreakdown, LossTarget, LossWeights};
pub use sampling::{sample_query, PerturbationSpec, TrainSchedule, REFERENCE_TOTAL};

use crate::body_model::{absorb_scale, BodyModel, HumanState};
use crate::error::{GraftError, Result};
use crate::network::ops::gelu_grad;
use crate::network::weights::{Linear, Mlp};
use crate::network::{apply_gradient, decode_heads, transformer_forward, GraftWeights, HeadOutputs};
use crate::refine::{build_tokens, refine_step};
use crate::scene::{NearestNeighbor, SpatialIndex};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Updates `params[indices[i]]` with `grad[i]`.
    pub fn step(&mut self, params: &mut [f64], indices: &[usize], grad: &[f64], lr: f64) {
        assert_eq!(indices.len(), grad.len());
        assert_eq!(indices.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (&i, &g)) in indices.iter().zip(grad).enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// States visited by `steps` refinement steps from `query`, excluding it.
pub fn rollout(
    w: &GraftWeights,
    model: &BodyModel,
    scene: &dyn NearestNeighbor,
    query: &HumanState,
    steps: usize,
) -> Result<Vec<HumanState>> {
    let mut out = Vec::with_capacity(steps);
    let mut s = query.clone();
    for _ in 0..steps {
        s = refine_step(model, scene, None, w, &s)?.state;
        out.push(s.clone());
    }
    Ok(out)
}

/// One training example: a query, its ground truth and the scale the
/// scene is viewed at.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub query: HumanState,
    pub gt: HumanState,
    pub scale: f64,
}

/// How the random global scale enters a training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ScaleAugment {
    Off,
    /// Query, ground truth and scene scaled together.
    Joint,
    /// Only the query is scaled, leaving a metric mismatch to correct.
    Query,
}

/// Everything the trainer samples from.
pub struct MicroTask<'a> {
    pub model: &'a BodyModel,
    pub scene: &'a SpatialIndex,
    pub gt_pool: Vec<HumanState>,
    pub spec: PerturbationSpec,
    /// Share of queries drawn with `hard_multiplier` times the noise.
    pub hard_fraction: f64,
    pub hard_multiplier: f64,
}

impl MicroTask<'_> {
    /// Draws a query and applies the scale augmentation.
    pub fn sample<R: Rng>(&self, rng: &mut R, scale_range: (f64, f64), mode: ScaleAugment) -> Result<Example> {
        let gt = &self.gt_pool[rng.random_range(0..self.gt_pool.len())];
        let spec = if rng.random::<f64>() < self.hard_fraction {
            self.spec.scaled(self.hard_multiplier)
        } else {
            self.spec
        };
        let query = sample_query(gt, &spec, rng)?;
        let scale = match mode {
            ScaleAugment::Off => 1.0,
            _ => rng.random_range(scale_range.0..=scale_range.1),
        };
        Ok(match mode {
            ScaleAugment::Off => Example {
                query,
                gt: gt.clone(),
                scale,
            },
            ScaleAugment::Joint => Example {
                query: absorb_scale(&query, scale, self.model)?,
                gt: absorb_scale(gt, scale, self.model)?,
                scale,
            },
            ScaleAugment::Query => Example {
                query: absorb_scale(&query, scale, self.model)?,
                gt: gt.clone(),
                scale: 1.0,
            },
        })
    }

    /// Summed rollout loss of the examples under `w`.
    pub fn batch_loss(&self, w: &GraftWeights, batch: &[Example], steps: usize, lw: &LossWeights) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let view = self.scene.scaled(ex.scale);
            let preds = rollout(w, self.model, &view, &ex.query, steps)?;
            total += step_loss(&preds, &ex.gt, self.model, lw)?.total;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    /// Heads whose output layers are trained, by name.
    pub heads: Vec<String>,
    /// Also train the hidden layer of those heads.
    pub train_hidden: bool,
    /// Central-difference step on the raw head outputs.
    pub fd_step: f64,
    pub loss: LossWeights,
    /// Overrides the schedule's peak learning rate.
    pub peak_lr: Option<f64>,
    pub scale_augment: ScaleAugment,
}

impl Default for MicroTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch: 16,
            seed: 0,
            heads: ["translation", "global", "body"].map(String::from).to_vec(),
            train_hidden: true,
            fd_step: 1e-4,
            loss: LossWeights::default(),
            peak_lr: Some(3e-3),
            scale_augment: ScaleAugment::Off,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub lr: f64,
    pub rollout_steps: usize,
    /// Mean per-example batch loss before the update.
    pub loss: f64,
    pub wall_ms: f64,
}

pub fn write_curve_csv<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "iteration,lr,rollout_steps,loss,wall_ms")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{:.3}", r.iteration, r.lr, r.rollout_steps, r.loss, r.wall_ms)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MicroTrainReport {
    pub curve: Vec<CurveRow>,
    pub trained_params: usize,
    pub wall_s: f64,
}

fn finite(iteration: usize, v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GraftError::NonFiniteLoss {
            iteration,
            detail: format!("{what} is {v}"),
        })
    }
}

/// Batch of iteration `k`; depends only on `(seed, k)`.
pub fn iteration_batch(task: &MicroTask<'_>, cfg: &MicroTrainConfig, schedule: &TrainSchedule, k: usize) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64 + 1);
    (0..cfg.batch)
        .map(|_| task.sample(&mut rng, schedule.scale_range, cfg.scale_augment))
        .collect()
}

/// Heads being trained, in a fixed order.
pub fn trained_heads(w: &GraftWeights, heads: &[String]) -> Result<Vec<(String, Mlp)>> {
    let all = w.layout().heads.all();
    heads
        .iter()
        .map(|name| {
            all.iter()
                .find(|(n, _)| n == name)
                .map(|(n, m)| (n.to_string(), *m))
                .ok_or_else(|| GraftError::InvalidArgument(format!("unknown head {name:?}")))
        })
        .collect()
}

fn linear_indices(l: &Linear) -> impl Iterator<Item = usize> {
    (l.w..l.w + l.out * l.inp).chain(l.b..l.b + l.out)
}

fn linear_len(l: &Linear) -> usize {
    l.out * l.inp + l.out
}

/// Flat parameter indices of the trained layers, head by head: output
/// weights and bias, then (when trained) hidden weights and bias.
/// Gradients use the same order.
fn trained_indices(heads: &[(String, Mlp)], train_hidden: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (_, m) in heads {
        out.extend(linear_indices(&m.output));
        if train_hidden {
            out.extend(linear_indices(&m.hidden));
        }
    }
    out
}

/// Flat indices of the parameters `cfg` trains, in gradient order.
pub fn trained_parameter_indices(w: &GraftWeights, cfg: &MicroTrainConfig) -> Result<Vec<usize>> {
    Ok(trained_indices(&trained_heads(w, &cfg.heads)?, cfg.train_hidden))
}

/// Accumulates `dL/dW x^T` and `dL/db` into a `[W, b]` gradient block.
fn accumulate(block: &mut [f64], l: &Linear, g_out: &[f64], x: &[f64]) {
    let (gw, gb) = block.split_at_mut(l.out * l.inp);
    for (j, &g) in g_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (a, xi) in gw[j * l.inp..(j + 1) * l.inp].iter_mut().zip(x) {
            *a += g * xi;
        }
        gb[j] += g;
    }
}

/// Rollout loss of one example and its gradient with respect to the
/// trained head parameters.
pub fn example_gradient(
    w: &GraftWeights,
    task: &MicroTask<'_>,
    ex: &Example,
    steps: usize,
    heads: &[(String, Mlp)],
    cfg: &MicroTrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let model = task.model;
    let target = LossTarget::new(model, &ex.gt)?;
    let view = task.scene.scaled(ex.scale);
    let h = cfg.fd_step;
    let width = w.config().width;
    let block_len = |m: &Mlp| linear_len(&m.output) + if cfg.train_hidden { linear_len(&m.hidden) } else { 0 };
    let mut grad = vec![0.0; heads.iter().map(|(_, m)| block_len(m)).sum()];
    let mut state = ex.query.clone();
    let mut total = 0.0;
    for _ in 0..steps {
        let mesh = model.forward(&state)?;
        let tokens = build_tokens(model, &view, &state, &mesh, w)?;
        let refined = transformer_forward(&tokens.tokens, None, w)?;
        let mut outs = decode_heads(&refined, w)?;
        let loss_of = |outs: &HeadOutputs| -> Result<f64> {
            let next = apply_gradient(&state, &outs.to_gradient(), model)?;
            Ok(target.state_loss(&next, &cfg.loss)?.total)
        };
        let next = apply_gradient(&state, &outs.to_gradient(), model)?;
        let step = target.state_loss(&next, &cfg.loss)?.total;
        total += step;
        if step == 0.0 {
            // A nonnegative loss at zero is stationary; differences would
            // only contribute truncation error.
            state = next;
            continue;
        }
        let mut offset = 0;
        for (name, m) in heads {
            let block = &mut grad[offset..offset + block_len(m)];
            for e in 0..outs.by_name(name).len() {
                let mut g_out = vec![0.0; m.output.out];
                for (j, g) in g_out.iter_mut().enumerate() {
                    let orig = outs.by_name(name)[e].output[j];
                    outs.by_name_mut(name)[e].output[j] = orig + h;
                    let plus = loss_of(&outs)?;
                    outs.by_name_mut(name)[e].output[j] = orig - h;
                    let minus = loss_of(&outs)?;
                    outs.by_name_mut(name)[e].output[j] = orig;
                    *g = (plus - minus) / (2.0 * h);
                }
                let act = &outs.by_name(name)[e];
                let (out_block, hidden_block) = block.split_at_mut(linear_len(&m.output));
                accumulate(out_block, &m.output, &g_out, &act.hidden);
                if cfg.train_hidden {
                    let wo = w.slice(m.output.w, m.output.out * m.output.inp);
                    let g_pre: Vec<f64> = (0..m.output.inp)
                        .map(|i| {
                            let back: f64 = g_out.iter().enumerate().map(|(j, g)| g * wo[j * m.output.inp + i]).sum();
                            back * gelu_grad(act.pre[i])
                        })
                        .collect();
                    let t = HeadOutputs::input_token(name, e);
                    accumulate(hidden_block, &m.hidden, &g_pre, &refined[t * width..(t + 1) * width]);
                }
            }
            offset += block_len(m);
        }
        state = next;
    }
    Ok((total, grad))
}

/// Trains `w` in place. The schedule is the reference one compressed to
/// `cfg.iterations`; supervision covers one step before the rollout
/// switch and the full rollout after it.
pub fn micro_train(w: &mut GraftWeights, task: &MicroTask<'_>, cfg: &MicroTrainConfig) -> Result<MicroTrainReport> {
    micro_train_with(w, task, cfg, |_, _, _| Ok(()))
}

/// [`micro_train`] calling `after(k, w, row)` once iteration `k` is applied.
pub fn micro_train_with(
    w: &mut GraftWeights,
    task: &MicroTask<'_>,
    cfg: &MicroTrainConfig,
    mut after: impl FnMut(usize, &GraftWeights, &CurveRow) -> Result<()>,
) -> Result<MicroTrainReport> {
    if task.gt_pool.is_empty() || cfg.batch == 0 {
        return Err(GraftError::InvalidArgument("training needs a non-empty pool and batch".into()));
    }
    let t0 = Instant::now();
    let mut schedule = TrainSchedule::compressed(cfg.iterations);
    if let Some(p) = cfg.peak_lr {
        schedule.peak_lr = p;
    }
    let heads = trained_heads(w, &cfg.heads)?;
    let indices = trained_indices(&heads, cfg.train_hidden);
    let mut adam = Adam::new(indices.len());
    let mut curve = Vec::with_capacity(cfg.iterations);
    let norm = 1.0 / cfg.batch as f64;
    for k in 0..cfg.iterations {
        let tk = Instant::now();
        let batch = iteration_batch(task, cfg, &schedule, k)?;
        let steps = schedule.rollout_supervised_steps(k);
        let snapshot: &GraftWeights = w;
        let parts = batch
            .par_iter()
            .map(|ex| example_gradient(snapshot, task, ex, steps, &heads, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut grad = vec![0.0; indices.len()];
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l * norm;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b * norm);
        }
        finite(k, loss, "batch loss")?;
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            finite(k, *bad, "gradient entry")?;
        }
        let lr = schedule.lr(k);
        adam.step(w.data_mut(), &indices, &grad, lr);
        let row = CurveRow {
            iteration: k,
            lr,
            rollout_steps: steps,
            loss,
            wall_ms: tk.elapsed().as_secs_f64() * 1e3,
        };
        after(k, w, &row)?;
        curve.push(row);
    }
    Ok(MicroTrainReport {
        curve,
        trained_params: indices.len(),
        wall_s: t0.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::toy::{build_toy_model, ToyModelOptions};
    use crate::body_model::axis_angle_to_rot6d;
    use nalgebra::Vector3;

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![1.0, 2.0, 3.0];
        let mut a = Adam::new(2);
        a.step(&mut p, &[0, 2], &[0.5, -4.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert_eq!(p[1], 2.0);
        assert!((p[2] - 3.1).abs() < 1e-7);
    }

    #[test]
    fn loss_is_zero_at_gt_and_translation_only_moves_vertex_term() {
        let model = build_toy_model(&ToyModelOptions::default()).unwrap();
        let mut gt = HumanState::identity();
        gt.body_pose[2] = axis_angle_to_rot6d(&Vector3::new(0.3, 0.0, 0.1));
        gt.translation = [0.1, 0.2, 3.0];
        let lw = LossWeights::default();
        assert_eq!(step_loss(&[gt.clone()], &gt, &model, &lw).unwrap().total, 0.0);
        let mut moved = gt.clone();
        moved.translation[1] += 0.05;
        let l = step_loss(&[moved], &gt, &model, &lw).unwrap();
        assert_eq!(l.rotation, 0.0);
        assert!(l.normalized < 1e-20);
        let expected = 7.0 * model.num_vertices() as f64 * 0.05 * 0.05;
        assert!((l.vertex - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn schedule_landmarks() {
        let s = TrainSchedule::default();
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(2_000), 1e-4);
        assert!((s.lr(149_999) - 2e-7).abs() < 1e-20);
        assert_eq!(s.rollout_supervised_steps(9_999), 1);
        assert_eq!(s.rollout_supervised_steps(10_000), 3);
        let c = TrainSchedule::compressed(200);
        assert_eq!((c.warmup, c.rollout_switch), (3, 13));
        assert!(c.lr(1) < c.lr(2) && c.lr(2) < c.lr(3));
    }

    #[test]
    fn clean_probability_one_returns_gt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gt = HumanState::identity();
        gt.translation = [0.0, 1.0, 2.0];
        let spec = PerturbationSpec {
            clean_prob: 1.0,
            ..Default::default()
        };
        assert_eq!(sample_query(&gt, &spec, &mut rng).unwrap(), gt);
        let noisy = sample_query(&gt, &PerturbationSpec { clean_prob: 0.0, ..Default::default() }, &mut rng).unwrap();
        assert_ne!(noisy, gt);
    }
}
