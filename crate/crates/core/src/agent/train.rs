//! Teacher-forced SGD training and parallel greedy evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictor::ActionPredictor;
use super::rollout::{rollout, teacher_forced_steps, Dataset, EpisodeTrace, ForcedStep, RolloutMode};
use super::step::{step_backward, step_forward, step_losses, Models};
use super::{AgentError, ScoreMode, TrainConfig};
use crate::scoring::ScoringParams;
use crate::sim::{episode_metrics, MetricsReport, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub mean_il: f64,
    pub mean_cs: f64,
    pub mean_ct: f64,
    pub eval_sr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Models,
    pub log: Vec<TrainLogRecord>,
}

/// Per-step advantages for the optional policy-gradient term.
pub trait AdvantageSource: Sync {
    fn advantage(&self, episode_id: &str, t: usize) -> Option<f64>;
}

/// Initial models: seeded scoring network, identity predictor.
pub fn initial_models(d: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Models {
    Models {
        scoring: ScoringParams::init(d, cfg.dropout, rng),
        predictor: ActionPredictor::identity(d, cfg.temperature_a),
    }
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, AgentError> {
    train_with(ds, cfg, None, None)
}

/// Full training entry point. `init` replaces the seeded initial models,
/// `advantages` feeds the policy-gradient hook.
pub fn train_with(
    ds: &Dataset,
    cfg: &TrainConfig,
    init: Option<Models>,
    advantages: Option<&dyn AdvantageSource>,
) -> Result<TrainOutcome, AgentError> {
    cfg.validate()?;
    let episodes: Vec<_> = ds.world.split(Split::Train).collect();
    if episodes.is_empty() {
        return Err(AgentError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = ds.store.dimension();
    let seeded = initial_models(d, cfg, &mut rng);
    let mut models = init.unwrap_or(seeded);
    if models.predictor.d != d || models.scoring.d != d {
        return Err(AgentError::DimensionMismatch(d, models.predictor.d));
    }

    let forced: Vec<Vec<ForcedStep>> = episodes
        .iter()
        .map(|ep| teacher_forced_steps(ds, ep, cfg))
        .collect::<Result<_, _>>()?;
    let weights = cfg.weights();
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mode = if epoch <= cfg.warm_start_epochs {
            ScoreMode::Off
        } else {
            cfg.score_mode
        };
        order.shuffle(&mut rng);
        let (mut il, mut cs, mut ct, mut n_steps) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let batch_steps: usize = batch.iter().map(|&i| forced[i].len()).sum();
            let scale = 1.0 / batch_steps as f64;
            models.zero_grad();
            for &i in batch {
                for (t, s) in forced[i].iter().enumerate() {
                    let fwd = step_forward(&models, mode, cfg.tau, &s.inputs, true, &mut rng)?;
                    let l = step_losses(&fwd, &s.inputs.views, s.teacher, cfg.tau)?;
                    il += l.il;
                    cs += l.cs;
                    ct += l.ct;
                    let adv = advantages.and_then(|a| a.advantage(&episodes[i].id, t));
                    step_backward(&mut models, &fwd, &s.inputs, s.teacher, cfg.tau, weights, adv, scale)?;
                }
            }
            n_steps += batch_steps;
            models.predictor.sgd_step(cfg.lr_agent);
            if mode == ScoreMode::Learned {
                models.scoring.sgd_step(cfg.lr_scoring);
            } else {
                models.scoring.zero_grad();
            }
        }
        let eval_sr = if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
            let eval_cfg = TrainConfig {
                score_mode: mode,
                ..cfg.clone()
            };
            Some(evaluate(ds, &models, &eval_cfg, Split::Eval)?.0.sr)
        } else {
            None
        };
        let n = n_steps as f64;
        log.push(TrainLogRecord {
            epoch,
            mean_il: il / n,
            mean_cs: cs / n,
            mean_ct: ct / n,
            eval_sr,
        });
    }
    Ok(TrainOutcome { models, log })
}

/// Greedy rollouts over a split, in parallel on the current rayon pool.
/// Results are in episode order regardless of scheduling.
pub fn evaluate(
    ds: &Dataset,
    models: &Models,
    cfg: &TrainConfig,
    split: Split,
) -> Result<(MetricsReport, Vec<EpisodeTrace>), AgentError> {
    let episodes: Vec<_> = ds.world.split(split).collect();
    let results: Vec<_> = episodes
        .par_iter()
        .map(|ep| -> Result<_, AgentError> {
            let trace = rollout(ds, ep, models, cfg, RolloutMode::Greedy, cfg.seed)?;
            let m = episode_metrics(
                &ep.id,
                &ds.world.graph,
                &ds.dist,
                &ep.path,
                &trace.trajectory,
                ep.success_radius,
            )?;
            Ok((m, trace))
        })
        .collect::<Result<_, _>>()?;
    let (metrics, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((MetricsReport::from_episodes(metrics), traces))
}
