//! Episode rollouts over a world bundle.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::step::{step_forward, Models, StepInputs};
use super::{AgentError, TrainConfig};
use crate::embedding::{mean_pool, text_feature, EmbeddingStore, FeatureVector, TextQuery};
use crate::math::argmax;
use crate::priors::{LandmarkPriors, PriorRecord};
use crate::shifting::{shift_step, ShiftOutcome, ShiftState};
use crate::sim::{DistanceTable, Episode, World, WorldBundle};

/// A world, its features and the priors used for every instruction.
pub struct Dataset<'a> {
    pub world: &'a World,
    pub store: &'a EmbeddingStore,
    pub priors: BTreeMap<String, LandmarkPriors>,
    pub dist: DistanceTable,
}

impl<'a> Dataset<'a> {
    pub fn new(
        world: &'a World,
        store: &'a EmbeddingStore,
        priors: impl IntoIterator<Item = PriorRecord>,
    ) -> Result<Self, AgentError> {
        Ok(Self {
            world,
            store,
            priors: priors.into_iter().map(|r| (r.instruction_id, r.priors)).collect(),
            dist: world.graph.distances()?,
        })
    }

    /// Uses the priors file of the bundle.
    pub fn from_bundle(bundle: &'a WorldBundle) -> Result<Self, AgentError> {
        Self::new(&bundle.world, &bundle.store, bundle.priors.iter().cloned())
    }

    /// Shortest-path action from `node` toward the episode goal; stop at
    /// the goal. Ties go to the lowest view index.
    pub fn oracle_action(&self, ep: &Episode, node: usize) -> usize {
        let g = &self.world.graph;
        if node == ep.goal {
            return g.stop_view(node);
        }
        let costs: Vec<f64> = g
            .neighbors(node)
            .iter()
            .map(|&(nb, len)| -(len + self.dist.get(nb, ep.goal)))
            .collect();
        argmax(&costs)
    }
}

/// Text features an episode needs, resolved once.
#[derive(Debug, Clone)]
pub(crate) struct EpisodeFeatures {
    pub instr: FeatureVector,
    pub landmarks: Vec<FeatureVector>,
    pub cooccurrences: Vec<Vec<FeatureVector>>,
}

pub(crate) fn episode_features(
    ds: &Dataset,
    ep: &Episode,
    cfg: &TrainConfig,
) -> Result<EpisodeFeatures, AgentError> {
    let priors = ds
        .priors
        .get(&ep.instruction_id)
        .filter(|p| p.usable && p.n_landmarks() > 0)
        .ok_or_else(|| AgentError::MissingPriors(ep.instruction_id.clone()))?;
    let phrase = |p: &str| -> Result<FeatureVector, AgentError> {
        Ok(text_feature(ds.store, &TextQuery::new(p, cfg.use_photo_prompt))?.clone())
    };
    Ok(EpisodeFeatures {
        instr: text_feature(ds.store, &TextQuery::new(ep.instruction.as_str(), false))?.clone(),
        landmarks: priors.landmarks.iter().map(|l| phrase(l)).collect::<Result<_, _>>()?,
        cooccurrences: priors
            .cooccurrences
            .iter()
            .map(|cs| cs.iter().take(cfg.n_co).map(|c| phrase(c)).collect())
            .collect::<Result<_, _>>()?,
    })
}

/// Observes `node`, moves the shifting pointer and assembles step inputs.
pub(crate) fn observe(
    ds: &Dataset,
    ep: &Episode,
    feats: &EpisodeFeatures,
    node: usize,
    state: &ShiftState,
    tau: f64,
) -> Result<(StepInputs, ShiftOutcome), AgentError> {
    let views = ds.world.views(ds.store, &ep.id, node)?;
    let obs = mean_pool(&views)?;
    let (z, next) = state.pair();
    let outcome = shift_step(state, &obs, (&feats.landmarks[z - 1], &feats.landmarks[next - 1]), tau)?;
    let k = outcome.selected - 1;
    Ok((
        StepInputs {
            instr: feats.instr.clone(),
            views,
            landmark: feats.landmarks[k].clone(),
            cooccurrences: feats.cooccurrences[k].clone(),
        },
        outcome,
    ))
}

/// A teacher-forced step: inputs do not depend on any trainable weight.
#[derive(Debug, Clone)]
pub struct ForcedStep {
    pub node: usize,
    pub before: ShiftState,
    pub outcome: ShiftOutcome,
    pub inputs: StepInputs,
    pub teacher: usize,
}

pub fn teacher_forced_steps(
    ds: &Dataset,
    ep: &Episode,
    cfg: &TrainConfig,
) -> Result<Vec<ForcedStep>, AgentError> {
    let feats = episode_features(ds, ep, cfg)?;
    let mut state = ShiftState::new(feats.landmarks.len())?;
    let mut out = Vec::with_capacity(ep.path.len());
    for (&node, &teacher) in ep.path.iter().zip(&ep.actions) {
        let (inputs, outcome) = observe(ds, ep, &feats, node, &state, cfg.tau)?;
        let before = state;
        state = outcome.state;
        out.push(ForcedStep {
            node,
            before,
            outcome,
            inputs,
            teacher,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    TeacherForced,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub node: usize,
    /// Pointer before this step's decision, 1-based.
    pub z: usize,
    pub no_shift_counter: usize,
    pub selected: usize,
    pub forced: bool,
    pub p_z: f64,
    /// View with the highest landmark probability and that probability.
    pub landmark_peak: Option<(usize, f64)>,
    pub scores: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub action: usize,
    pub teacher: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: String,
    pub mode: RolloutMode,
    /// Visited nodes, start first.
    pub trajectory: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub stopped: bool,
    pub cap_exceeded: bool,
    pub path_length: f64,
}

impl EpisodeTrace {
    pub fn terminal(&self) -> usize {
        *self.trajectory.last().expect("trajectory holds the start node")
    }
}

fn record(
    t: usize,
    node: usize,
    before: &ShiftState,
    outcome: &ShiftOutcome,
    fwd: &super::StepForward,
    action: usize,
    teacher: usize,
) -> StepRecord {
    let peak = fwd.pipeline.as_ref().map(|p| {
        let i = argmax(&p.bundle.landmark_dist);
        (i, p.bundle.landmark_dist[i])
    });
    StepRecord {
        t,
        node,
        z: before.z,
        no_shift_counter: before.no_shift_counter,
        selected: outcome.selected,
        forced: outcome.forced,
        p_z: outcome.p_z,
        landmark_peak: peak,
        scores: fwd
            .pipeline
            .as_ref()
            .map(|p| p.scores.iter().collect()),
        logits: fwd.logits.clone(),
        action,
        teacher,
    }
}

/// Runs one episode in eval mode (no dropout). Greedy rollouts take the
/// lowest-index argmax and end on stop or after `cfg.max_steps` decisions.
pub fn rollout(
    ds: &Dataset,
    ep: &Episode,
    models: &Models,
    cfg: &TrainConfig,
    mode: RolloutMode,
    seed: u64,
) -> Result<EpisodeTrace, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = &ds.world.graph;
    let mut steps = Vec::new();
    let mut trajectory = vec![ep.start];
    let mut stopped = false;

    match mode {
        RolloutMode::TeacherForced => {
            for (t, s) in teacher_forced_steps(ds, ep, cfg)?.into_iter().enumerate() {
                let fwd = step_forward(models, cfg.score_mode, cfg.tau, &s.inputs, false, &mut rng)?;
                steps.push(record(t, s.node, &s.before, &s.outcome, &fwd, s.teacher, s.teacher));
                match graph.view_target(s.node, s.teacher) {
                    Some(next) => trajectory.push(next),
                    None => stopped = true,
                }
            }
        }
        RolloutMode::Greedy => {
            let feats = episode_features(ds, ep, cfg)?;
            let mut state = ShiftState::new(feats.landmarks.len())?;
            let mut node = ep.start;
            for t in 0..cfg.max_steps {
                let (inputs, outcome) = observe(ds, ep, &feats, node, &state, cfg.tau)?;
                let fwd = step_forward(models, cfg.score_mode, cfg.tau, &inputs, false, &mut rng)?;
                let action = argmax(&fwd.logits);
                let teacher = ds.oracle_action(ep, node);
                steps.push(record(t, node, &state, &outcome, &fwd, action, teacher));
                state = outcome.state;
                match graph.view_target(node, action) {
                    Some(next) => {
                        node = next;
                        trajectory.push(next);
                    }
                    None => {
                        stopped = true;
                        break;
                    }
                }
            }
        }
    }
    Ok(EpisodeTrace {
        episode_id: ep.id.clone(),
        mode,
        path_length: graph.path_length(&trajectory)?,
        trajectory,
        steps,
        cap_exceeded: !stopped,
        stopped,
    })
}
