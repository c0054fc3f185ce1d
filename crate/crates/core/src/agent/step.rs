//! One decision of the pipeline: discovery, scoring, correction, enhancement
//! and action logits, with the matching hand-written backward pass.

use rand::Rng;

use super::predictor::{il_loss, logits_from_query, ActionPredictor};
use super::{AgentError, ScoreMode};
use crate::discovery::{discovery_bundle, DiscoveryBundle};
use crate::embedding::{mean_pool, FeatureVector};
use crate::math::softmax;
use crate::scoring::{
    accumulate_state_grad, consistency_loss, contrastive_loss_and_grad, corrected_distribution,
    corrected_landmark_features, enhance, score_grads, scores, state_feature, state_grad_from_scores,
    CorrectedPrediction, ScoreSet, ScoringForward, ScoringParams,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub scoring: ScoringParams,
    pub predictor: ActionPredictor,
}

impl Models {
    pub fn zero_grad(&mut self) {
        self.scoring.zero_grad();
        self.predictor.zero_grad();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub instr: FeatureVector,
    pub views: Vec<FeatureVector>,
    pub landmark: FeatureVector,
    pub cooccurrences: Vec<FeatureVector>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cs: f64,
    pub ct: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub il: f64,
    pub cs: f64,
    pub ct: f64,
}

/// Pipeline state of a step with the landmark machinery switched on.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub bundle: DiscoveryBundle,
    pub scoring: Option<ScoringForward>,
    pub scores: ScoreSet,
    pub prediction: CorrectedPrediction,
    pub corrected: Vec<FeatureVector>,
}

#[derive(Debug, Clone)]
pub struct StepForward {
    pub obs_mean: FeatureVector,
    pub pipeline: Option<Pipeline>,
    pub enhanced: Vec<FeatureVector>,
    pub query: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn step_forward<R: Rng>(
    models: &Models,
    mode: ScoreMode,
    tau: f64,
    inputs: &StepInputs,
    train_mode: bool,
    rng: &mut R,
) -> Result<StepForward, AgentError> {
    let obs_mean = mean_pool(&inputs.views)?;
    let (pipeline, enhanced) = match mode {
        ScoreMode::Off => (None, inputs.views.clone()),
        ScoreMode::Learned | ScoreMode::Fixed(_) => {
            let bundle = discovery_bundle(&inputs.landmark, &inputs.cooccurrences, &inputs.views, tau)?;
            let (scoring, score_set) = if let ScoreMode::Fixed(c) = mode {
                (None, ScoreSet::constant(c, bundle.n_co()))
            } else {
                let fwd = state_feature(&inputs.instr, &obs_mean, &models.scoring, train_mode, rng)?;
                let s = scores(&fwd.output, &inputs.landmark, &inputs.cooccurrences)?;
                (Some(fwd), s)
            };
            let prediction = corrected_distribution(&bundle, &score_set)?;
            let corrected = corrected_landmark_features(&bundle, &score_set)?;
            let enhanced = enhance(&inputs.views, &corrected)?;
            let p = Pipeline {
                bundle,
                scoring,
                scores: score_set,
                prediction,
                corrected,
            };
            (Some(p), enhanced)
        }
    };
    let query = models.predictor.project(&inputs.instr)?;
    let logits = logits_from_query(&query, &enhanced, models.predictor.temperature)?;
    Ok(StepForward {
        obs_mean,
        pipeline,
        enhanced,
        query,
        logits,
    })
}

/// Losses of a recorded step against the teacher action. The consistency
/// and contrastive terms are zero when the pipeline is off.
pub fn step_losses(
    fwd: &StepForward,
    views: &[FeatureVector],
    teacher: usize,
    tau: f64,
) -> Result<StepLosses, AgentError> {
    let il = il_loss(&fwd.logits, teacher)?;
    let Some(p) = &fwd.pipeline else {
        return Ok(StepLosses { il, cs: 0.0, ct: 0.0 });
    };
    Ok(StepLosses {
        il,
        cs: consistency_loss(&p.prediction, teacher)?,
        ct: contrastive_loss_and_grad(views, &p.corrected, tau)?.0,
    })
}

/// Accumulates `scale · ∂L/∂θ` into both models' gradient buffers, where
/// `L = (1 + λ_rl·A)·IL + λ_cs·CS + λ_ct·CT` and `A` is an optional
/// externally supplied advantage for the taken (teacher) action.
#[allow(clippy::too_many_arguments)]
pub fn step_backward(
    models: &mut Models,
    fwd: &StepForward,
    inputs: &StepInputs,
    teacher: usize,
    tau: f64,
    weights: LossWeights,
    advantage: Option<f64>,
    scale: f64,
) -> Result<(), AgentError> {
    let n = fwd.logits.len();
    if teacher >= n {
        return Err(AgentError::IndexOutOfRange { index: teacher, len: n });
    }
    let t_a = models.predictor.temperature;
    let coef = scale * (1.0 + advantage.map_or(0.0, |a| weights.rl * a));
    let mut delta = softmax(&fwd.logits);
    delta[teacher] -= 1.0;
    delta.iter_mut().for_each(|x| *x *= coef);

    let d = models.predictor.d;
    let mut dq = vec![0.0; d];
    for (dn, v) in delta.iter().zip(&fwd.enhanced) {
        for (g, x) in dq.iter_mut().zip(&v.0) {
            *g += dn * x / t_a;
        }
    }
    for i in 0..d {
        let row = &mut models.predictor.grad[i * d..(i + 1) * d];
        for (g, x) in row.iter_mut().zip(&inputs.instr.0) {
            *g += dq[i] * x;
        }
    }

    let Some(p) = &fwd.pipeline else {
        return Ok(());
    };
    let Some(sf) = &p.scoring else {
        // Frozen scores: nothing upstream of the enhanced views is trainable.
        return Ok(());
    };
    let mut d_corrected: Vec<Vec<f64>> = delta
        .iter()
        .map(|dn| fwd.query.iter().map(|q| dn * q / t_a).collect())
        .collect();
    if weights.ct != 0.0 {
        let (_, du) = contrastive_loss_and_grad(&inputs.views, &p.corrected, tau)?;
        for (gu, dun) in d_corrected.iter_mut().zip(&du) {
            for (g, x) in gu.iter_mut().zip(dun) {
                *g += scale * weights.ct * x;
            }
        }
    }
    let mut d_raw = softmax(&p.prediction.raw);
    d_raw[teacher] -= 1.0;
    d_raw.iter_mut().for_each(|x| *x *= scale * weights.cs);
    let ds = score_grads(&p.bundle, &d_corrected, &d_raw);
    let d_state = state_grad_from_scores(&p.bundle, &ds);
    accumulate_state_grad(&mut models.scoring, sf, &d_state)?;
    Ok(())
}
