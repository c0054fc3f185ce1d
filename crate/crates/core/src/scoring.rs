//! Learnable cooccurrence scoring, prior correction, observation enhancement
//! and the contrastive objective, with hand-written gradients.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::discovery::DiscoveryBundle;
use crate::embedding::{dot_slices, FeatureVector};
use crate::math::{cross_entropy, logsumexp, softmax};
use crate::tensorfile::{TensorFile, TensorFileError};

pub const SCORING_MAGIC: &[u8; 8] = b"CNSLSCR1";
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cooccurrence count mismatch: {0} vs {1}")]
    ArityMismatch(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("index {index} out of range for {len} views")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("contrastive loss needs at least two views, got {0}")]
    DegenerateBatch(usize),
    #[error("forward pass is stale: parameters changed since it was recorded")]
    StaleForward,
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] TensorFileError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ScoringGrads {
    fn zeros(d: usize) -> Self {
        Self {
            w: vec![0.0; 2 * d * d],
            b: vec![0.0; d],
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
        }
    }

    fn clear(&mut self) {
        for buf in [&mut self.w, &mut self.b, &mut self.gamma, &mut self.beta] {
            buf.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Linear (d × 2d) → ReLU → LayerNorm → dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringParams {
    pub d: usize,
    /// Row-major, `d` rows of `2d`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub dropout_rate: f64,
    pub grad: ScoringGrads,
    version: u64,
}

impl ScoringParams {
    /// Uniform(±1/√(2d)) weights and bias, unit gain, zero shift.
    pub fn init<R: Rng>(d: usize, dropout_rate: f64, rng: &mut R) -> Self {
        let a = 1.0 / ((2 * d) as f64).sqrt();
        let w = (0..2 * d * d).map(|_| rng.random_range(-a..a)).collect();
        let b = (0..d).map(|_| rng.random_range(-a..a)).collect();
        Self::from_parts(d, w, b, vec![1.0; d], vec![0.0; d], dropout_rate)
    }

    /// All weights zero: the state feature is identically zero.
    pub fn zeros(d: usize) -> Self {
        Self::from_parts(d, vec![0.0; 2 * d * d], vec![0.0; d], vec![1.0; d], vec![0.0; d], 0.0)
    }

    pub fn from_parts(
        d: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        dropout_rate: f64,
    ) -> Self {
        assert_eq!(w.len(), 2 * d * d);
        assert!(b.len() == d && gamma.len() == d && beta.len() == d);
        assert!((0.0..1.0).contains(&dropout_rate));
        Self {
            d,
            w,
            b,
            gamma,
            beta,
            dropout_rate,
            grad: ScoringGrads::zeros(d),
            version: 0,
        }
    }

    /// Parameter entries in a fixed order: W, b, gamma, beta.
    pub fn n_params(&self) -> usize {
        self.w.len() + 3 * self.d
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        self.version += 1;
        let d = self.d;
        let nw = self.w.len();
        match i {
            _ if i < nw => &mut self.w[i],
            _ if i < nw + d => &mut self.b[i - nw],
            _ if i < nw + 2 * d => &mut self.gamma[i - nw - d],
            _ => &mut self.beta[i - nw - 2 * d],
        }
    }

    pub fn grad_at(&self, i: usize) -> f64 {
        let d = self.d;
        let nw = self.w.len();
        match i {
            _ if i < nw => self.grad.w[i],
            _ if i < nw + d => self.grad.b[i - nw],
            _ if i < nw + 2 * d => self.grad.gamma[i - nw - d],
            _ => self.grad.beta[i - nw - 2 * d],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
    }

    /// Plain SGD, then clears the gradient buffers.
    pub fn sgd_step(&mut self, lr: f64) {
        let g = &self.grad;
        for (p, g) in [
            (&mut self.w, &g.w),
            (&mut self.b, &g.b),
            (&mut self.gamma, &g.gamma),
            (&mut self.beta, &g.beta),
        ] {
            for (x, dx) in p.iter_mut().zip(g) {
                *x -= lr * dx;
            }
        }
        self.version += 1;
        self.grad.clear();
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut t = TensorFile::new(self.d);
        t.put("w", &self.w);
        t.put("b", &self.b);
        t.put("ln_gamma", &self.gamma);
        t.put("ln_beta", &self.beta);
        t.put("dropout_rate", &[self.dropout_rate]);
        t
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_tensor_file().to_bytes(SCORING_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ScoringError> {
        let mut t = TensorFile::from_bytes(bytes, SCORING_MAGIC)?;
        let d = t.d as usize;
        let w = t.take("w", 2 * d * d)?;
        let b = t.take("b", d)?;
        let gamma = t.take("ln_gamma", d)?;
        let beta = t.take("ln_beta", d)?;
        let rate = t.take("dropout_rate", 1)?[0];
        Ok(Self::from_parts(d, w, b, gamma, beta, rate))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScoringError> {
        Ok(self.to_tensor_file().save(path, SCORING_MAGIC)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoringError> {
        Self::from_bytes(&std::fs::read(path).map_err(TensorFileError::from)?)
    }
}

/// Intermediates of one state-feature evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ScoringForward {
    input: Vec<f64>,
    pre: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: f64,
    /// Per-unit dropout multiplier (0 or 1/(1-rate)); `None` in eval mode.
    mask: Option<Vec<f64>>,
    pub output: FeatureVector,
    version: u64,
}

/// `f_S = dropout(layer_norm(relu(W [instr; obs] + b)))`.
pub fn state_feature<R: Rng>(
    instr: &FeatureVector,
    obs_mean: &FeatureVector,
    params: &ScoringParams,
    train_mode: bool,
    rng: &mut R,
) -> Result<ScoringForward, ScoringError> {
    let d = params.d;
    for f in [instr, obs_mean] {
        if f.dim() != d {
            return Err(ScoringError::DimensionMismatch(d, f.dim()));
        }
    }
    let mut input = Vec::with_capacity(2 * d);
    input.extend_from_slice(&instr.0);
    input.extend_from_slice(&obs_mean.0);

    let pre: Vec<f64> = (0..d)
        .map(|i| dot_slices(&params.w[i * 2 * d..(i + 1) * 2 * d], &input) + params.b[i])
        .collect();
    let r: Vec<f64> = pre.iter().map(|&h| h.max(0.0)).collect();
    let mean = r.iter().sum::<f64>() / d as f64;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = r.iter().map(|x| (x - mean) * inv_std).collect();
    let mut y: Vec<f64> = (0..d).map(|i| params.gamma[i] * xhat[i] + params.beta[i]).collect();

    let mask = if train_mode && params.dropout_rate > 0.0 {
        let keep = 1.0 / (1.0 - params.dropout_rate);
        let m: Vec<f64> = (0..d)
            .map(|_| if rng.random::<f64>() < params.dropout_rate { 0.0 } else { keep })
            .collect();
        y.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
        Some(m)
    } else {
        None
    };

    Ok(ScoringForward {
        input,
        pre,
        xhat,
        inv_std,
        mask,
        output: FeatureVector(y),
        version: params.version,
    })
}

/// Adds `∂L/∂θ` to the gradient buffers given `∂L/∂f_S`.
pub fn accumulate_state_grad(
    params: &mut ScoringParams,
    fwd: &ScoringForward,
    d_state: &[f64],
) -> Result<(), ScoringError> {
    if fwd.version != params.version {
        return Err(ScoringError::StaleForward);
    }
    let d = params.d;
    if d_state.len() != d {
        return Err(ScoringError::DimensionMismatch(d, d_state.len()));
    }
    let dy: Vec<f64> = match &fwd.mask {
        Some(m) => d_state.iter().zip(m).map(|(g, k)| g * k).collect(),
        None => d_state.to_vec(),
    };
    let mut dxhat = vec![0.0; d];
    for i in 0..d {
        params.grad.gamma[i] += dy[i] * fwd.xhat[i];
        params.grad.beta[i] += dy[i];
        dxhat[i] = dy[i] * params.gamma[i];
    }
    let n = d as f64;
    let mean_dx = dxhat.iter().sum::<f64>() / n;
    let mean_dx_xhat = dxhat.iter().zip(&fwd.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    for i in 0..d {
        if fwd.pre[i] <= 0.0 {
            continue;
        }
        let dh = fwd.inv_std * (dxhat[i] - mean_dx - fwd.xhat[i] * mean_dx_xhat);
        params.grad.b[i] += dh;
        let row = &mut params.grad.w[i * 2 * d..(i + 1) * 2 * d];
        for (g, x) in row.iter_mut().zip(&fwd.input) {
            *g += dh * x;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub s_la: f64,
    pub s_co: Vec<f64>,
}

impl ScoreSet {
    pub fn constant(value: f64, n_co: usize) -> Self {
        Self {
            s_la: value,
            s_co: vec![value; n_co],
        }
    }

    /// Scores in bundle order: landmark first, then cooccurrences.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.s_la).chain(self.s_co.iter().copied())
    }
}

pub fn scores(
    state: &FeatureVector,
    landmark: &FeatureVector,
    cooccurrences: &[FeatureVector],
) -> Result<ScoreSet, ScoringError> {
    let check = |f: &FeatureVector| {
        if f.dim() == state.dim() {
            Ok(dot_slices(&state.0, &f.0))
        } else {
            Err(ScoringError::DimensionMismatch(state.dim(), f.dim()))
        }
    };
    Ok(ScoreSet {
        s_la: check(landmark)?,
        s_co: cooccurrences.iter().map(check).collect::<Result<_, _>>()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedPrediction {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

fn check_arity(bundle: &DiscoveryBundle, s: &ScoreSet) -> Result<(), ScoringError> {
    if bundle.n_co() != s.s_co.len() {
        return Err(ScoringError::ArityMismatch(bundle.n_co(), s.s_co.len()));
    }
    Ok(())
}

/// Distributions of the bundle in score order.
fn dists(bundle: &DiscoveryBundle) -> impl Iterator<Item = &Vec<f64>> {
    std::iter::once(&bundle.landmark_dist).chain(&bundle.cooccurrence_dists)
}

fn phrases(bundle: &DiscoveryBundle) -> impl Iterator<Item = &FeatureVector> {
    std::iter::once(&bundle.landmark_feature).chain(&bundle.cooccurrence_features)
}

/// `raw_n = p_la[n]·s_la + Σ_i p_co_i[n]·s_co_i`, normalized by softmax.
pub fn corrected_distribution(
    bundle: &DiscoveryBundle,
    s: &ScoreSet,
) -> Result<CorrectedPrediction, ScoringError> {
    check_arity(bundle, s)?;
    let mut raw = vec![0.0; bundle.n_views()];
    for (p, sk) in dists(bundle).zip(s.iter()) {
        for (r, pn) in raw.iter_mut().zip(p) {
            *r += pn * sk;
        }
    }
    let normalized = softmax(&raw);
    Ok(CorrectedPrediction { raw, normalized })
}

/// Cross-entropy of the normalized corrected prediction at `gt`.
pub fn consistency_loss(pred: &CorrectedPrediction, gt: usize) -> Result<f64, ScoringError> {
    if gt >= pred.raw.len() {
        return Err(ScoringError::IndexOutOfRange {
            index: gt,
            len: pred.raw.len(),
        });
    }
    Ok(cross_entropy(&pred.raw, gt))
}

/// `f_U[n] = p_la[n]·s_la·f_la + Σ_i p_co_i[n]·s_co_i·f_co_i`.
pub fn corrected_landmark_features(
    bundle: &DiscoveryBundle,
    s: &ScoreSet,
) -> Result<Vec<FeatureVector>, ScoringError> {
    check_arity(bundle, s)?;
    let d = bundle.landmark_feature.dim();
    let mut out = vec![vec![0.0; d]; bundle.n_views()];
    for ((p, sk), f) in dists(bundle).zip(s.iter()).zip(phrases(bundle)) {
        if f.dim() != d {
            return Err(ScoringError::DimensionMismatch(d, f.dim()));
        }
        for (u, pn) in out.iter_mut().zip(p) {
            let c = pn * sk;
            for (x, fi) in u.iter_mut().zip(&f.0) {
                *x += c * fi;
            }
        }
    }
    Ok(out.into_iter().map(FeatureVector).collect())
}

/// `f'_O[n] = f_O[n] + f_U[n]`.
pub fn enhance(
    views: &[FeatureVector],
    corrected: &[FeatureVector],
) -> Result<Vec<FeatureVector>, ScoringError> {
    if views.len() != corrected.len() {
        return Err(ScoringError::LengthMismatch(views.len(), corrected.len()));
    }
    views
        .iter()
        .zip(corrected)
        .map(|(o, u)| {
            if o.dim() != u.dim() {
                return Err(ScoringError::DimensionMismatch(o.dim(), u.dim()));
            }
            Ok(FeatureVector(o.0.iter().zip(&u.0).map(|(a, b)| a + b).collect()))
        })
        .collect()
}

fn similarity_matrix(
    views: &[FeatureVector],
    corrected: &[FeatureVector],
    tau: f64,
) -> Result<Vec<Vec<f64>>, ScoringError> {
    if !(tau > 0.0) {
        return Err(ScoringError::InvalidTemperature(tau));
    }
    if views.len() != corrected.len() {
        return Err(ScoringError::LengthMismatch(views.len(), corrected.len()));
    }
    if views.len() < 2 {
        return Err(ScoringError::DegenerateBatch(views.len()));
    }
    views
        .iter()
        .map(|o| {
            corrected
                .iter()
                .map(|u| {
                    if o.dim() != u.dim() {
                        Err(ScoringError::DimensionMismatch(o.dim(), u.dim()))
                    } else {
                        Ok(dot_slices(&o.0, &u.0) / tau)
                    }
                })
                .collect()
        })
        .collect()
}

/// Symmetric InfoNCE between views and their corrected features; each
/// direction sums over views.
pub fn contrastive_loss(
    views: &[FeatureVector],
    corrected: &[FeatureVector],
    tau: f64,
) -> Result<f64, ScoringError> {
    Ok(contrastive_loss_and_grad(views, corrected, tau)?.0)
}

/// Loss plus `∂L/∂f_U[j]` for every view.
pub fn contrastive_loss_and_grad(
    views: &[FeatureVector],
    corrected: &[FeatureVector],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>), ScoringError> {
    let s = similarity_matrix(views, corrected, tau)?;
    let n = s.len();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| s[i][j]).collect()).collect();
    let mut o2u = 0.0;
    let mut u2o = 0.0;
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        o2u += logsumexp(&s[i]) - s[i][i];
        u2o += logsumexp(&cols[i]) - s[i][i];
        let p = softmax(&s[i]);
        let q = softmax(&cols[i]);
        for j in 0..n {
            let eye = if i == j { 1.0 } else { 0.0 };
            g[i][j] += 0.5 * (p[j] - eye);
            g[j][i] += 0.5 * (q[j] - eye);
        }
    }
    let d = corrected[0].dim();
    let mut du = vec![vec![0.0; d]; n];
    for (j, duj) in du.iter_mut().enumerate() {
        for (i, o) in views.iter().enumerate() {
            let c = g[i][j] / tau;
            for (x, oi) in duj.iter_mut().zip(&o.0) {
                *x += c * oi;
            }
        }
    }
    Ok((0.5 * (o2u + u2o), du))
}

/// Score gradients from `∂L/∂f_U` and `∂L/∂raw`.
pub fn score_grads(
    bundle: &DiscoveryBundle,
    d_corrected: &[Vec<f64>],
    d_raw: &[f64],
) -> Vec<f64> {
    dists(bundle)
        .zip(phrases(bundle))
        .map(|(p, f)| {
            p.iter()
                .zip(d_corrected)
                .zip(d_raw)
                .map(|((pn, gu), gr)| pn * (dot_slices(gu, &f.0) + gr))
                .sum()
        })
        .collect()
}

/// `∂L/∂f_S = Σ_k ∂L/∂s_k · f_k`.
pub fn state_grad_from_scores(bundle: &DiscoveryBundle, d_scores: &[f64]) -> Vec<f64> {
    let d = bundle.landmark_feature.dim();
    let mut out = vec![0.0; d];
    for (ds, f) in d_scores.iter().zip(phrases(bundle)) {
        for (o, fi) in out.iter_mut().zip(&f.0) {
            *o += ds * fi;
        }
    }
    out
}
