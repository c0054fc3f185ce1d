//! Tracks which instruction landmark the agent is currently looking for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, FeatureVector, StoreError};
use crate::math::softmax;

#[derive(Debug, Error, PartialEq)]
pub enum ShiftError {
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("landmark list is empty")]
    NoLandmarks,
}

impl From<StoreError> for ShiftError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::MixedDimensions(a, b) => ShiftError::DimensionMismatch(a, b),
            other => unreachable!("dot only fails on dimensions: {other}"),
        }
    }
}

/// Allowed consecutive steps without a pointer move.
pub fn step_threshold(n_landmarks: usize) -> usize {
    if n_landmarks > 3 {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftState {
    /// 1-based index of the sought landmark.
    pub z: usize,
    pub no_shift_counter: usize,
    pub threshold: usize,
    pub n_landmarks: usize,
}

impl ShiftState {
    pub fn new(n_landmarks: usize) -> Result<Self, ShiftError> {
        if n_landmarks == 0 {
            return Err(ShiftError::NoLandmarks);
        }
        Ok(Self {
            z: 1,
            no_shift_counter: 0,
            threshold: step_threshold(n_landmarks),
            n_landmarks,
        })
    }

    /// True when the pointer sits on the last landmark.
    pub fn at_tail(&self) -> bool {
        self.z >= self.n_landmarks
    }

    /// 1-based indices of the landmark pair compared this step.
    pub fn pair(&self) -> (usize, usize) {
        (self.z, (self.z + 1).min(self.n_landmarks))
    }

    /// Applies one decision. `prefer_next` is the outcome of the two-way
    /// comparison and is ignored at the tail. Returns the selected landmark
    /// (1-based), whether a forced advance fired, and the next state.
    pub fn advance(&self, prefer_next: bool) -> (usize, bool, ShiftState) {
        let mut next = *self;
        if self.at_tail() {
            return (self.z, false, next);
        }
        if prefer_next {
            next.z += 1;
            next.no_shift_counter = 0;
            return (self.z + 1, false, next);
        }
        next.no_shift_counter += 1;
        if next.no_shift_counter > self.threshold {
            next.z += 1;
            next.no_shift_counter = 0;
            return (self.z, true, next);
        }
        (self.z, false, next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub t: usize,
    pub z_before: usize,
    pub p_z: f64,
    pub selected: usize,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOutcome {
    /// Selected landmark, 1-based.
    pub selected: usize,
    pub p_z: f64,
    pub p_next: f64,
    pub forced: bool,
    pub state: ShiftState,
}

impl ShiftOutcome {
    pub fn record(&self, t: usize, before: &ShiftState) -> ShiftRecord {
        ShiftRecord {
            t,
            z_before: before.z,
            p_z: self.p_z,
            selected: self.selected,
            forced: self.forced,
        }
    }
}

/// Two-way softmax over the observation's similarity to `U_z` and `U_{z+1}`.
pub fn pair_probabilities(
    obs: &FeatureVector,
    current: &FeatureVector,
    next: &FeatureVector,
    tau: f64,
) -> Result<(f64, f64), ShiftError> {
    if !(tau > 0.0) {
        return Err(ShiftError::InvalidTemperature(tau));
    }
    let s = [dot(obs, current)? / tau, dot(obs, next)? / tau];
    let p = softmax(&s);
    Ok((p[0], p[1]))
}

/// One step of the shifting automaton. At the tail pass the last landmark's
/// feature twice.
pub fn shift_step(
    state: &ShiftState,
    obs: &FeatureVector,
    landmark_feats: (&FeatureVector, &FeatureVector),
    tau: f64,
) -> Result<ShiftOutcome, ShiftError> {
    let (p_z, p_next) = pair_probabilities(obs, landmark_feats.0, landmark_feats.1, tau)?;
    let (selected, forced, next) = state.advance(!(p_z > p_next));
    Ok(ShiftOutcome {
        selected,
        p_z,
        p_next,
        forced,
        state: next,
    })
}
