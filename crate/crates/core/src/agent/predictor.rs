//! Bilinear action scorer between the instruction and each enhanced view.

use std::path::Path;

use super::AgentError;
use crate::embedding::{dot_slices, FeatureVector};
use crate::math::cross_entropy;
use crate::tensorfile::TensorFile;

pub const AGENT_MAGIC: &[u8; 8] = b"CNSLAGT1";

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPredictor {
    pub d: usize,
    /// Row-major `d × d`.
    pub w_a: Vec<f64>,
    pub temperature: f64,
    pub grad: Vec<f64>,
}

impl ActionPredictor {
    pub fn identity(d: usize, temperature: f64) -> Self {
        let mut w_a = vec![0.0; d * d];
        for i in 0..d {
            w_a[i * d + i] = 1.0;
        }
        Self::from_parts(d, w_a, temperature)
    }

    pub fn from_parts(d: usize, w_a: Vec<f64>, temperature: f64) -> Self {
        assert_eq!(w_a.len(), d * d);
        Self {
            d,
            grad: vec![0.0; w_a.len()],
            w_a,
            temperature,
        }
    }

    /// `W_a · instr`.
    pub fn project(&self, instr: &FeatureVector) -> Result<Vec<f64>, AgentError> {
        if instr.dim() != self.d {
            return Err(AgentError::DimensionMismatch(self.d, instr.dim()));
        }
        Ok((0..self.d)
            .map(|i| dot_slices(&self.w_a[i * self.d..(i + 1) * self.d], &instr.0))
            .collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn sgd_step(&mut self, lr: f64) {
        for (w, g) in self.w_a.iter_mut().zip(&self.grad) {
            *w -= lr * g;
        }
        self.zero_grad();
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut t = TensorFile::new(self.d);
        t.put("w_a", &self.w_a);
        t.put("temperature", &[self.temperature]);
        t.to_bytes(AGENT_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AgentError> {
        let mut t = TensorFile::from_bytes(bytes, AGENT_MAGIC)?;
        let d = t.d as usize;
        let w_a = t.take("w_a", d * d)?;
        let temperature = t.take("temperature", 1)?[0];
        if !(temperature > 0.0) || w_a.iter().any(|x| !x.is_finite()) {
            return Err(AgentError::InvalidConfig(
                "checkpoint holds a nonpositive temperature or non-finite weights".into(),
            ));
        }
        Ok(Self::from_parts(d, w_a, temperature))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AgentError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `logit_n = (W_a · instr) · view_n / T_a`.
pub fn action_logits(
    instr: &FeatureVector,
    views: &[FeatureVector],
    predictor: &ActionPredictor,
) -> Result<Vec<f64>, AgentError> {
    let q = predictor.project(instr)?;
    logits_from_query(&q, views, predictor.temperature)
}

pub(crate) fn logits_from_query(q: &[f64], views: &[FeatureVector], temperature: f64) -> Result<Vec<f64>, AgentError> {
    views
        .iter()
        .map(|v| {
            if v.dim() != q.len() {
                Err(AgentError::DimensionMismatch(q.len(), v.dim()))
            } else {
                Ok(dot_slices(q, &v.0) / temperature)
            }
        })
        .collect()
}

/// `-log softmax(logits)[teacher]`.
pub fn il_loss(logits: &[f64], teacher: usize) -> Result<f64, AgentError> {
    if teacher >= logits.len() {
        return Err(AgentError::IndexOutOfRange {
            index: teacher,
            len: logits.len(),
        });
    }
    Ok(cross_entropy(logits, teacher))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn orthogonal_instruction_gives_uniform_logits() {
        let p = ActionPredictor::identity(3, 0.1);
        let instr = FeatureVector(vec![1.0, 0.0, 0.0]);
        let views = vec![FeatureVector(vec![0.0, 1.0, 0.0]), FeatureVector(vec![0.0, 0.0, 2.0])];
        assert_eq!(action_logits(&instr, &views, &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn logits_match_oracle_and_permute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let p = ActionPredictor::from_parts(d, rand_vec(&mut rng, d * d), 0.3);
        let instr = FeatureVector(rand_vec(&mut rng, d));
        let views: Vec<FeatureVector> = (0..4).map(|_| FeatureVector(rand_vec(&mut rng, d))).collect();
        let got = action_logits(&instr, &views, &p).unwrap();
        for (n, v) in views.iter().enumerate() {
            let mut want = 0.0;
            for i in 0..d {
                let mut qi = 0.0;
                for j in 0..d {
                    qi += p.w_a[i * d + j] * instr.0[j];
                }
                want += qi * v.0[i];
            }
            assert!((got[n] - want / 0.3).abs() < 1e-12);
        }
        let perm = [2, 0, 3, 1];
        let pv: Vec<FeatureVector> = perm.iter().map(|&i| views[i].clone()).collect();
        let pl = action_logits(&instr, &pv, &p).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(pl[k], got[i]);
        }
    }

    #[test]
    fn il_loss_cases() {
        assert!((il_loss(&[0.0; 5], 2).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(il_loss(&[100.0, 0.0, 0.0], 0).unwrap() < 1e-40);
        assert!(matches!(il_loss(&[0.0; 2], 2), Err(AgentError::IndexOutOfRange { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ActionPredictor::from_parts(3, rand_vec(&mut rng, 9), 0.25);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..8], AGENT_MAGIC);
        assert_eq!(ActionPredictor::from_bytes(&bytes).unwrap(), p);
        assert!(ActionPredictor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
