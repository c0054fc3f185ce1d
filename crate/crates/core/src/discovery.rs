//! Per-phrase probability distributions over the candidate views.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot_slices, FeatureVector};
use crate::math::softmax;

#[derive(Debug, Error, PartialEq)]
pub enum DiscoveryError {
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no views")]
    EmptyViews,
}

/// `softmax_n(dot(phrase, view_n) / tau)`.
pub fn view_distribution(
    phrase: &FeatureVector,
    views: &[FeatureVector],
    tau: f64,
) -> Result<Vec<f64>, DiscoveryError> {
    if !(tau > 0.0) {
        return Err(DiscoveryError::InvalidTemperature(tau));
    }
    if views.is_empty() {
        return Err(DiscoveryError::EmptyViews);
    }
    let mut logits = Vec::with_capacity(views.len());
    for v in views {
        if v.dim() != phrase.dim() {
            return Err(DiscoveryError::DimensionMismatch(phrase.dim(), v.dim()));
        }
        logits.push(dot_slices(&phrase.0, &v.0) / tau);
    }
    Ok(softmax(&logits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryBundle {
    pub landmark_dist: Vec<f64>,
    pub cooccurrence_dists: Vec<Vec<f64>>,
    pub landmark_feature: FeatureVector,
    pub cooccurrence_features: Vec<FeatureVector>,
}

impl DiscoveryBundle {
    pub fn n_views(&self) -> usize {
        self.landmark_dist.len()
    }

    pub fn n_co(&self) -> usize {
        self.cooccurrence_dists.len()
    }
}

pub fn discovery_bundle(
    landmark: &FeatureVector,
    cooccurrences: &[FeatureVector],
    views: &[FeatureVector],
    tau: f64,
) -> Result<DiscoveryBundle, DiscoveryError> {
    let landmark_dist = view_distribution(landmark, views, tau)?;
    let cooccurrence_dists = cooccurrences
        .iter()
        .map(|c| view_distribution(c, views, tau))
        .collect::<Result<_, _>>()?;
    Ok(DiscoveryBundle {
        landmark_dist,
        cooccurrence_dists,
        landmark_feature: landmark.clone(),
        cooccurrence_features: cooccurrences.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    fn basis(d: usize, i: usize) -> FeatureVector {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        FeatureVector(v)
    }

    #[test]
    fn uniform_when_sims_equal() {
        let views = vec![fv(&[1.0, 0.0]); 3];
        let p = view_distribution(&fv(&[0.4, 2.0]), &views, 0.5).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_softmax_oracle() {
        let views = [basis(3, 0), basis(3, 1), basis(3, 2)];
        let p = view_distribution(&basis(3, 0), &views, 0.5).unwrap();
        let z = 2f64.exp() + 2.0;
        assert!((p[0] - 2f64.exp() / z).abs() < 1e-15);
        assert!((p[1] - 1.0 / z).abs() < 1e-15);
        assert!((p[0] - 0.7870).abs() < 1e-4 && (p[2] - 0.1065).abs() < 1e-4);
    }

    #[test]
    fn large_margin_approaches_one_monotonically() {
        let views = [basis(3, 0), basis(3, 1), basis(3, 2)];
        let mut last = 0.0;
        for k in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let p = view_distribution(&fv(&[k, 0.0, 0.0]), &views, 0.5).unwrap()[0];
            assert!(p > last);
            last = p;
        }
        assert!(last > 1.0 - 1e-12);
    }

    #[test]
    fn bundle_shapes() {
        let views: Vec<_> = (0..6).map(|i| basis(6, i)).collect();
        let b = discovery_bundle(&basis(6, 0), &[], &views, 0.5).unwrap();
        assert_eq!(b.n_co(), 0);
        let cos: Vec<_> = (0..5).map(|i| basis(6, i + 1)).collect();
        let b = discovery_bundle(&basis(6, 0), &cos, &views, 0.5).unwrap();
        assert_eq!(b.n_co(), 5);
        for d in std::iter::once(&b.landmark_dist).chain(&b.cooccurrence_dists) {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let b = discovery_bundle(&basis(6, 2), &[basis(6, 2)], &views, 0.5).unwrap();
        assert_eq!(b.landmark_dist, b.cooccurrence_dists[0]);
    }

    #[test]
    fn errors() {
        let v = [fv(&[1.0])];
        assert_eq!(
            view_distribution(&fv(&[1.0]), &v, -1.0).unwrap_err(),
            DiscoveryError::InvalidTemperature(-1.0)
        );
        assert_eq!(view_distribution(&fv(&[1.0]), &[], 0.5).unwrap_err(), DiscoveryError::EmptyViews);
        assert_eq!(
            view_distribution(&fv(&[1.0, 2.0]), &v, 0.5).unwrap_err(),
            DiscoveryError::DimensionMismatch(2, 1)
        );
    }

    fn views_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
        (2usize..7).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, 4),
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), n),
            )
        })
    }

    proptest! {
        #[test]
        fn common_shift_invariance((phrase, views) in views_strategy(), c in -5.0f64..5.0) {
            // shift every view along phrase/|phrase|² so each sim moves by c
            let n2: f64 = phrase.iter().map(|x| x * x).sum();
            prop_assume!(n2 > 1e-3);
            let fviews: Vec<_> = views.iter().map(|v| fv(v)).collect();
            let shifted: Vec<_> = views
                .iter()
                .map(|v| fv(&v.iter().zip(&phrase).map(|(x, p)| x + c * p / n2).collect::<Vec<_>>()))
                .collect();
            let p = view_distribution(&fv(&phrase), &fviews, 0.5).unwrap();
            let q = view_distribution(&fv(&phrase), &shifted, 0.5).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn permutation_equivariance((phrase, views) in views_strategy(), rot in 0usize..7) {
            let fviews: Vec<_> = views.iter().map(|v| fv(v)).collect();
            let mut rotated = fviews.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let mut p = view_distribution(&fv(&phrase), &fviews, 0.5).unwrap();
            p.rotate_left(r);
            let q = view_distribution(&fv(&phrase), &rotated, 0.5).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn raising_one_similarity_raises_its_probability((phrase, views) in views_strategy(), idx in 0usize..7, bump in 0.01f64..2.0) {
            let n2: f64 = phrase.iter().map(|x| x * x).sum();
            prop_assume!(n2 > 1e-3);
            let i = idx % views.len();
            let fviews: Vec<_> = views.iter().map(|v| fv(v)).collect();
            let mut raised = fviews.clone();
            raised[i] = fv(&views[i].iter().zip(&phrase).map(|(x, p)| x + bump * p / n2).collect::<Vec<_>>());
            let p = view_distribution(&fv(&phrase), &fviews, 0.5).unwrap();
            let q = view_distribution(&fv(&phrase), &raised, 0.5).unwrap();
            prop_assert!(q[i] > p[i]);
        }
    }
}
