//! Dense probability vectors over the entity set.

use serde::{Deserialize, Serialize};

use crate::kg::EntityId;

/// Which construction produced a distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistKind {
    /// Learned-weight rule aggregation.
    Weighted,
    /// All-ones rule aggregation.
    Unweighted,
    /// Language model restricted to entity tokens.
    Lm,
    /// Uniform over the correct answers.
    Reference,
    /// Uniform over all entities.
    Uniform,
}

impl DistKind {
    pub fn label(self) -> &'static str {
        match self {
            DistKind::Weighted => "P_w",
            DistKind::Unweighted => "P_s",
            DistKind::Lm => "P_LM",
            DistKind::Reference => "P*",
            DistKind::Uniform => "P_u",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityDistribution {
    pub probs: Vec<f64>,
    pub kind: DistKind,
    /// Softmax temperature, for the rule aggregations.
    pub temperature: Option<f64>,
}

impl EntityDistribution {
    pub fn new(probs: Vec<f64>, kind: DistKind) -> Self {
        Self {
            probs,
            kind,
            temperature: None,
        }
    }

    /// `softmax(scores / temperature)` with max subtraction.
    ///
    /// Entries whose true value underflows `f64` are stored as the smallest
    /// positive normal, so the result is strictly positive.
    pub fn softmax(scores: &[f64], temperature: f64, kind: DistKind) -> Self {
        let mut probs: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
        softmax_in_place(&mut probs);
        for p in probs.iter_mut() {
            if *p < f64::MIN_POSITIVE {
                *p = f64::MIN_POSITIVE;
            }
        }
        Self {
            probs,
            kind,
            temperature: Some(temperature),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, e: EntityId) -> f64 {
        self.probs[e.index()]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Index of the largest probability; ties go to the smallest id.
    pub fn argmax(&self) -> EntityId {
        EntityId(argmax(&self.probs) as u32)
    }
}

/// First index of the maximum (NaNs never win).
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_softmax_matches_closed_form() {
        let d = EntityDistribution::softmax(&[0.02, 0.01, 0.0], 0.01, DistKind::Weighted);
        let e = std::f64::consts::E;
        let z = e * e + e + 1.0;
        let want = [e * e / z, e / z, 1.0 / z];
        for (p, w) in d.probs.iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_scores_are_uniform() {
        let d = EntityDistribution::softmax(&[3.0; 5], 0.01, DistKind::Unweighted);
        for p in &d.probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_logits_stay_finite() {
        let d = EntityDistribution::softmax(&[1e6, 0.0, -1e6], 0.01, DistKind::Weighted);
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!(d.probs.iter().all(|p| p.is_finite() && *p > 0.0));
    }

    #[test]
    fn argmax_tie_goes_to_smallest() {
        let mut p = vec![0.0; 10];
        p[3] = 0.5;
        p[7] = 0.5;
        assert_eq!(argmax(&p), 3);
    }
}
