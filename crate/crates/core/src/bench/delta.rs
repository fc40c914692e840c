//! Expectation-level comparison of enhancement-only and bipolar gains.
//!
//! Task directions `v` are drawn so functional heads have clearly positive
//! utility `u_h` and every other head weakly positive utility on average.
//! Under that assumption attenuating the other heads can only remove
//! alignment, so the bipolar strategy should not beat pure enhancement.

use ndarray::{Array1, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{model_forward, GateTensor, Model, TokenSequence};
use crate::rescale::{alignment_delta, gain_vector, head_contribution, GainPolicy, LabelSet};
use crate::rng::SeededRng;
use crate::taxonomy::{HeadClassification, HeadLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaOrdering {
    pub draws: usize,
    /// Strategy A: alpha on functional heads.
    pub mean_a: f64,
    /// Strategy B: beta on unlabeled heads.
    pub mean_b: f64,
    /// Strategy C: alpha on functional heads, beta everywhere else.
    pub mean_c: f64,
    /// Share of draws with `Delta_A > 0`.
    pub frac_a_positive: f64,
}

/// Runs `draws` random directions over one input.
pub fn delta_ordering(
    model: &Model,
    seq: &TokenSequence,
    classification: &HeadClassification,
    alpha: f64,
    beta: f64,
    draws: usize,
    seed: u64,
) -> Result<DeltaOrdering> {
    let functional = LabelSet::functional();
    let policies = [
        GainPolicy::SelectiveEnhancement { alpha, enhance: functional.clone() },
        GainPolicy::SelectiveAttenuation { beta, attenuate: LabelSet::of(&[HeadLabel::Unlabeled]) },
        GainPolicy::BipolarScaling { alpha, beta, enhance: functional.clone() },
    ];
    let gains = policies
        .iter()
        .map(|p| gain_vector(classification, p))
        .collect::<Result<Vec<GateTensor>>>()?;

    let (l, h) = (model.num_layers(), model.num_heads());
    let (_, trace) = model_forward(model, seq, &GateTensor::ones(l, h))?;
    let mut directions: Vec<(bool, Array1<f64>)> = Vec::with_capacity(l * h);
    for li in 0..l {
        for hi in 0..h {
            let c = head_contribution(&trace.head_outputs[li], model.layers[li].w_o.view(), hi).sum_axis(Axis(0));
            let norm = c.dot(&c).sqrt();
            if norm > 0.0 {
                directions.push((functional.contains(classification.get(li, hi)), c / norm));
            }
        }
    }
    if !directions.iter().any(|(f, _)| *f) {
        return Err(Error::Input("no functional head with a nonzero contribution".into()));
    }

    let d = model.config.d_model;
    let mut rng = SeededRng::new(seed);
    let mut sums = [0.0f64; 3];
    let mut positive = 0usize;
    for _ in 0..draws {
        let mut v = rng.vector(d, 0.05);
        for (f, dir) in &directions {
            let w = if *f { rng.range(0.5, 1.5) } else { rng.range(0.0, 0.2) };
            v.scaled_add(w, dir);
        }
        let mut deltas = [0.0f64; 3];
        for (k, g) in gains.iter().enumerate() {
            for li in 0..l {
                let row = g.row(li).to_vec();
                deltas[k] += alignment_delta(&trace.head_outputs[li], model.layers[li].w_o.view(), &v, &row)?.predicted;
            }
        }
        positive += usize::from(deltas[0] > 0.0);
        for k in 0..3 {
            sums[k] += deltas[k];
        }
    }
    let n = draws.max(1) as f64;
    Ok(DeltaOrdering {
        draws,
        mean_a: sums[0] / n,
        mean_b: sums[1] / n,
        mean_c: sums[2] / n,
        frac_a_positive: positive as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::Array2;

    #[test]
    fn bipolar_never_beats_enhancement_on_average() {
        let model = Model::random(ModelConfig::new(2, 4, 16, 20), 4).unwrap();
        let seq = TokenSequence::with_vision_range(&model, (0..12).collect(), 2..7).unwrap();
        let mut labels = Array2::from_elem((2, 4), HeadLabel::Unlabeled);
        labels[[0, 1]] = HeadLabel::Perception;
        labels[[1, 3]] = HeadLabel::Reasoning;
        let c = HeadClassification { labels };
        let r = delta_ordering(&model, &seq, &c, 1.3, 0.7, 200, 9).unwrap();
        assert!(r.mean_a > 0.0);
        assert!(r.mean_c <= r.mean_a);
        assert!((r.mean_c - (r.mean_a + r.mean_b)).abs() <= 1e-9 * r.mean_a.abs().max(1.0));
    }

    #[test]
    fn needs_a_functional_head() {
        let model = Model::random(ModelConfig::new(1, 2, 8, 10), 4).unwrap();
        let seq = TokenSequence::with_vision_range(&model, vec![1, 2, 3], 0..1).unwrap();
        let c = HeadClassification::unlabeled(1, 2);
        assert!(delta_ordering(&model, &seq, &c, 1.3, 0.7, 10, 0).is_err());
    }
}
