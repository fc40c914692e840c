//! Scoring head classification against planted truth.

use serde::Serialize;

use super::metrics::{weighted_f1, MetricReport};
use super::planted::PlantedModel;
use super::task::TaskLayout;
use crate::error::Result;
use crate::modality::{ratio_profile, RatioProfile};
use crate::model::{model_forward, GateTensor, Model};
use crate::rng::SeededRng;
use crate::taxonomy::{classify_heads, Boundaries, HeadClassification, HeadLabel, Thresholds};

/// Mean ratio profile over `n_inputs` fresh layout samples.
pub fn mean_profile(model: &Model, layout: &TaskLayout, n_inputs: usize, seed: u64) -> Result<RatioProfile> {
    let mut rng = SeededRng::new(seed);
    let partition = layout.partition()?;
    let gates = GateTensor::ones(model.num_layers(), model.num_heads());
    let profiles = (0..n_inputs.max(1))
        .map(|_| {
            let seq = layout.sample(model, &mut rng)?;
            let (_, trace) = model_forward(model, &seq, &gates)?;
            ratio_profile(&trace, &partition)
        })
        .collect::<Result<Vec<_>>>()?;
    RatioProfile::average(&profiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionRecall {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl PrecisionRecall {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            tp,
            fp,
            fn_,
            precision: div(tp, tp + fp),
            recall: div(tp, tp + fn_),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub perception: PrecisionRecall,
    pub reasoning: PrecisionRecall,
    /// Both functional classes pooled: a hit needs the right label.
    pub functional: PrecisionRecall,
    /// Three-class metrics over every head.
    pub metrics: MetricReport,
    pub profile: RatioProfile,
    pub classification: HeadClassification,
}

/// Scores `classification` against the truth of `pm`.
pub fn score_classification(pm: &PlantedModel, classification: &HeadClassification) -> Result<(PrecisionRecall, PrecisionRecall, PrecisionRecall, MetricReport)> {
    let truth = pm.spec.truth(pm.model.num_layers(), pm.model.num_heads());
    let mut counts = [[0usize; 3]; 2];
    for (t, p) in truth.iter().zip(classification.labels.iter()) {
        for (k, class) in [HeadLabel::Perception, HeadLabel::Reasoning].into_iter().enumerate() {
            match (*t == class, *p == class) {
                (true, true) => counts[k][0] += 1,
                (false, true) => counts[k][1] += 1,
                (true, false) => counts[k][2] += 1,
                (false, false) => {}
            }
        }
    }
    let pr = |c: [usize; 3]| PrecisionRecall::from_counts(c[0], c[1], c[2]);
    let pooled = [0, 1, 2].map(|i| counts[0][i] + counts[1][i]);
    let preds: Vec<usize> = classification.labels.iter().map(|l| l.class_index()).collect();
    let labels: Vec<usize> = truth.iter().map(|l| l.class_index()).collect();
    let metrics = weighted_f1(&preds, &labels, 3)?;
    Ok((pr(counts[0]), pr(counts[1]), pr(pooled), metrics))
}

/// Averages ratio profiles over `n_inputs` fresh inputs, classifies, and
/// scores against the planted sets.
pub fn recover_planted_heads(
    pm: &PlantedModel,
    boundaries: &Boundaries,
    thresholds: &Thresholds,
    n_inputs: usize,
    seed: u64,
) -> Result<RecoveryReport> {
    let profile = mean_profile(&pm.model, &pm.spec.layout, n_inputs, seed)?;
    let classification = classify_heads(&profile, boundaries, thresholds)?;
    let (perception, reasoning, functional, metrics) = score_classification(pm, &classification)?;
    Ok(RecoveryReport {
        perception,
        reasoning,
        functional,
        metrics,
        profile,
        classification,
    })
}

/// Boundaries at the planted depth bands: the deepest perception layer and
/// the shallowest reasoning layer.
pub fn planted_boundaries(pm: &PlantedModel) -> Boundaries {
    let l = pm.model.num_layers();
    let (p, r) = pm.spec.depth_bands();
    Boundaries::new(p.unwrap_or(1), r.unwrap_or(l))
}

/// Thresholds at the middle of both gaps between planted and background bands.
pub fn in_gap_thresholds(pm: &PlantedModel) -> Thresholds {
    let s = &pm.spec;
    Thresholds {
        tau_perc: 0.5 * (s.background_hi + s.rho_hi),
        tau_reas: 0.5 * (s.rho_lo + s.background_lo),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::planted::{generate_planted_model, PlantedSpec};
    use crate::model::ModelConfig;

    fn planted(seed: u64) -> PlantedModel {
        generate_planted_model(ModelConfig::new(6, 4, 32, 64), &PlantedSpec::banded(6, 4, seed)).unwrap()
    }

    #[test]
    fn in_gap_thresholds_recover_everything() {
        let pm = planted(11);
        let r = recover_planted_heads(&pm, &planted_boundaries(&pm), &in_gap_thresholds(&pm), 10, 5).unwrap();
        assert_eq!((r.functional.precision, r.functional.recall), (1.0, 1.0));
        assert_eq!(r.metrics.weighted_f1, 1.0);
    }

    #[test]
    fn threshold_above_band_recalls_no_perception() {
        let pm = planted(12);
        let t = Thresholds { tau_perc: 0.99, tau_reas: 0.15 };
        let r = recover_planted_heads(&pm, &planted_boundaries(&pm), &t, 5, 5).unwrap();
        assert_eq!(r.perception.recall, 0.0);
    }

    #[test]
    fn perception_recall_falls_monotonically_across_gap() {
        let pm = planted(13);
        let b = planted_boundaries(&pm);
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let tau = 0.4 + 0.06 * i as f64;
            let r = recover_planted_heads(&pm, &b, &Thresholds { tau_perc: tau, tau_reas: 0.15 }, 5, 5).unwrap();
            assert!(r.perception.recall <= last);
            last = r.perception.recall;
        }
        assert_eq!(last, 0.0);
    }
}
