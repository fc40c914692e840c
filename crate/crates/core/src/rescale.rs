//! Gain patterns built from head classifications, online class-conditioned
//! rescaling, and the closed-form comparisons between gain strategies.
//!
//! All strategy algebra is evaluated on the attention sublayer output
//! `Concat(g_h O_h) W_O`, before the residual add and the normalization.
//! `W_O` is linear, so identities stated on head-output sums carry over
//! after projection.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::{modality_ratio, ModalityPartition, RatioProfile};
use crate::model::{run_stack, GateTensor, HeadGain, LayerRecord, Modality, Model, TokenSequence};
use crate::taxonomy::{label_head, Boundaries, HeadClassification, HeadLabel, OverlapPolicy, Thresholds};

/// A set of head labels selecting which heads a strategy touches.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(pub Vec<HeadLabel>);

impl LabelSet {
    pub fn of(labels: &[HeadLabel]) -> Self {
        let mut v = labels.to_vec();
        v.sort_by_key(|l| l.class_index());
        v.dedup();
        Self(v)
    }

    /// Perception and reasoning heads, the functional heads.
    pub fn functional() -> Self {
        Self::of(&[HeadLabel::Perception, HeadLabel::Reasoning])
    }

    pub fn contains(&self, label: HeadLabel) -> bool {
        self.0.contains(&label)
    }

    fn normalized(&self) -> Self {
        Self::of(&self.0)
    }
}

/// How labels map to gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GainPolicy {
    /// The deployed method: `g_perc` on perception heads, `g_reas` on
    /// reasoning heads, 1 elsewhere.
    ClassConditioned { g_perc: f64, g_reas: f64 },
    /// Strategy A: `alpha` on the enhance set, 1 elsewhere.
    SelectiveEnhancement { alpha: f64, enhance: LabelSet },
    /// Strategy B: `beta` on the attenuate set, 1 elsewhere.
    SelectiveAttenuation { beta: f64, attenuate: LabelSet },
    /// Strategy C: `alpha` on the enhance set, `beta` on every other head.
    BipolarScaling { alpha: f64, beta: f64, enhance: LabelSet },
    /// Strategy D: `alpha` on enhance, `beta` on attenuate, 1 on the rest.
    Mixed {
        alpha: f64,
        beta: f64,
        enhance: LabelSet,
        attenuate: LabelSet,
    },
}

impl GainPolicy {
    pub fn neutral() -> Self {
        GainPolicy::ClassConditioned { g_perc: 1.0, g_reas: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPolicy(m));
        let alpha_ok = |a: f64| a.is_finite() && a > 1.0;
        let beta_ok = |b: f64| b.is_finite() && b > 0.0 && b < 1.0;
        match self {
            GainPolicy::ClassConditioned { g_perc, g_reas } => {
                for (n, g) in [("g_perc", g_perc), ("g_reas", g_reas)] {
                    if !(g.is_finite() && *g >= 1.0) {
                        return bad(format!("{n} = {g} must be >= 1"));
                    }
                }
            }
            GainPolicy::SelectiveEnhancement { alpha, .. } => {
                if !alpha_ok(*alpha) {
                    return bad(format!("alpha = {alpha} must be > 1"));
                }
            }
            GainPolicy::SelectiveAttenuation { beta, .. } => {
                if !beta_ok(*beta) {
                    return bad(format!("beta = {beta} must lie in (0, 1)"));
                }
            }
            GainPolicy::BipolarScaling { alpha, beta, .. } | GainPolicy::Mixed { alpha, beta, .. } => {
                if !alpha_ok(*alpha) {
                    return bad(format!("alpha = {alpha} must be > 1"));
                }
                if !beta_ok(*beta) {
                    return bad(format!("beta = {beta} must lie in (0, 1)"));
                }
            }
        }
        if let GainPolicy::Mixed { enhance, attenuate, .. } = self {
            if let Some(l) = enhance.0.iter().find(|l| attenuate.contains(**l)) {
                return bad(format!("label {l} is both enhanced and attenuated"));
            }
        }
        Ok(())
    }

    /// Gain assigned to a head carrying `label`. Does not validate.
    pub fn gain_for(&self, label: HeadLabel) -> f64 {
        match self {
            GainPolicy::ClassConditioned { g_perc, g_reas } => match label {
                HeadLabel::Perception => *g_perc,
                HeadLabel::Reasoning => *g_reas,
                HeadLabel::Unlabeled => 1.0,
            },
            GainPolicy::SelectiveEnhancement { alpha, enhance } => {
                if enhance.contains(label) {
                    *alpha
                } else {
                    1.0
                }
            }
            GainPolicy::SelectiveAttenuation { beta, attenuate } => {
                if attenuate.contains(label) {
                    *beta
                } else {
                    1.0
                }
            }
            GainPolicy::BipolarScaling { alpha, beta, enhance } => {
                if enhance.contains(label) {
                    *alpha
                } else {
                    *beta
                }
            }
            GainPolicy::Mixed {
                alpha,
                beta,
                enhance,
                attenuate,
            } => {
                if enhance.contains(label) {
                    *alpha
                } else if attenuate.contains(label) {
                    *beta
                } else {
                    1.0
                }
            }
        }
    }

    /// Whether heads with `label` are attenuated by this policy.
    pub fn attenuates(&self, label: HeadLabel) -> bool {
        match self {
            GainPolicy::SelectiveAttenuation { attenuate, .. } => attenuate.contains(label),
            GainPolicy::Mixed { enhance, attenuate, .. } => !enhance.contains(label) && attenuate.contains(label),
            GainPolicy::BipolarScaling { enhance, .. } => !enhance.contains(label),
            _ => false,
        }
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let p: GainPolicy = toml::from_str(src).map_err(|e| Error::InvalidPolicy(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }
}

/// Gain tensor for `classification` under `policy`.
pub fn gain_vector(classification: &HeadClassification, policy: &GainPolicy) -> Result<GateTensor> {
    policy.validate()?;
    let gains = classification.labels.mapv(|l| policy.gain_for(l));
    GateTensor::from_array(gains)
}

/// `Concat(g_h O_h) W_O` for one layer.
pub fn project_heads(head_outputs: &[Array2<f64>], w_o: ArrayView2<'_, f64>, gains: &[f64]) -> Result<Array2<f64>> {
    let first = head_outputs
        .first()
        .ok_or_else(|| Error::Input("no head outputs".into()))?;
    let (n, dv) = first.dim();
    let h = head_outputs.len();
    if gains.len() != h || w_o.nrows() != h * dv {
        return Err(Error::Dimension {
            what: "head projection",
            expected: (h * dv, h),
            got: (w_o.nrows(), gains.len()),
        });
    }
    let mut concat = Array2::<f64>::zeros((n, h * dv));
    for (i, (o, &g)) in head_outputs.iter().zip(gains).enumerate() {
        if o.dim() != (n, dv) {
            return Err(Error::Dimension {
                what: "head output",
                expected: (n, dv),
                got: o.dim(),
            });
        }
        let mut slot = concat.slice_mut(s![.., i * dv..(i + 1) * dv]);
        slot.assign(o);
        slot *= g;
    }
    Ok(concat.dot(&w_o))
}

/// Head `h`'s ungated contribution `O_h W_O[slot h]`.
pub fn head_contribution(head_outputs: &[Array2<f64>], w_o: ArrayView2<'_, f64>, head: usize) -> Array2<f64> {
    let dv = head_outputs[head].ncols();
    head_outputs[head].dot(&w_o.slice(s![head * dv..(head + 1) * dv, ..]))
}

#[derive(Debug, Clone)]
pub struct StrategyDifference {
    /// Sublayer output under X minus under A.
    pub measured: Array2<f64>,
    /// `(beta - 1) * sum_{h in H_att} O_h W_O[slot h]`.
    pub predicted: Array2<f64>,
    pub attenuated_heads: Vec<usize>,
    pub max_abs_deviation: f64,
}

/// Compares strategy A with an attenuating strategy X (C or D) on one layer.
/// `labels` holds the classification row of that layer.
pub fn strategy_difference(
    head_outputs: &[Array2<f64>],
    w_o: ArrayView2<'_, f64>,
    labels: &[HeadLabel],
    policy_a: &GainPolicy,
    policy_x: &GainPolicy,
) -> Result<StrategyDifference> {
    let (alpha_a, enhance_a) = match policy_a {
        GainPolicy::SelectiveEnhancement { alpha, enhance } => (*alpha, enhance.normalized()),
        other => {
            return Err(Error::IncomparablePolicies(format!(
                "reference policy must be selective enhancement, got {other:?}"
            )))
        }
    };
    let (alpha_x, beta, enhance_x) = match policy_x {
        GainPolicy::BipolarScaling { alpha, beta, enhance } | GainPolicy::Mixed { alpha, beta, enhance, .. } => {
            (*alpha, *beta, enhance.normalized())
        }
        other => {
            return Err(Error::IncomparablePolicies(format!(
                "compared policy must be bipolar or mixed, got {other:?}"
            )))
        }
    };
    if enhance_a != enhance_x || alpha_a != alpha_x {
        return Err(Error::IncomparablePolicies(
            "policies must share the enhance set and alpha".into(),
        ));
    }
    if labels.len() != head_outputs.len() {
        return Err(Error::Input(format!(
            "{} labels for {} heads",
            labels.len(),
            head_outputs.len()
        )));
    }
    let gains_a: Vec<f64> = labels.iter().map(|&l| policy_a.gain_for(l)).collect();
    let gains_x: Vec<f64> = labels.iter().map(|&l| policy_x.gain_for(l)).collect();
    let measured = project_heads(head_outputs, w_o, &gains_x)? - project_heads(head_outputs, w_o, &gains_a)?;
    let attenuated_heads: Vec<usize> = (0..labels.len()).filter(|&h| policy_x.attenuates(labels[h])).collect();
    let mut predicted = Array2::<f64>::zeros(measured.dim());
    for &h in &attenuated_heads {
        predicted.scaled_add(beta - 1.0, &head_contribution(head_outputs, w_o, h));
    }
    let max_abs_deviation = (&measured - &predicted)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(StrategyDifference {
        measured,
        predicted,
        attenuated_heads,
        max_abs_deviation,
    })
}

#[derive(Debug, Clone)]
pub struct AlignmentDelta {
    /// `u_h`: head `h`'s projected contribution, summed over positions, dotted with `v`.
    pub per_head: Vec<f64>,
    /// `sum_h (gamma_h - 1) u_h`
    pub predicted: f64,
    /// Exact change of the position-summed sublayer output along `v`.
    pub exact: f64,
}

/// First-order alignment change of a gain pattern along direction `v`.
pub fn alignment_delta(
    head_outputs: &[Array2<f64>],
    w_o: ArrayView2<'_, f64>,
    direction: &Array1<f64>,
    gains: &[f64],
) -> Result<AlignmentDelta> {
    if direction.iter().all(|&x| x == 0.0) || direction.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidDirection("direction must be finite and nonzero".into()));
    }
    if direction.len() != w_o.ncols() {
        return Err(Error::InvalidDirection(format!(
            "direction has length {}, model width is {}",
            direction.len(),
            w_o.ncols()
        )));
    }
    let per_head: Vec<f64> = (0..head_outputs.len())
        .map(|h| {
            head_contribution(head_outputs, w_o, h)
                .sum_axis(ndarray::Axis(0))
                .dot(direction)
        })
        .collect();
    let predicted = per_head.iter().zip(gains).map(|(u, g)| (g - 1.0) * u).sum();
    let ones = vec![1.0; gains.len()];
    let change = project_heads(head_outputs, w_o, gains)? - project_heads(head_outputs, w_o, &ones)?;
    let exact = change.sum_axis(ndarray::Axis(0)).dot(direction);
    Ok(AlignmentDelta {
        per_head,
        predicted,
        exact,
    })
}

/// Everything the online rescaler needs: which tokens are visual, and the
/// identification and gain hyperparameters.
#[derive(Debug, Clone)]
pub struct RescaleConfig {
    pub partition: ModalityPartition,
    pub boundaries: Boundaries,
    pub thresholds: Thresholds,
    pub policy: GainPolicy,
}

impl RescaleConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        self.thresholds.validate()?;
        self.boundaries.validate(model.config.num_layers)?;
        self.policy.validate()
    }
}

struct OnlineRescaler<'a> {
    cfg: &'a RescaleConfig,
    visual: Array2<f64>,
    labels: Array2<HeadLabel>,
    gains: Array2<f64>,
}

impl HeadGain for OnlineRescaler<'_> {
    fn gain(&mut self, layer: usize, head: usize, attention: &Array2<f64>) -> Result<Option<f64>> {
        let sv = modality_ratio(attention.view(), &self.cfg.partition, Modality::Vision)?.clamp(0.0, 1.0);
        let label = label_head(layer + 1, sv, &self.cfg.boundaries, &self.cfg.thresholds, OverlapPolicy::Reject)
            .map_err(|_| Error::Ambiguous { layer: layer + 1, head: head + 1 })?;
        let g = self.cfg.policy.gain_for(label);
        self.visual[[layer, head]] = sv;
        self.labels[[layer, head]] = label;
        self.gains[[layer, head]] = g;
        Ok(Some(g))
    }
}

#[derive(Debug, Clone)]
pub struct RescaledForward {
    pub logits: Array2<f64>,
    /// Ratios realized during the pass (each layer sees earlier layers' gains).
    pub profile: RatioProfile,
    pub classification: HeadClassification,
    pub gains: GateTensor,
    /// Present only when records were requested.
    pub records: Vec<LayerRecord>,
}

/// Single-pass inference with per-input head identification: at each layer
/// the heads' ratios are read off the freshly computed attention, the heads
/// are classified and their outputs rescaled before the output projection.
pub fn forward_rescaled(
    model: &Model,
    seq: &TokenSequence,
    cfg: &RescaleConfig,
    keep_records: bool,
) -> Result<RescaledForward> {
    cfg.validate(model)?;
    if cfg.partition.len() != seq.len() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} positions, sequence has {}",
            cfg.partition.len(),
            seq.len()
        )));
    }
    let shape = (model.config.num_layers, model.config.num_heads);
    let mut hook = OnlineRescaler {
        cfg,
        visual: Array2::zeros(shape),
        labels: Array2::from_elem(shape, HeadLabel::Unlabeled),
        gains: Array2::ones(shape),
    };
    let (logits, records) = run_stack(model, seq, &mut hook, keep_records)?;
    Ok(RescaledForward {
        logits,
        profile: RatioProfile { visual: hook.visual },
        classification: HeadClassification { labels: hook.labels },
        gains: GateTensor::from_array(hook.gains)?,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{layer_forward, LayerWeights, ModelConfig};
    use crate::rng::SeededRng;

    fn labels_2x2(grid: [[HeadLabel; 2]; 2]) -> HeadClassification {
        HeadClassification {
            labels: Array2::from_shape_vec((2, 2), grid.concat()).unwrap(),
        }
    }

    fn layer_heads(seed: u64, heads: usize) -> (Vec<Array2<f64>>, Array2<f64>) {
        let c = ModelConfig::new(1, heads, 4 * heads, 5);
        let w = LayerWeights::random(&c, &mut SeededRng::new(seed));
        let x = SeededRng::new(seed + 1).matrix(6, 4 * heads, 1.0);
        let rec = layer_forward(x.view(), &w, Array1::ones(heads).view(), &c).unwrap();
        (rec.heads.into_iter().map(|h| h.output).collect(), w.w_o)
    }

    #[test]
    fn neutral_policy_is_identity() {
        let c = labels_2x2([[HeadLabel::Perception, HeadLabel::Reasoning], [HeadLabel::Unlabeled, HeadLabel::Perception]]);
        assert!(gain_vector(&c, &GainPolicy::neutral()).unwrap().is_identity());
    }

    #[test]
    fn kimi_row_yields_three_gain_values() {
        let c = labels_2x2([[HeadLabel::Perception, HeadLabel::Unlabeled], [HeadLabel::Reasoning, HeadLabel::Unlabeled]]);
        let g = gain_vector(&c, &crate::presets::Preset::KimiVl.policy()).unwrap();
        assert_eq!(g.distinct_values(), vec![1.0, 1.20, 1.40]);
    }

    #[test]
    fn every_2x2_label_grid_matches_indicator_sum() {
        let (gp, gr) = (1.16, 1.3);
        let policy = GainPolicy::ClassConditioned { g_perc: gp, g_reas: gr };
        let all = HeadLabel::ALL;
        for code in 0..81usize {
            let mut grid = [[HeadLabel::Unlabeled; 2]; 2];
            let mut c = code;
            for cell in grid.iter_mut().flatten() {
                *cell = all[c % 3];
                c /= 3;
            }
            let g = gain_vector(&labels_2x2(grid), &policy).unwrap();
            for l in 0..2 {
                for h in 0..2 {
                    let lab = grid[l][h];
                    let ind = |b: bool| if b { 1.0 } else { 0.0 };
                    let expected = gp * ind(lab == HeadLabel::Perception)
                        + gr * ind(lab == HeadLabel::Reasoning)
                        + ind(lab == HeadLabel::Unlabeled);
                    assert_eq!(g.get(l, h), expected);
                }
            }
        }
    }

    #[test]
    fn policy_validation() {
        let e = LabelSet::functional();
        assert!(GainPolicy::SelectiveAttenuation { beta: 1.0, attenuate: e.clone() }.validate().is_err());
        assert!(GainPolicy::BipolarScaling { alpha: 1.0, beta: 0.5, enhance: e.clone() }.validate().is_err());
        assert!(GainPolicy::Mixed { alpha: 1.2, beta: 1.5, enhance: e.clone(), attenuate: LabelSet::default() }
            .validate()
            .is_err());
        assert!(GainPolicy::Mixed {
            alpha: 1.2,
            beta: 0.5,
            enhance: e.clone(),
            attenuate: LabelSet::of(&[HeadLabel::Reasoning])
        }
        .validate()
        .is_err());
        assert!(GainPolicy::ClassConditioned { g_perc: 0.9, g_reas: 1.0 }.validate().is_err());
        let c = HeadClassification::unlabeled(1, 1);
        assert!(gain_vector(&c, &GainPolicy::SelectiveEnhancement { alpha: 0.8, enhance: e }).is_err());
    }

    #[test]
    fn strategy_c_assigns_beta_to_every_non_enhanced_head() {
        let p = GainPolicy::BipolarScaling { alpha: 1.5, beta: 0.5, enhance: LabelSet::of(&[HeadLabel::Perception]) };
        assert_eq!(p.gain_for(HeadLabel::Perception), 1.5);
        assert_eq!(p.gain_for(HeadLabel::Reasoning), 0.5);
        assert_eq!(p.gain_for(HeadLabel::Unlabeled), 0.5);
        let d = GainPolicy::Mixed {
            alpha: 1.5,
            beta: 0.5,
            enhance: LabelSet::of(&[HeadLabel::Perception]),
            attenuate: LabelSet::of(&[HeadLabel::Reasoning]),
        };
        assert_eq!(d.gain_for(HeadLabel::Unlabeled), 1.0);
        assert_eq!(d.gain_for(HeadLabel::Reasoning), 0.5);
    }

    #[test]
    fn policy_toml_round_trip() {
        let src = "strategy = \"mixed\"\nalpha = 1.3\nbeta = 0.7\nenhance = [\"perception\", \"reasoning\"]\nattenuate = [\"unlabeled\"]\n";
        let p = GainPolicy::from_toml_str(src).unwrap();
        assert_eq!(GainPolicy::from_toml_str(&p.to_toml_string()).unwrap(), p);
        assert!(GainPolicy::from_toml_str("strategy = \"class-conditioned\"\ng_perc = 1.2\n").is_err());
    }

    #[test]
    fn difference_degenerate_cases() {
        let (outs, w_o) = layer_heads(3, 3);
        let labels = [HeadLabel::Perception, HeadLabel::Unlabeled, HeadLabel::Reasoning];
        let enhance = LabelSet::of(&[HeadLabel::Perception]);
        let a = GainPolicy::SelectiveEnhancement { alpha: 1.3, enhance: enhance.clone() };
        let c_beta1 = GainPolicy::BipolarScaling { alpha: 1.3, beta: 1.0, enhance: enhance.clone() };
        let d = strategy_difference(&outs, w_o.view(), &labels, &a, &c_beta1).unwrap();
        assert!(d.measured.iter().all(|&v| v == 0.0));
        assert!(d.predicted.iter().all(|&v| v == 0.0));

        // D with an empty attenuate set is A.
        let d_empty = GainPolicy::Mixed { alpha: 1.3, beta: 0.7, enhance: enhance.clone(), attenuate: LabelSet::default() };
        let d = strategy_difference(&outs, w_o.view(), &labels, &a, &d_empty).unwrap();
        assert!(d.attenuated_heads.is_empty());
        assert_eq!(d.max_abs_deviation, 0.0);

        let other_alpha = GainPolicy::BipolarScaling { alpha: 1.4, beta: 0.7, enhance };
        assert!(matches!(
            strategy_difference(&outs, w_o.view(), &labels, &a, &other_alpha),
            Err(Error::IncomparablePolicies(_))
        ));
    }

    #[test]
    fn difference_equation_holds_on_random_layer() {
        let (outs, w_o) = layer_heads(17, 4);
        let labels = [HeadLabel::Perception, HeadLabel::Unlabeled, HeadLabel::Reasoning, HeadLabel::Unlabeled];
        let enhance = LabelSet::functional();
        let a = GainPolicy::SelectiveEnhancement { alpha: 1.3, enhance: enhance.clone() };
        let c = GainPolicy::BipolarScaling { alpha: 1.3, beta: 0.7, enhance };
        let d = strategy_difference(&outs, w_o.view(), &labels, &a, &c).unwrap();
        assert_eq!(d.attenuated_heads, vec![1, 3]);
        assert!(d.max_abs_deviation <= 1e-12);
        assert!(d.measured.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn alignment_delta_cases() {
        let (outs, w_o) = layer_heads(5, 4);
        let v = SeededRng::new(6).vector(16, 1.0);
        let d = alignment_delta(&outs, w_o.view(), &v, &[1.0; 4]).unwrap();
        assert_eq!(d.predicted, 0.0);
        assert_eq!(d.exact, 0.0);

        let d = alignment_delta(&outs, w_o.view(), &v, &[1.0, 1.7, 1.0, 1.0]).unwrap();
        assert!((d.predicted - 0.7 * d.per_head[1]).abs() < 1e-15);

        let d = alignment_delta(&outs, w_o.view(), &v, &[1.3, 0.6, 1.0, 2.2]).unwrap();
        assert!((d.predicted - d.exact).abs() <= 1e-12);

        assert!(alignment_delta(&outs, w_o.view(), &Array1::zeros(16), &[1.0; 4]).is_err());
    }

    #[test]
    fn strategy_a_touches_only_the_enhance_set() {
        let (outs, w_o) = layer_heads(9, 4);
        let labels = [HeadLabel::Perception, HeadLabel::Unlabeled, HeadLabel::Reasoning, HeadLabel::Unlabeled];
        let a = GainPolicy::SelectiveEnhancement { alpha: 1.4, enhance: LabelSet::of(&[HeadLabel::Perception]) };
        let gains: Vec<f64> = labels.iter().map(|&l| a.gain_for(l)).collect();
        for (h, o) in outs.iter().enumerate() {
            let scaled = o.mapv(|v| v * gains[h]);
            if h == 0 {
                assert_ne!(&scaled, o);
            } else {
                assert!(scaled.iter().zip(o.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        let _ = w_o;
    }

    #[test]
    fn sign_structure_with_positive_contributions() {
        // Flip each head so its contribution has positive alignment with v.
        let (mut outs, w_o) = layer_heads(13, 4);
        let v = SeededRng::new(14).vector(16, 1.0);
        let base = alignment_delta(&outs, w_o.view(), &v, &[1.0; 4]).unwrap();
        for (o, u) in outs.iter_mut().zip(&base.per_head) {
            if *u < 0.0 {
                o.mapv_inplace(|x| -x);
            }
        }
        let labels = [HeadLabel::Perception, HeadLabel::Unlabeled, HeadLabel::Reasoning, HeadLabel::Unlabeled];
        let e = LabelSet::functional();
        let att = LabelSet::of(&[HeadLabel::Unlabeled]);
        let policies = [
            GainPolicy::SelectiveEnhancement { alpha: 1.3, enhance: e.clone() },
            GainPolicy::SelectiveAttenuation { beta: 0.7, attenuate: att },
            GainPolicy::BipolarScaling { alpha: 1.3, beta: 0.7, enhance: e },
        ];
        let deltas: Vec<f64> = policies
            .iter()
            .map(|p| {
                let g: Vec<f64> = labels.iter().map(|&l| p.gain_for(l)).collect();
                alignment_delta(&outs, w_o.view(), &v, &g).unwrap().exact
            })
            .collect();
        assert!(deltas[0] > 0.0);
        assert!(deltas[1] < 0.0);
        assert!(deltas[2] < deltas[0]);
    }

    fn spectral_norm(m: &Array2<f64>) -> f64 {
        let mut x = Array1::from_elem(m.ncols(), 1.0);
        let mut s = 0.0;
        for _ in 0..500 {
            let y = m.t().dot(&m.dot(&x));
            s = y.dot(&y).sqrt();
            x = y / s;
        }
        s.sqrt()
    }

    #[test]
    fn sublayer_inflation_bounded_by_max_gain() {
        let g_max = 1.5;
        let mut rng = SeededRng::new(77);
        for seed in 0..10 {
            let (outs, w_o) = layer_heads(100 + seed, 4);
            let gains: Vec<f64> = (0..4).map(|_| rng.range(1.0, g_max)).collect();
            let frob = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
            let concat_norm = outs.iter().map(|o| o.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
            let y = project_heads(&outs, w_o.view(), &gains).unwrap();
            assert!(frob(&y) <= g_max * concat_norm * spectral_norm(&w_o) * (1.0 + 1e-9));
            let eye = Array2::<f64>::eye(16);
            let unit = project_heads(&outs, eye.view(), &[1.0; 4]).unwrap();
            let scaled = project_heads(&outs, eye.view(), &gains).unwrap();
            assert!(frob(&scaled) <= g_max * frob(&unit));
        }
    }

    #[test]
    fn online_rescale_with_neutral_policy_matches_plain_forward() {
        let model = Model::random(ModelConfig::new(3, 2, 8, 12), 4).unwrap();
        let seq = TokenSequence::with_vision_range(&model, (0..10).collect(), 2..6).unwrap();
        let cfg = RescaleConfig {
            partition: ModalityPartition::from_sequence(&seq).unwrap(),
            boundaries: Boundaries::new(2, 2),
            thresholds: Thresholds::new(0.3, 0.1).unwrap(),
            policy: GainPolicy::neutral(),
        };
        let out = forward_rescaled(&model, &seq, &cfg, false).unwrap();
        let plain = crate::model::forward_vanilla(&model, &seq).unwrap();
        assert_eq!(out.logits, plain);
        assert!(out.gains.is_identity());
    }
}
