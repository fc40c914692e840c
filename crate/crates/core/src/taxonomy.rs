//! Depth- and ratio-gated classification of heads into perception and
//! reasoning roles.
//!
//! A head at (1-based) layer `l` is a perception head iff `l <= perc_last`
//! and `S_v >= tau_perc`, a reasoning head iff `l >= reas_first` and
//! `S_v <= tau_reas`. Everything else stays unlabeled.

use std::fmt::{self, Write as _};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::RatioProfile;

/// Layer boundaries, 1-based. The perception range is `1..=perc_last`, the
/// reasoning range `reas_first..=L`; they may overlap or leave a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundaries {
    pub perc_last: usize,
    pub reas_first: usize,
}

impl Boundaries {
    pub fn new(perc_last: usize, reas_first: usize) -> Self {
        Self { perc_last, reas_first }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        for (name, v) in [("perc_last", self.perc_last), ("reas_first", self.reas_first)] {
            if v < 1 || v > num_layers {
                return Err(Error::InvalidBoundaries(format!(
                    "{name} = {v} must lie in 1..={num_layers}"
                )));
            }
        }
        Ok(())
    }

    pub fn perception_eligible(&self, layer: usize) -> bool {
        layer <= self.perc_last
    }

    pub fn reasoning_eligible(&self, layer: usize) -> bool {
        layer >= self.reas_first
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub tau_perc: f64,
    pub tau_reas: f64,
}

impl Thresholds {
    pub fn new(tau_perc: f64, tau_reas: f64) -> Result<Self> {
        let t = Self { tau_perc, tau_reas };
        t.validate()?;
        Ok(t)
    }

    /// Checks `tau_perc in (0,1]`, `tau_reas in [0,1)` and `tau_reas < tau_perc`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_perc > 0.0
            && self.tau_perc <= 1.0
            && self.tau_reas >= 0.0
            && self.tau_reas < 1.0
            && self.tau_reas < self.tau_perc;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidThreshold {
                tau_perc: self.tau_perc,
                tau_reas: self.tau_reas,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadLabel {
    Perception,
    Reasoning,
    Unlabeled,
}

impl HeadLabel {
    pub const ALL: [HeadLabel; 3] = [HeadLabel::Perception, HeadLabel::Reasoning, HeadLabel::Unlabeled];

    /// 1-based class index used by the metric code.
    pub fn class_index(self) -> usize {
        match self {
            HeadLabel::Perception => 1,
            HeadLabel::Reasoning => 2,
            HeadLabel::Unlabeled => 3,
        }
    }
}

impl fmt::Display for HeadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadLabel::Perception => "perception",
            HeadLabel::Reasoning => "reasoning",
            HeadLabel::Unlabeled => "unlabeled",
        })
    }
}

/// What to do when a head satisfies both predicates. Only reachable when the
/// threshold ordering is relaxed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    #[default]
    Reject,
    PreferPerception,
    PreferReasoning,
}

/// Labels for every head, `[layer][head]` 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadClassification {
    pub labels: Array2<HeadLabel>,
}

impl HeadClassification {
    pub fn unlabeled(num_layers: usize, num_heads: usize) -> Self {
        Self {
            labels: Array2::from_elem((num_layers, num_heads), HeadLabel::Unlabeled),
        }
    }

    pub fn get(&self, layer: usize, head: usize) -> HeadLabel {
        self.labels[[layer, head]]
    }

    pub fn num_layers(&self) -> usize {
        self.labels.nrows()
    }

    pub fn num_heads(&self) -> usize {
        self.labels.ncols()
    }

    /// 0-based `(layer, head)` pairs carrying `label`, in row-major order.
    pub fn heads_with(&self, label: HeadLabel) -> Vec<(usize, usize)> {
        self.labels
            .indexed_iter()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Label of one head from its 1-based layer and ratio.
pub fn label_head(
    layer: usize,
    visual_ratio: f64,
    boundaries: &Boundaries,
    thresholds: &Thresholds,
    overlap: OverlapPolicy,
) -> std::result::Result<HeadLabel, ()> {
    let perc = boundaries.perception_eligible(layer) && visual_ratio >= thresholds.tau_perc;
    let reas = boundaries.reasoning_eligible(layer) && visual_ratio <= thresholds.tau_reas;
    match (perc, reas, overlap) {
        (true, true, OverlapPolicy::Reject) => Err(()),
        (true, true, OverlapPolicy::PreferPerception) | (true, false, _) => Ok(HeadLabel::Perception),
        (true, true, OverlapPolicy::PreferReasoning) | (false, true, _) => Ok(HeadLabel::Reasoning),
        (false, false, _) => Ok(HeadLabel::Unlabeled),
    }
}

fn classify_inner(
    profile: &RatioProfile,
    boundaries: &Boundaries,
    thresholds: &Thresholds,
    overlap: OverlapPolicy,
) -> Result<HeadClassification> {
    boundaries.validate(profile.num_layers())?;
    let mut out = HeadClassification::unlabeled(profile.num_layers(), profile.num_heads());
    for ((l, h), &sv) in profile.visual.indexed_iter() {
        out.labels[[l, h]] = label_head(l + 1, sv, boundaries, thresholds, overlap)
            .map_err(|_| Error::Ambiguous { layer: l + 1, head: h + 1 })?;
    }
    Ok(out)
}

/// Classifies every head of `profile`. Requires `tau_reas < tau_perc`.
pub fn classify_heads(
    profile: &RatioProfile,
    boundaries: &Boundaries,
    thresholds: &Thresholds,
) -> Result<HeadClassification> {
    thresholds.validate()?;
    classify_inner(profile, boundaries, thresholds, OverlapPolicy::Reject)
}

/// Like [`classify_heads`] but accepts unordered thresholds; heads meeting
/// both predicates are resolved by `overlap` (or rejected as ambiguous).
pub fn classify_heads_relaxed(
    profile: &RatioProfile,
    boundaries: &Boundaries,
    thresholds: &Thresholds,
    overlap: OverlapPolicy,
) -> Result<HeadClassification> {
    for t in [thresholds.tau_perc, thresholds.tau_reas] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidThreshold {
                tau_perc: thresholds.tau_perc,
                tau_reas: thresholds.tau_reas,
            });
        }
    }
    classify_inner(profile, boundaries, thresholds, overlap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCounts {
    pub perception: usize,
    pub reasoning: usize,
    pub unlabeled: usize,
    /// Fractions of all heads, in the order perception, reasoning, unlabeled.
    pub fractions: [f64; 3],
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.perception + self.reasoning + self.unlabeled
    }
}

pub fn classification_counts(classification: &HeadClassification) -> ClassCounts {
    let mut c = [0usize; 3];
    for l in classification.labels.iter() {
        c[l.class_index() - 1] += 1;
    }
    let total = classification.labels.len().max(1) as f64;
    ClassCounts {
        perception: c[0],
        reasoning: c[1],
        unlabeled: c[2],
        fractions: [c[0] as f64 / total, c[1] as f64 / total, c[2] as f64 / total],
    }
}

/// CSV `layer,head,S_v,label` (1-based) preceded by a `#` summary block.
pub fn classification_report(
    profile: &RatioProfile,
    classification: &HeadClassification,
    boundaries: &Boundaries,
    thresholds: &Thresholds,
) -> String {
    let counts = classification_counts(classification);
    let mut out = String::new();
    writeln!(
        out,
        "# boundaries: perc_last={} reas_first={}",
        boundaries.perc_last, boundaries.reas_first
    )
    .unwrap();
    writeln!(out, "# thresholds: tau_perc={} tau_reas={}", thresholds.tau_perc, thresholds.tau_reas).unwrap();
    writeln!(
        out,
        "# counts: perception={} reasoning={} unlabeled={} total={}",
        counts.perception,
        counts.reasoning,
        counts.unlabeled,
        counts.total()
    )
    .unwrap();
    writeln!(
        out,
        "# fractions: perception={:.6} reasoning={:.6} unlabeled={:.6}",
        counts.fractions[0], counts.fractions[1], counts.fractions[2]
    )
    .unwrap();
    out.push_str("layer,head,S_v,label\n");
    for ((l, h), sv) in profile.visual.indexed_iter() {
        writeln!(out, "{},{},{sv:.17e},{}", l + 1, h + 1, classification.get(l, h)).unwrap();
    }
    out
}
