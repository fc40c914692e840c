//! Two-axis grid sweeps over boundaries, thresholds or gains.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::planted::PlantedModel;
use super::recovery::{mean_profile, score_classification};
use crate::error::{Error, Result};
use crate::modality::RatioProfile;
use crate::rescale::{forward_rescaled, GainPolicy, RescaleConfig};
use crate::rng::SeededRng;
use crate::taxonomy::{classify_heads, Boundaries, Thresholds};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub x: f64,
    pub y: f64,
    pub score: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub x_name: String,
    pub y_name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `xs` then `ys`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    /// Highest-scoring cell; ties go to the earliest in row-major order.
    pub fn best(&self) -> Option<&SweepCell> {
        let mut best: Option<(&SweepCell, f64)> = None;
        for c in &self.cells {
            if let Ok(s) = c.score {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
        }
        best.map(|(c, _)| c)
    }

    pub fn get(&self, x: usize, y: usize) -> &SweepCell {
        &self.cells[x * self.ys.len() + y]
    }

    /// CSV `x_name,y_name,score,error`; failed cells leave `score` empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},score,error\n", self.x_name, self.y_name);
        for c in &self.cells {
            match &c.score {
                Ok(s) => writeln!(out, "{},{},{s:.17e},", c.x, c.y),
                Err(e) => writeln!(out, "{},{},,{}", c.x, c.y, e.replace([',', '\n'], ";")),
            }
            .expect("string write");
        }
        out
    }
}

/// Evaluates every `(x, y)` cell in parallel. Results are collected in grid
/// order, so the output does not depend on scheduling; a failing cell is
/// recorded and the sweep continues.
pub fn sweep<F>(x_name: &str, xs: &[f64], y_name: &str, ys: &[f64], eval: F) -> SweepGrid
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    let points: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    let cells = points
        .par_iter()
        .map(|&(x, y)| SweepCell {
            x,
            y,
            score: eval(x, y).map_err(|e| e.to_string()),
        })
        .collect();
    SweepGrid {
        x_name: x_name.into(),
        y_name: y_name.into(),
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        cells,
    }
}

/// Planted models with their mean profiles, shared by every cell.
pub struct ProfiledModels<'a> {
    pub models: &'a [PlantedModel],
    pub profiles: Vec<RatioProfile>,
}

impl<'a> ProfiledModels<'a> {
    pub fn new(models: &'a [PlantedModel], n_inputs: usize, seed: u64) -> Result<Self> {
        let profiles = models
            .par_iter()
            .enumerate()
            .map(|(i, pm)| mean_profile(&pm.model, &pm.spec.layout, n_inputs, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models, profiles })
    }

    /// Mean three-class weighted F1 of the classification under `b`, `t`.
    pub fn score(&self, b: &Boundaries, t: &Thresholds) -> Result<f64> {
        let mut total = 0.0;
        for (pm, p) in self.models.iter().zip(&self.profiles) {
            let c = classify_heads(p, b, t)?;
            total += score_classification(pm, &c)?.3.weighted_f1;
        }
        Ok(total / self.models.len().max(1) as f64)
    }
}

fn as_layer(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidBoundaries(format!("{v} is not a layer index")))
    }
}

/// Grid over `(perc_last, reas_first)`, scored by weighted F1 against truth.
pub fn boundary_sweep(models: &ProfiledModels<'_>, thresholds: &Thresholds, perc_last: &[usize], reas_first: &[usize]) -> SweepGrid {
    let xs: Vec<f64> = perc_last.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = reas_first.iter().map(|&v| v as f64).collect();
    sweep("perc_last", &xs, "reas_first", &ys, |x, y| {
        models.score(&Boundaries::new(as_layer(x)?, as_layer(y)?), thresholds)
    })
}

/// Grid over `(tau_perc, tau_reas)`.
pub fn threshold_sweep(models: &ProfiledModels<'_>, boundaries: &Boundaries, tau_perc: &[f64], tau_reas: &[f64]) -> SweepGrid {
    sweep("tau_perc", tau_perc, "tau_reas", tau_reas, |x, y| {
        models.score(boundaries, &Thresholds { tau_perc: x, tau_reas: y })
    })
}

/// Copy-task accuracy of class-conditioned rescaling over `(g_perc, g_reas)`.
/// Every cell sees the same `samples` inputs per model.
pub fn gain_sweep(
    models: &[PlantedModel],
    boundaries: &Boundaries,
    thresholds: &Thresholds,
    samples: usize,
    seed: u64,
    g_perc: &[f64],
    g_reas: &[f64],
) -> SweepGrid {
    sweep("g_perc", g_perc, "g_reas", g_reas, |x, y| {
        let policy = GainPolicy::ClassConditioned { g_perc: x, g_reas: y };
        copy_accuracy(models, boundaries, thresholds, &policy, samples, seed)
    })
}

/// Fraction of copy-task inputs whose last-position argmax is the visual object.
pub fn copy_accuracy(
    models: &[PlantedModel],
    boundaries: &Boundaries,
    thresholds: &Thresholds,
    policy: &GainPolicy,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, pm) in models.iter().enumerate() {
        let copy = pm
            .copy
            .ok_or_else(|| Error::InvalidConfig("gain sweeps need copy-task models".into()))?;
        let layout = &pm.spec.layout;
        let cfg = RescaleConfig {
            partition: layout.partition()?,
            boundaries: *boundaries,
            thresholds: *thresholds,
            policy: policy.clone(),
        };
        let mut rng = SeededRng::new(seed.wrapping_add(i as u64));
        for _ in 0..samples {
            let (seq, target) = layout.sample_copy(&pm.model, &mut rng, copy.objects)?;
            let out = forward_rescaled(&pm.model, &seq, &cfg, false)?;
            let last = out.logits.row(seq.len() - 1);
            let pred = (0..last.len()).max_by(|&a, &b| last[a].total_cmp(&last[b])).expect("non-empty vocab");
            hits += usize::from(pred == target);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Whether boundaries `(perc_last, reas_first)` reach the deepest planted
/// perception layer and stop at or before the shallowest reasoning layer.
pub fn brackets(pm: &PlantedModel, perc_last: usize, reas_first: usize) -> bool {
    let (p, r) = pm.spec.depth_bands();
    p.is_none_or(|p| perc_last >= p) && r.is_none_or(|r| reas_first <= r)
}
