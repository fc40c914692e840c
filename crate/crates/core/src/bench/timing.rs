//! Wall-clock comparison of vanilla and gated+ratio inference, with the
//! matching operation counts.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::Result;
use crate::modality::ModalityPartition;
use crate::model::{forward_vanilla, Model, ModelConfig, TokenSequence};
use crate::rescale::{forward_rescaled, GainPolicy, RescaleConfig};
use crate::rng::SeededRng;
use crate::taxonomy::{Boundaries, Thresholds};

/// Configuration used for overhead measurements.
pub fn reference_config() -> ModelConfig {
    ModelConfig::new(4, 8, 128, 256)
}

/// Per-layer multiply-add counts of the attention sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub n: usize,
    /// Q, K, V projections: `3 N d^2`.
    pub t1: u64,
    /// Scores: `H N^2 d_k`.
    pub t2: u64,
    /// Softmax: `H N^2`.
    pub t3: u64,
    /// Value aggregation: `H N^2 d_v`.
    pub t4: u64,
    /// Output projection: `N d^2`.
    pub t5: u64,
    /// Ratio double sums for every head: `H |T_q| N`.
    pub extra_ratio: u64,
    /// Gate scaling of the concatenated head outputs: `N d`.
    pub extra_gate: u64,
}

impl FlopReport {
    pub fn new(config: &ModelConfig, partition: &ModalityPartition) -> Self {
        let n = partition.len() as u64;
        let (h, d) = (config.num_heads as u64, config.d_model as u64);
        let (dk, dv) = (config.d_k() as u64, config.d_v() as u64);
        Self {
            n: partition.len(),
            t1: 3 * n * d * d,
            t2: h * n * n * dk,
            t3: h * n * n,
            t4: h * n * n * dv,
            t5: n * d * d,
            extra_ratio: h * partition.ratio_cost() as u64,
            extra_gate: n * d,
        }
    }

    pub fn vanilla(&self) -> u64 {
        self.t1 + self.t2 + self.t3 + self.t4 + self.t5
    }

    pub fn gated(&self) -> u64 {
        self.vanilla() + self.extra_ratio + self.extra_gate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary statistics of a non-empty sample of seconds.
pub fn stats(samples: &[f64]) -> Stats {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Stats {
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile(&s, 0.5),
        p25: quantile(&s, 0.25),
        p75: quantile(&s, 0.75),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub n: usize,
    pub vanilla: Stats,
    pub gated: Stats,
    /// `median(gated) / median(vanilla) - 1`
    pub overhead: f64,
    /// Median over repetitions of `gated / vanilla` for back-to-back runs, minus 1.
    pub paired_overhead: f64,
    pub flops: FlopReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub reps: usize,
    pub timer_resolution_ns: u64,
    pub warnings: Vec<String>,
}

impl TimingReport {
    /// CSV `N,mode,mean,median,p25,p75,overhead` in seconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,mode,mean,median,p25,p75,overhead\n");
        for r in &self.rows {
            for (mode, s, o) in [("vanilla", r.vanilla, 0.0), ("gated+ratio", r.gated, r.overhead)] {
                writeln!(out, "{},{mode},{:.9e},{:.9e},{:.9e},{:.9e},{o:.6}", r.n, s.mean, s.median, s.p25, s.p75)
                    .expect("string write");
            }
        }
        out
    }

    /// CSV of per-layer operation counts.
    pub fn flops_csv(&self) -> String {
        let mut out = String::from("N,T1,T2,T3,T4,T5,extra_ratio,extra_gate\n");
        for r in &self.rows {
            let f = r.flops;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                f.n, f.t1, f.t2, f.t3, f.t4, f.t5, f.extra_ratio, f.extra_gate
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TimingConfig {
    pub lengths: Vec<usize>,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
    pub boundaries: Boundaries,
    pub thresholds: Thresholds,
    pub policy: GainPolicy,
}

impl TimingConfig {
    /// Ocean-R1 gains and thresholds, boundaries clipped to the model depth.
    pub fn for_model(config: &ModelConfig, lengths: Vec<usize>) -> Self {
        let v = crate::presets::Preset::OceanR1.values();
        let l = config.num_layers;
        Self {
            lengths,
            warmup: 5,
            reps: 31,
            seed: 0,
            boundaries: Boundaries::new(v.boundaries.perc_last.min(l), v.boundaries.reas_first.min(l)),
            thresholds: v.thresholds,
            policy: crate::presets::Preset::OceanR1.policy(),
        }
    }
}

/// Smallest observable nonzero step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

/// Times both modes at each length. Runs on the calling thread only; the
/// order of the two modes flips every repetition so drift hits both equally. Vision tokens occupy
/// positions `N/8 .. N/2`.
pub fn timing_harness(model: &Model, cfg: &TimingConfig) -> Result<TimingReport> {
    let resolution = timer_resolution();
    let mut rng = SeededRng::new(cfg.seed);
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let reps = cfg.reps.max(1);
    for &n in &cfg.lengths {
        let ids = (0..n).map(|_| rng.below(model.config.vocab_size)).collect();
        let vision = n / 8..n / 2;
        let seq = TokenSequence::with_vision_range(model, ids, vision.clone())?;
        let rescale = RescaleConfig {
            partition: ModalityPartition::from_vision_range(n, vision)?,
            boundaries: cfg.boundaries,
            thresholds: cfg.thresholds,
            policy: cfg.policy.clone(),
        };
        rescale.validate(model)?;
        for _ in 0..cfg.warmup {
            black_box(forward_vanilla(model, &seq)?);
            black_box(forward_rescaled(model, &seq, &rescale, false)?);
        }
        let mut vanilla = Vec::with_capacity(reps);
        let mut gated = Vec::with_capacity(reps);
        let time_vanilla = || -> Result<f64> {
            let t = Instant::now();
            black_box(forward_vanilla(model, black_box(&seq))?);
            Ok(t.elapsed().as_secs_f64())
        };
        let time_gated = || -> Result<f64> {
            let t = Instant::now();
            black_box(forward_rescaled(model, black_box(&seq), &rescale, false)?);
            Ok(t.elapsed().as_secs_f64())
        };
        for rep in 0..reps {
            if rep % 2 == 0 {
                vanilla.push(time_vanilla()?);
                gated.push(time_gated()?);
            } else {
                gated.push(time_gated()?);
                vanilla.push(time_vanilla()?);
            }
        }
        let ratios: Vec<f64> = gated.iter().zip(&vanilla).map(|(g, v)| g / v).collect();
        let (v, g) = (stats(&vanilla), stats(&gated));
        if v.median < 1000.0 * resolution.as_secs_f64() {
            warnings.push(format!(
                "N = {n}: median {:.3e} s is under 1000 timer ticks ({:?}); measurement invalid",
                v.median, resolution
            ));
        }
        rows.push(TimingRow {
            n,
            vanilla: v,
            gated: g,
            overhead: g.median / v.median - 1.0,
            paired_overhead: stats(&ratios).median - 1.0,
            flops: FlopReport::new(&model.config, &rescale.partition),
        });
    }
    Ok(TimingReport {
        rows,
        reps,
        timer_resolution_ns: resolution.as_nanos() as u64,
        warnings,
    })
}
