//! Models with planted perception and reasoning heads.
//!
//! Residual dimension 0 carries a modality indicator (`+1` on vision
//! tokens, `-1` on text) and dimension 1 a constant `1`. Token embeddings,
//! every `W_O` and every feed-forward output are zero on both, so the two
//! coordinates reach every layer unchanged. A planted head reads the
//! constant through its query and the indicator through its key, which adds
//! the same logit bonus (or penalty) to every visual key. Heads are tuned
//! layer by layer on probe inputs until each realized ratio sits in its band.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::task::TaskLayout;
use crate::error::{Error, Result};
use crate::modality::{modality_ratio, ModalityPartition, RatioProfile};
use crate::model::{attention_weights, layer_forward, LayerWeights, Modality, Model, ModelConfig};
use crate::rng::SeededRng;
use crate::taxonomy::HeadLabel;

/// Serializes 0-based `(layer, head)` pairs as 1-based `[layer, head]`.
mod one_based {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(heads: &[(usize, usize)], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<[usize; 2]> = heads.iter().map(|&(l, h)| [l + 1, h + 1]).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(usize, usize)>, D::Error> {
        let v: Vec<[usize; 2]> = Vec::deserialize(d)?;
        v.into_iter()
            .map(|[l, h]| {
                if l == 0 || h == 0 {
                    Err(serde::de::Error::custom("layer and head indices are 1-based"))
                } else {
                    Ok((l - 1, h - 1))
                }
            })
            .collect()
    }
}

/// Ground truth for a planted model. Head indices are 0-based here and
/// 1-based in serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSpec {
    #[serde(with = "one_based")]
    pub perception: Vec<(usize, usize)>,
    #[serde(with = "one_based")]
    pub reasoning: Vec<(usize, usize)>,
    /// High-ratio heads that are not perception heads (placed deep).
    #[serde(with = "one_based")]
    pub decoy_visual: Vec<(usize, usize)>,
    /// Low-ratio heads that are not reasoning heads (placed shallow).
    #[serde(with = "one_based")]
    pub decoy_text: Vec<(usize, usize)>,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub background_lo: f64,
    pub background_hi: f64,
    pub seed: u64,
    pub layout: TaskLayout,
    /// Probe inputs used while tuning.
    pub probes: usize,
    /// Extra distance from each band edge demanded on every probe.
    pub margin: f64,
    pub max_attempts: usize,
    /// Wire planted perception heads to copy the visual object token to the output.
    pub copy_task: bool,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            perception: Vec::new(),
            reasoning: Vec::new(),
            decoy_visual: Vec::new(),
            decoy_text: Vec::new(),
            rho_lo: 0.05,
            rho_hi: 0.7,
            background_lo: 0.25,
            background_hi: 0.5,
            seed: 0,
            layout: TaskLayout::default(),
            probes: 12,
            margin: 0.02,
            max_attempts: 50,
            copy_task: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    High,
    Low,
    Background,
}

impl PlantedSpec {
    /// Perception heads in the first third of the stack, reasoning heads in
    /// the last third, and one decoy of each kind in between when there is room.
    pub fn banded(num_layers: usize, num_heads: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed).fork(0xBA4D);
        let third = (num_layers / 3).max(1);
        let perc_last = third;
        let reas_first = (num_layers + 1 - third).max(perc_last + 1);
        let per_layer = (num_heads / 2).max(1);
        let pick = |layer: usize, rng: &mut SeededRng| -> Vec<(usize, usize)> {
            let mut heads: Vec<usize> = (0..num_heads).collect();
            rng.shuffle(&mut heads);
            let k = 1 + rng.below(per_layer);
            heads[..k].iter().map(|&h| (layer, h)).collect()
        };
        let mut spec = PlantedSpec {
            seed,
            ..Default::default()
        };
        for l in 0..perc_last.min(num_layers) {
            spec.perception.extend(pick(l, &mut rng));
        }
        for l in reas_first - 1..num_layers {
            spec.reasoning.extend(pick(l, &mut rng));
        }
        if reas_first >= perc_last + 3 {
            spec.decoy_text.push((perc_last, rng.below(num_heads)));
            spec.decoy_visual.push((reas_first - 2, rng.below(num_heads)));
        }
        spec.perception.sort_unstable();
        spec.reasoning.sort_unstable();
        spec
    }

    pub fn is_empty(&self) -> bool {
        self.perception.is_empty() && self.reasoning.is_empty() && self.decoy_visual.is_empty() && self.decoy_text.is_empty()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &(l, h) in self.perception.iter().chain(&self.reasoning).chain(&self.decoy_visual).chain(&self.decoy_text) {
            if l >= config.num_layers || h >= config.num_heads {
                return Err(Error::InvalidConfig(format!(
                    "planted head ({}, {}) outside a {}x{} model",
                    l + 1,
                    h + 1,
                    config.num_layers,
                    config.num_heads
                )));
            }
            if !seen.insert((l, h)) {
                return Err(Error::InvalidConfig(format!(
                    "head ({}, {}) planted twice",
                    l + 1,
                    h + 1
                )));
            }
        }
        let ordered = 0.0 <= self.rho_lo
            && self.rho_lo < self.background_lo
            && self.background_lo <= self.background_hi
            && self.background_hi < self.rho_hi
            && self.rho_hi <= 1.0;
        if !ordered {
            return Err(Error::InvalidConfig(format!(
                "planted bands must satisfy 0 <= rho_lo < a <= b < rho_hi <= 1, got rho_lo = {}, [a, b] = [{}, {}], rho_hi = {}",
                self.rho_lo, self.background_lo, self.background_hi, self.rho_hi
            )));
        }
        if self.probes == 0 || self.max_attempts == 0 || !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig("probes and max_attempts must be positive, margin non-negative".into()));
        }
        self.layout.validate()
    }

    /// Ratio class each head is planted into: 1 perception, 2 reasoning, 3 unlabeled.
    pub fn truth(&self, num_layers: usize, num_heads: usize) -> Array2<HeadLabel> {
        let mut t = Array2::from_elem((num_layers, num_heads), HeadLabel::Unlabeled);
        for &(l, h) in &self.perception {
            t[[l, h]] = HeadLabel::Perception;
        }
        for &(l, h) in &self.reasoning {
            t[[l, h]] = HeadLabel::Reasoning;
        }
        t
    }

    fn role(&self, head: (usize, usize)) -> Role {
        if self.perception.contains(&head) || self.decoy_visual.contains(&head) {
            Role::High
        } else if self.reasoning.contains(&head) || self.decoy_text.contains(&head) {
            Role::Low
        } else {
            Role::Background
        }
    }

    /// Deepest planted perception layer and shallowest planted reasoning layer, 1-based.
    pub fn depth_bands(&self) -> (Option<usize>, Option<usize>) {
        (
            self.perception.iter().map(|&(l, _)| l + 1).max(),
            self.reasoning.iter().map(|&(l, _)| l + 1).min(),
        )
    }
}

/// Layout of the copy readout, when installed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyTask {
    pub objects: usize,
    /// First residual dimension of the object code; the readout follows it.
    pub code_start: usize,
}

#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub model: Model,
    pub spec: PlantedSpec,
    /// Mean ratio over the probe inputs, after tuning.
    pub measured: Option<RatioProfile>,
    pub copy: Option<CopyTask>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a PlantedSpec,
    num_layers: usize,
    num_heads: usize,
    copy_task: Option<CopyTask>,
    /// `[layer][head]` mean probe ratios.
    measured_visual_ratio: Option<Vec<Vec<f64>>>,
}

impl PlantedModel {
    pub fn manifest_json(&self) -> String {
        let m = Manifest {
            spec: &self.spec,
            num_layers: self.model.config.num_layers,
            num_heads: self.model.config.num_heads,
            copy_task: self.copy,
            measured_visual_ratio: self
                .measured
                .as_ref()
                .map(|p| p.visual.rows().into_iter().map(|r| r.to_vec()).collect()),
        };
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }

    /// Reads the spec back out of a manifest.
    pub fn spec_from_manifest(json: &str) -> Result<PlantedSpec> {
        #[derive(Deserialize)]
        struct Head {
            spec: PlantedSpec,
        }
        serde_json::from_str::<Head>(json)
            .map(|h| h.spec)
            .map_err(|e| Error::Input(format!("planted manifest: {e}")))
    }
}

const STRENGTH_STEP: f64 = 1.4;
const SHRINK_STEP: f64 = 0.7;

fn zero_modality_rows(w: &mut LayerWeights, head: usize) {
    w.w_q[head].slice_mut(s![0..2, ..]).fill(0.0);
    w.w_k[head].slice_mut(s![0..2, ..]).fill(0.0);
}

fn plant(w: &mut LayerWeights, head: usize, sign: f64, strength: f64) {
    w.w_q[head].column_mut(0).fill(0.0);
    w.w_q[head][[1, 0]] = 1.0;
    w.w_k[head].column_mut(0).fill(0.0);
    w.w_k[head][[0, 0]] = sign * strength;
}

fn install_indicator(model: &mut Model) {
    model.token_embedding.slice_mut(s![.., 0..2]).fill(0.0);
    let me = &mut model.modality_embedding;
    me[[Modality::Vision.embedding_row(), 0]] = 1.0;
    me[[Modality::Text.embedding_row(), 0]] = -1.0;
    me.column_mut(1).fill(1.0);
    for w in &mut model.layers {
        w.w_o.slice_mut(s![.., 0..2]).fill(0.0);
        if let Some(m) = &mut w.mlp {
            m.w_out.slice_mut(s![.., 0..2]).fill(0.0);
        }
        for h in 0..w.num_heads() {
            zero_modality_rows(w, h);
        }
    }
}

/// Object `c` is embedded as a one-hot code at `code_start + c`; planted
/// perception heads copy the code into the readout block, which only they
/// write and only the unembedding reads.
fn install_copy(model: &mut Model, perception: &[(usize, usize)]) -> Result<CopyTask> {
    let c = &model.config;
    let (d, dv) = (c.d_model, c.d_v());
    let objects = dv.min((d - 2) / 2).min(c.vocab_size - 1);
    if objects < 2 {
        return Err(Error::InvalidConfig(format!(
            "copy task needs at least two objects; d_model = {d}, d_v = {dv}, vocab = {}",
            c.vocab_size
        )));
    }
    let code = 2;
    let readout = code + objects;
    model.token_embedding.slice_mut(s![.., code..readout + objects]).fill(0.0);
    model.modality_embedding.slice_mut(s![.., code..readout + objects]).fill(0.0);
    for o in 0..objects {
        let mut row = model.token_embedding.row_mut(o);
        row.fill(0.0);
        row[code + o] = 2.0;
    }
    for w in &mut model.layers {
        w.w_o.slice_mut(s![.., code..readout + objects]).fill(0.0);
        if let Some(m) = &mut w.mlp {
            m.w_out.slice_mut(s![.., code..readout + objects]).fill(0.0);
        }
        for h in 0..w.num_heads() {
            w.w_q[h].slice_mut(s![readout..readout + objects, ..]).fill(0.0);
            w.w_k[h].slice_mut(s![readout..readout + objects, ..]).fill(0.0);
        }
    }
    for &(l, h) in perception {
        let w = &mut model.layers[l];
        w.w_v[h].fill(0.0);
        for o in 0..objects {
            w.w_v[h][[code + o, o]] = 1.0;
            let mut slot_row = w.w_o.row_mut(h * dv + o);
            slot_row.fill(0.0);
            slot_row[readout + o] = 1.0;
        }
    }
    model.unembedding.slice_mut(s![readout..readout + objects, ..]).fill(0.0);
    model.unembedding.slice_mut(s![.., ..objects]).fill(0.0);
    for o in 0..objects {
        model.unembedding[[readout + o, o]] = 1.0;
    }
    Ok(CopyTask {
        objects,
        code_start: code,
    })
}

struct Bands {
    high: f64,
    low: f64,
    band: (f64, f64),
}

impl Bands {
    fn new(spec: &PlantedSpec) -> Self {
        let width = spec.background_hi - spec.background_lo;
        let m_band = spec.margin.min(width / 4.0);
        Self {
            high: (spec.rho_hi + spec.margin).min(1.0),
            low: (spec.rho_lo - spec.margin.min(spec.rho_lo / 2.0)).max(0.0),
            band: (spec.background_lo + m_band, spec.background_hi - m_band),
        }
    }

    fn violation(&self, role: Role, lo: f64, hi: f64) -> Option<String> {
        match role {
            Role::High if lo < self.high => Some(format!("lowest probe ratio {lo:.4} below {:.4}", self.high)),
            Role::Low if hi > self.low => Some(format!("highest probe ratio {hi:.4} above {:.4}", self.low)),
            Role::Background if lo < self.band.0 || hi > self.band.1 => Some(format!(
                "probe ratios [{lo:.4}, {hi:.4}] leave the background band [{:.4}, {:.4}]",
                self.band.0, self.band.1
            )),
            _ => None,
        }
    }
}

fn probe_ratios(
    xs: &[Array2<f64>],
    w: &LayerWeights,
    head: usize,
    causal: bool,
    partition: &ModalityPartition,
) -> Result<Vec<f64>> {
    xs.iter()
        .map(|x| {
            let a = attention_weights(x.view(), w, head, causal)?;
            modality_ratio(a.view(), partition, Modality::Vision)
        })
        .collect()
}

/// Builds a model whose planted heads realize their target ratio bands.
/// An empty spec gives the plain random model for `spec.seed`.
pub fn generate_planted_model(config: ModelConfig, spec: &PlantedSpec) -> Result<PlantedModel> {
    spec.validate(&config)?;
    let mut model = Model::random(config, spec.seed)?;
    if spec.is_empty() && !spec.copy_task {
        return Ok(PlantedModel {
            model,
            spec: spec.clone(),
            measured: None,
            copy: None,
        });
    }
    let config = model.config.clone();
    if !config.use_mlp {
        return Err(Error::InvalidConfig(
            "planting needs the residual stream (use_mlp = true)".into(),
        ));
    }
    if config.d_model < 3 {
        return Err(Error::InvalidConfig("planting needs d_model >= 3".into()));
    }
    let (num_layers, num_heads) = (config.num_layers, config.num_heads);
    let std = 1.0 / (config.d_model as f64).sqrt();
    let mut rng = SeededRng::new(spec.seed).fork(0x504C_414E);

    install_indicator(&mut model);
    let copy = if spec.copy_task {
        Some(install_copy(&mut model, &spec.perception)?)
    } else {
        None
    };

    let partition = spec.layout.partition()?;
    let mut xs = Vec::with_capacity(spec.probes);
    for _ in 0..spec.probes {
        xs.push(spec.layout.sample(&model, &mut rng)?.embeddings);
    }
    let bands = Bands::new(spec);
    let base = 2.0 * (config.d_k() as f64).sqrt();
    let mut measured = Array2::<f64>::zeros((num_layers, num_heads));

    for l in 0..num_layers {
        let roles: Vec<Role> = (0..num_heads).map(|h| spec.role((l, h))).collect();
        let mut strength = vec![base; num_heads];
        let mut shrink = vec![1.0; num_heads];
        for (h, role) in roles.iter().enumerate() {
            match role {
                Role::High => plant(&mut model.layers[l], h, 1.0, strength[h]),
                Role::Low => plant(&mut model.layers[l], h, -1.0, strength[h]),
                Role::Background => {}
            }
        }
        let mut pending: Vec<usize> = (0..num_heads).collect();
        let mut attempts = 0;
        while !pending.is_empty() {
            attempts += 1;
            let mut failing = Vec::new();
            for &h in &pending {
                let r = probe_ratios(&xs, &model.layers[l], h, config.causal_mask, &partition)?;
                let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                measured[[l, h]] = r.iter().sum::<f64>() / r.len() as f64;
                if let Some(reason) = bands.violation(roles[h], lo, hi) {
                    failing.push((h, reason));
                }
            }
            if let Some((h, reason)) = failing.first() {
                if attempts >= spec.max_attempts {
                    return Err(Error::GenerationFailure {
                        layer: l + 1,
                        head: h + 1,
                        attempts,
                        reason: reason.clone(),
                    });
                }
            }
            pending = failing.iter().map(|(h, _)| *h).collect();
            let w = &mut model.layers[l];
            for &h in &pending {
                match roles[h] {
                    Role::High | Role::Low => {
                        strength[h] *= STRENGTH_STEP;
                        let sign = if roles[h] == Role::High { 1.0 } else { -1.0 };
                        plant(w, h, sign, strength[h]);
                    }
                    Role::Background => {
                        shrink[h] *= SHRINK_STEP;
                        w.w_q[h] = rng.matrix(config.d_model, config.d_k(), std * shrink[h]);
                        w.w_k[h] = rng.matrix(config.d_model, config.d_k(), std * shrink[h]);
                        zero_modality_rows(w, h);
                        if let Some(c) = copy {
                            let r = c.code_start + c.objects;
                            w.w_q[h].slice_mut(s![r..r + c.objects, ..]).fill(0.0);
                            w.w_k[h].slice_mut(s![r..r + c.objects, ..]).fill(0.0);
                        }
                    }
                }
            }
        }
        let ones = Array1::ones(num_heads);
        for x in &mut xs {
            *x = layer_forward(x.view(), &model.layers[l], ones.view(), &config)?.output;
        }
    }
    model.validate()?;
    Ok(PlantedModel {
        model,
        spec: spec.clone(),
        measured: Some(RatioProfile::new(measured)?),
        copy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_forward, GateTensor};
    use crate::modality::ratio_profile;

    fn fresh_ratios(pm: &PlantedModel, n: usize, seed: u64) -> Vec<RatioProfile> {
        let mut rng = SeededRng::new(seed);
        let partition = pm.spec.layout.partition().unwrap();
        let g = GateTensor::ones(pm.model.num_layers(), pm.model.num_heads());
        (0..n)
            .map(|_| {
                let seq = pm.spec.layout.sample(&pm.model, &mut rng).unwrap();
                let (_, trace) = model_forward(&pm.model, &seq, &g).unwrap();
                ratio_profile(&trace, &partition).unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_spec_is_plain_random_model() {
        let cfg = ModelConfig::new(2, 2, 8, 16);
        let pm = generate_planted_model(cfg.clone(), &PlantedSpec { seed: 9, ..Default::default() }).unwrap();
        assert_eq!(pm.model, Model::random(cfg, 9).unwrap());
    }

    #[test]
    fn single_perception_head_reaches_high_band() {
        let spec = PlantedSpec {
            perception: vec![(0, 1)],
            rho_hi: 0.8,
            background_hi: 0.5,
            seed: 3,
            ..Default::default()
        };
        let pm = generate_planted_model(ModelConfig::new(2, 4, 32, 64), &spec).unwrap();
        for p in fresh_ratios(&pm, 10, 77) {
            assert!(p.get(0, 1) >= 0.8, "{}", p.get(0, 1));
        }
    }

    #[test]
    fn banded_specs_hold_on_fresh_inputs() {
        for seed in 0..5 {
            let cfg = ModelConfig::new(6, 4, 32, 64);
            let spec = PlantedSpec::banded(6, 4, seed);
            let pm = generate_planted_model(cfg, &spec).unwrap();
            let mean = RatioProfile::average(&fresh_ratios(&pm, 10, 1000 + seed)).unwrap();
            for &(l, h) in spec.perception.iter().chain(&spec.decoy_visual) {
                assert!(mean.get(l, h) >= spec.rho_hi, "seed {seed} ({l},{h}) {}", mean.get(l, h));
            }
            for &(l, h) in spec.reasoning.iter().chain(&spec.decoy_text) {
                assert!(mean.get(l, h) <= spec.rho_lo, "seed {seed} ({l},{h}) {}", mean.get(l, h));
            }
        }
    }

    #[test]
    fn banded_layout_for_six_layers() {
        let s = PlantedSpec::banded(6, 4, 1);
        assert!(s.perception.iter().all(|&(l, _)| l < 2));
        assert!(s.reasoning.iter().all(|&(l, _)| l >= 4));
        assert_eq!(s.decoy_text, vec![(2, s.decoy_text[0].1)]);
        assert_eq!(s.decoy_visual, vec![(3, s.decoy_visual[0].1)]);
        assert_eq!(s.depth_bands(), (Some(2), Some(5)));
    }

    #[test]
    fn rejects_bad_specs() {
        let cfg = ModelConfig::new(2, 2, 8, 16);
        let twice = PlantedSpec {
            perception: vec![(0, 0)],
            reasoning: vec![(0, 0)],
            ..Default::default()
        };
        assert!(generate_planted_model(cfg.clone(), &twice).is_err());
        let outside = PlantedSpec {
            perception: vec![(2, 0)],
            ..Default::default()
        };
        assert!(generate_planted_model(cfg.clone(), &outside).is_err());
        let bands = PlantedSpec {
            rho_lo: 0.3,
            ..Default::default()
        };
        assert!(generate_planted_model(cfg, &bands).is_err());
    }

    #[test]
    fn unreachable_band_names_the_head() {
        // Causal rows before the first vision token contribute nothing, so
        // the reachable maximum is 28/32.
        let spec = PlantedSpec {
            perception: vec![(1, 0)],
            rho_hi: 0.95,
            max_attempts: 5,
            ..Default::default()
        };
        match generate_planted_model(ModelConfig::new(2, 2, 16, 16), &spec) {
            Err(Error::GenerationFailure { layer, head, attempts, .. }) => {
                assert_eq!((layer, head, attempts), (2, 1, 5));
            }
            other => panic!("expected generation failure, got {other:?}"),
        }
    }

    #[test]
    fn manifest_round_trips_spec() {
        let spec = PlantedSpec::banded(6, 4, 2);
        let pm = generate_planted_model(ModelConfig::new(6, 4, 32, 64), &spec).unwrap();
        let json = pm.manifest_json();
        assert!(json.contains("measured_visual_ratio"));
        assert_eq!(PlantedModel::spec_from_manifest(&json).unwrap(), spec);
    }
}
