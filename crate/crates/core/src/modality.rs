//! Modality partitions and per-head modality attention ratios.
//!
//! For a head with attention `A`, the ratio of modality `m` is the attention
//! mass landing on positions of `m`, averaged over the query set:
//! `S_m = (1/|T_q|) * sum_{i in T_q} sum_{j in T_m} a_ij`.

use std::fmt::Write as _;
use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{AttentionTrace, Modality, TokenSequence};

/// Vision / text split of positions `0..N` plus the query positions averaged over.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityPartition {
    vision_mask: Vec<f64>,
    text_mask: Vec<f64>,
    queries: Vec<usize>,
}

impl ModalityPartition {
    /// Partition from per-position labels with the full sequence as query set.
    pub fn from_labels(labels: &[Modality]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidPartition("empty sequence".into()));
        }
        let vision_mask: Vec<f64> = labels
            .iter()
            .map(|m| if *m == Modality::Vision { 1.0 } else { 0.0 })
            .collect();
        let text_mask = vision_mask.iter().map(|v| 1.0 - v).collect();
        Ok(Self {
            vision_mask,
            text_mask,
            queries: (0..labels.len()).collect(),
        })
    }

    pub fn from_sequence(seq: &TokenSequence) -> Result<Self> {
        Self::from_labels(&seq.modality)
    }

    /// `n` positions with `vision` tagged vision and everything else text.
    pub fn from_vision_range(n: usize, vision: Range<usize>) -> Result<Self> {
        if vision.end > n || vision.start > vision.end {
            return Err(Error::InvalidPartition(format!(
                "vision range {}..{} outside 0..{n}",
                vision.start, vision.end
            )));
        }
        let labels: Vec<Modality> = (0..n)
            .map(|i| if vision.contains(&i) { Modality::Vision } else { Modality::Text })
            .collect();
        Self::from_labels(&labels)
    }

    /// Restricts the query set. Positions must be distinct and within `0..N`.
    pub fn with_queries(mut self, mut queries: Vec<usize>) -> Result<Self> {
        queries.sort_unstable();
        queries.dedup();
        if queries.is_empty() {
            return Err(Error::InvalidPartition("query set is empty".into()));
        }
        if let Some(&q) = queries.iter().find(|&&q| q >= self.len()) {
            return Err(Error::InvalidPartition(format!("query position {q} outside 0..{}", self.len())));
        }
        self.queries = queries;
        Ok(self)
    }

    /// Only positions `start..N` act as queries, mimicking decode-time ratios
    /// over generated tokens.
    pub fn generated_only(self, start: usize) -> Result<Self> {
        let n = self.len();
        self.with_queries((start..n).collect())
    }

    pub fn len(&self) -> usize {
        self.vision_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vision_mask.is_empty()
    }

    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    pub fn vision_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.vision_mask[i] == 1.0).collect()
    }

    pub fn text_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.vision_mask[i] == 0.0).collect()
    }

    pub fn modality_of(&self, position: usize) -> Modality {
        if self.vision_mask[position] == 1.0 {
            Modality::Vision
        } else {
            Modality::Text
        }
    }

    fn mask(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Vision => &self.vision_mask,
            Modality::Text => &self.text_mask,
        }
    }

    /// Multiply-adds done by one [`modality_ratio`] call: `|T_q| * N`.
    pub fn ratio_cost(&self) -> usize {
        self.queries.len() * self.len()
    }
}

/// Fraction of attention mass on `modality`, averaged over the query set.
/// Traverses every entry of each query row against a 0/1 indicator.
pub fn modality_ratio(attention: ArrayView2<'_, f64>, partition: &ModalityPartition, modality: Modality) -> Result<f64> {
    let n = partition.len();
    if attention.dim() != (n, n) {
        return Err(Error::InvalidPartition(format!(
            "partition covers {n} positions, attention is {:?}",
            attention.dim()
        )));
    }
    if partition.queries.is_empty() {
        return Err(Error::InvalidPartition("query set is empty".into()));
    }
    let mask = ArrayView1::from(partition.mask(modality));
    let mut total = 0.0;
    for &i in &partition.queries {
        total += attention.row(i).dot(&mask);
    }
    Ok(total / partition.queries.len() as f64)
}

/// Visual ratio `S_v` for every (layer, head), stored `[layer][head]` 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioProfile {
    pub visual: Array2<f64>,
}

impl RatioProfile {
    pub fn new(visual: Array2<f64>) -> Result<Self> {
        if let Some(((l, h), v)) = visual.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!(
                "visual ratio {v} at layer {}, head {} outside [0, 1]",
                l + 1,
                h + 1
            )));
        }
        Ok(Self { visual })
    }

    pub fn num_layers(&self) -> usize {
        self.visual.nrows()
    }

    pub fn num_heads(&self) -> usize {
        self.visual.ncols()
    }

    /// `S_v` at 0-based indices.
    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.visual[[layer, head]]
    }

    /// `S_t = 1 - S_v` for every entry.
    pub fn textual(&self) -> Array2<f64> {
        self.visual.mapv(|v| 1.0 - v)
    }

    /// Entry-wise mean of several profiles of equal shape.
    pub fn average(profiles: &[RatioProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::Input("no profiles to average".into()))?;
        let mut acc = Array2::<f64>::zeros(first.visual.dim());
        for p in profiles {
            if p.visual.dim() != acc.dim() {
                return Err(Error::Dimension {
                    what: "ratio profile",
                    expected: acc.dim(),
                    got: p.visual.dim(),
                });
            }
            acc += &p.visual;
        }
        acc /= profiles.len() as f64;
        // Clamp rounding drift past the unit interval.
        Ok(Self {
            visual: acc.mapv(|v| v.clamp(0.0, 1.0)),
        })
    }

    /// CSV with header `layer,head,S_v`, 1-based indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,S_v\n");
        for ((l, h), v) in self.visual.indexed_iter() {
            writeln!(out, "{},{},{v:.17e}", l + 1, h + 1).expect("string write");
        }
        out
    }
}

/// `S_v` of every head in `trace`.
pub fn ratio_profile(trace: &AttentionTrace, partition: &ModalityPartition) -> Result<RatioProfile> {
    trace.check_complete()?;
    let mut visual = Array2::zeros((trace.num_layers(), trace.num_heads()));
    for (l, layer) in trace.attention.iter().enumerate() {
        for (h, a) in layer.iter().enumerate() {
            visual[[l, h]] = modality_ratio(a.view(), partition, Modality::Vision)?.clamp(0.0, 1.0);
        }
    }
    Ok(RatioProfile { visual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_forward, GateTensor, Model, ModelConfig};
    use crate::rng::SeededRng;

    fn brute_ratio(a: &Array2<f64>, set: &[usize], queries: &[usize]) -> f64 {
        let mut s = 0.0;
        for &i in queries {
            for &j in set {
                s += a[[i, j]];
            }
        }
        s / queries.len() as f64
    }

    #[test]
    fn all_vision_gives_one() {
        let a = SeededRng::new(1).stochastic(5, 5);
        let p = ModalityPartition::from_vision_range(5, 0..5).unwrap();
        assert!((modality_ratio(a.view(), &p, Modality::Vision).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_attention_splits_by_set_size() {
        let a = Array2::from_elem((6, 6), 1.0 / 6.0);
        let p = ModalityPartition::from_vision_range(6, 1..4).unwrap();
        assert!((modality_ratio(a.view(), &p, Modality::Vision).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_double_loop_and_partitions_mass() {
        let a = SeededRng::new(7).stochastic(8, 8);
        let p = ModalityPartition::from_vision_range(8, 0..3).unwrap();
        let sv = modality_ratio(a.view(), &p, Modality::Vision).unwrap();
        let st = modality_ratio(a.view(), &p, Modality::Text).unwrap();
        let all: Vec<usize> = (0..8).collect();
        assert!((sv - brute_ratio(&a, &[0, 1, 2], &all)).abs() <= 1e-14);
        assert!((sv + st - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn empty_query_set_is_rejected() {
        let p = ModalityPartition::from_vision_range(4, 0..2).unwrap();
        assert!(p.clone().with_queries(vec![]).is_err());
        assert!(p.clone().with_queries(vec![4]).is_err());
        assert!(ModalityPartition::from_vision_range(4, 2..6).is_err());
        let a = Array2::from_elem((3, 3), 1.0 / 3.0);
        assert!(modality_ratio(a.view(), &p, Modality::Vision).is_err());
    }

    #[test]
    fn generated_only_restricts_queries() {
        let mut a = Array2::zeros((4, 4));
        for i in 0..4 {
            a[[i, if i < 2 { 0 } else { 3 }]] = 1.0;
        }
        let p = ModalityPartition::from_vision_range(4, 0..1).unwrap();
        assert_eq!(modality_ratio(a.view(), &p, Modality::Vision).unwrap(), 0.5);
        let g = p.generated_only(2).unwrap();
        assert_eq!(g.queries(), &[2, 3]);
        assert_eq!(modality_ratio(a.view(), &g, Modality::Vision).unwrap(), 0.0);
    }

    #[test]
    fn moving_mass_to_vision_raises_ratio_by_eps_over_queries() {
        let mut a = SeededRng::new(3).stochastic(6, 6);
        let p = ModalityPartition::from_vision_range(6, 0..2).unwrap();
        let before = modality_ratio(a.view(), &p, Modality::Vision).unwrap();
        let eps = 0.5 * a[[4, 5]];
        a[[4, 5]] -= eps;
        a[[4, 1]] += eps;
        let after = modality_ratio(a.view(), &p, Modality::Vision).unwrap();
        assert!((after - before - eps / 6.0).abs() < 1e-15);
    }

    #[test]
    fn permuting_positions_with_partition_keeps_uniform_ratio() {
        let n = 7;
        let a = Array2::from_elem((n, n), 1.0 / n as f64);
        let p = ModalityPartition::from_vision_range(n, 0..3).unwrap();
        let perm = [6, 2, 4, 0, 1, 5, 3];
        let labels: Vec<Modality> = perm.iter().map(|&i| p.modality_of(i)).collect();
        let q = ModalityPartition::from_labels(&labels).unwrap();
        let base = modality_ratio(a.view(), &p, Modality::Vision).unwrap();
        let permuted = modality_ratio(a.view(), &q, Modality::Vision).unwrap();
        assert!((base - permuted).abs() < 1e-15);
    }

    #[test]
    fn profile_entries_equal_independent_ratios() {
        let model = Model::random(ModelConfig::new(2, 3, 12, 10), 5).unwrap();
        let seq = TokenSequence::with_vision_range(&model, (0..9).collect(), 2..6).unwrap();
        let (_, trace) = model_forward(&model, &seq, &GateTensor::ones(2, 3)).unwrap();
        let part = ModalityPartition::from_sequence(&seq).unwrap();
        let profile = ratio_profile(&trace, &part).unwrap();
        for l in 0..2 {
            for h in 0..3 {
                let direct = modality_ratio(trace.attention[l][h].view(), &part, Modality::Vision).unwrap();
                assert_eq!(profile.get(l, h), direct);
            }
        }
        assert!(profile.to_csv().starts_with("layer,head,S_v\n1,1,"));
        assert_eq!(profile.to_csv().lines().count(), 7);
    }

    #[test]
    fn attention_restricted_to_text_gives_zero_profile() {
        // Causal mask plus vision at the end: the only query that sees the
        // vision token is the last one, so drop it from T_q.
        let model = Model::random(ModelConfig::new(2, 2, 8, 10), 9).unwrap();
        let seq = TokenSequence::with_vision_range(&model, (0..6).collect(), 5..6).unwrap();
        let (_, trace) = model_forward(&model, &seq, &GateTensor::ones(2, 2)).unwrap();
        let part = ModalityPartition::from_sequence(&seq).unwrap().with_queries((0..5).collect()).unwrap();
        let profile = ratio_profile(&trace, &part).unwrap();
        assert!(profile.visual.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let p = ModalityPartition::from_vision_range(3, 0..1).unwrap();
        assert!(matches!(
            ratio_profile(&AttentionTrace::default(), &p),
            Err(Error::IncompleteTrace(_))
        ));
    }
}
