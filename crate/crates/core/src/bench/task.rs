//! Synthetic modality-tagged inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::ModalityPartition;
use crate::model::{Model, TokenSequence};
use crate::rng::SeededRng;

/// Text prefix, a contiguous block of vision tokens, then a text suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskLayout {
    pub prefix_text: usize,
    pub vision: usize,
    pub suffix_text: usize,
}

impl Default for TaskLayout {
    fn default() -> Self {
        Self {
            prefix_text: 4,
            vision: 8,
            suffix_text: 20,
        }
    }
}

impl TaskLayout {
    pub fn len(&self) -> usize {
        self.prefix_text + self.vision + self.suffix_text
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vision_range(&self) -> std::ops::Range<usize> {
        self.prefix_text..self.prefix_text + self.vision
    }

    pub fn partition(&self) -> Result<ModalityPartition> {
        ModalityPartition::from_vision_range(self.len(), self.vision_range())
    }

    pub fn validate(&self) -> Result<()> {
        if self.vision == 0 || self.is_empty() {
            return Err(Error::InvalidConfig("task layout needs at least one vision token".into()));
        }
        Ok(())
    }

    /// Uniform random token ids at every position.
    pub fn sample(&self, model: &Model, rng: &mut SeededRng) -> Result<TokenSequence> {
        let vocab = model.config.vocab_size;
        let ids = (0..self.len()).map(|_| rng.below(vocab)).collect();
        TokenSequence::with_vision_range(model, ids, self.vision_range())
    }

    /// Copy-task input: every vision token is object `c < objects`, text
    /// tokens avoid the object ids. Returns the sequence and `c`.
    pub fn sample_copy(&self, model: &Model, rng: &mut SeededRng, objects: usize) -> Result<(TokenSequence, usize)> {
        let vocab = model.config.vocab_size;
        if objects == 0 || objects >= vocab {
            return Err(Error::InvalidConfig(format!(
                "{objects} object tokens do not fit a vocabulary of {vocab}"
            )));
        }
        let c = rng.below(objects);
        let vision = self.vision_range();
        let ids = (0..self.len())
            .map(|i| {
                if vision.contains(&i) {
                    c
                } else {
                    objects + rng.below(vocab - objects)
                }
            })
            .collect();
        Ok((TokenSequence::with_vision_range(model, ids, vision)?, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Modality, ModelConfig};

    #[test]
    fn default_layout_shape() {
        let l = TaskLayout::default();
        assert_eq!(l.len(), 32);
        assert_eq!(l.vision_range(), 4..12);
        let model = Model::random(ModelConfig::new(1, 2, 8, 20), 1).unwrap();
        let mut rng = SeededRng::new(4);
        let (seq, c) = l.sample_copy(&model, &mut rng, 3).unwrap();
        assert!(c < 3);
        for (i, (&t, &m)) in seq.token_ids.iter().zip(&seq.modality).enumerate() {
            if (4..12).contains(&i) {
                assert_eq!((t, m), (c, Modality::Vision));
            } else {
                assert!(t >= 3 && m == Modality::Text);
            }
        }
    }
}
