use std::fmt;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::weights::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Text,
}

impl Modality {
    pub(crate) fn embedding_row(self) -> usize {
        match self {
            Modality::Vision => 0,
            Modality::Text => 1,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Text => "text",
        })
    }
}

/// Embedded tokens, each tagged with exactly one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    /// `N x d_model`
    pub embeddings: Array2<f64>,
    pub modality: Vec<Modality>,
}

impl TokenSequence {
    /// Embeds `token_ids` as token embedding plus modality embedding.
    pub fn embed(model: &Model, token_ids: Vec<usize>, modality: Vec<Modality>) -> Result<Self> {
        let n = token_ids.len();
        if n == 0 {
            return Err(Error::Input("token sequence must contain at least one token".into()));
        }
        if modality.len() != n {
            return Err(Error::Input(format!(
                "{} modality labels for {} tokens",
                modality.len(),
                n
            )));
        }
        let vocab = model.config.vocab_size;
        let d = model.config.d_model;
        let mut embeddings = Array2::zeros((n, d));
        for (i, (&t, &m)) in token_ids.iter().zip(&modality).enumerate() {
            if t >= vocab {
                return Err(Error::Bounds {
                    what: "token id",
                    index: t,
                    len: vocab,
                });
            }
            let mut row = embeddings.row_mut(i);
            row += &model.token_embedding.row(t);
            row += &model.modality_embedding.row(m.embedding_row());
        }
        Ok(Self {
            token_ids,
            embeddings,
            modality,
        })
    }

    /// Tokens in `vision` are tagged vision, every other token text.
    pub fn with_vision_range(model: &Model, token_ids: Vec<usize>, vision: Range<usize>) -> Result<Self> {
        let n = token_ids.len();
        if vision.start > vision.end || vision.end > n {
            return Err(Error::Input(format!(
                "vision range {}..{} does not fit a sequence of {} tokens",
                vision.start, vision.end, n
            )));
        }
        let modality = (0..n)
            .map(|i| {
                if vision.contains(&i) {
                    Modality::Vision
                } else {
                    Modality::Text
                }
            })
            .collect();
        Self::embed(model, token_ids, modality)
    }

    /// Wraps precomputed embeddings; used by tests that drive the stack directly.
    pub fn from_embeddings(embeddings: Array2<f64>, modality: Vec<Modality>) -> Result<Self> {
        let n = embeddings.nrows();
        if n == 0 || modality.len() != n {
            return Err(Error::Input(format!(
                "{} modality labels for {} embedded rows",
                modality.len(),
                n
            )));
        }
        Ok(Self {
            token_ids: vec![0; n],
            embeddings,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}
