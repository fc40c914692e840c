//! # headwise
//!
//! Modality-aware attention head analysis and intervention on a small,
//! fully materialized decoder transformer.
//!
//! The pipeline:
//!
//! 1. [`model`] runs a deterministic multi-head attention stack whose
//!    attention matrices and per-head outputs are all recorded, with a
//!    multiplicative gate on each head's output.
//! 2. [`modality`] turns recorded attention into per-head visual attention
//!    ratios over vision / text token partitions.
//! 3. [`taxonomy`] labels heads as perception or reasoning heads from
//!    depth boundaries and ratio thresholds.
//! 4. [`rescale`] turns labels into gains (the class-conditioned method and
//!    four alternative strategies), runs single-pass rescaled inference and
//!    checks the algebra relating the strategies.
//! 5. [`attribution`] differentiates a next-token loss with respect to the
//!    gates, giving per-head contribution maps and rankings.
//! 6. [`bench`] plants functional heads in synthetic models and runs
//!    recovery, metric, sweep and timing experiments.
//!
//! ```
//! use headwise::model::{model_forward, GateTensor, Model, ModelConfig, TokenSequence};
//! use headwise::modality::{ratio_profile, ModalityPartition};
//!
//! let model = Model::random(ModelConfig::new(2, 4, 16, 32), 7).unwrap();
//! let seq = TokenSequence::with_vision_range(&model, (0..12).collect(), 2..8).unwrap();
//! let (_logits, trace) = model_forward(&model, &seq, &GateTensor::ones(2, 4)).unwrap();
//! let profile = ratio_profile(&trace, &ModalityPartition::from_sequence(&seq).unwrap()).unwrap();
//! assert_eq!(profile.visual.dim(), (2, 4));
//! ```

pub mod attribution;
pub mod bench;
pub mod cli;
pub mod error;
pub mod modality;
pub mod model;
pub mod presets;
pub mod report;
pub mod rescale;
pub mod rng;
pub mod taxonomy;

pub use error::{Error, ErrorClass, Result};
