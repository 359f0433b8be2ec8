//! Synthetic glaucoma records: schema, generator, renderer, vocabulary,
//! line-delimited JSON I/O, fold splits and modality masking.

pub mod generate;
pub mod jsonl;
pub mod render;
pub mod sample;
pub mod split;
pub mod vocab;

pub use generate::{generate_dataset, generate_sample, render_report, rim_description, reference_sample};
pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, to_jsonl};
pub use render::render_fundus;
pub use sample::{encode_factors, DiscSize, GlaucomaSample, RimColor, Risk, FACTOR_DIM};
pub use split::{mask_modalities, model_inputs, split_folds, Fold, MaskedInputs, ModalityFlags};
pub use vocab::Vocabulary;
