//! Entity alignment between two knowledge graphs, framed as bi-directional
//! textual entailment between the serialized neighbourhoods of cross-graph
//! entity pairs.
//!
//! The pipeline:
//!
//! 1. [`kg`] loads (or [`synth`] generates) two graphs and their seed links.
//! 2. [`sequence`] turns each entity into a relational or attribute text
//!    sequence, joins two of them with a prompt template and builds the three
//!    attention masks (full pair, first entity only, second entity only).
//! 3. [`encoder`] runs a small transformer under each mask and exposes the
//!    embedding projection plus the NSP-style and MLM-style entailment heads.
//! 4. [`objectives`] and [`trainer`] fit the model with an embedding margin
//!    loss plus bi-directional entailment losses, alternating relational and
//!    attribute epochs.
//! 5. [`inference`] selects candidates by embedding cosine and re-ranks the
//!    low-confidence queries with the entailment probability.
//! 6. [`experiment`] wires everything into reproducible runs on disk.

pub mod encoder;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod kg;
pub mod objectives;
pub mod sequence;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
