//! Alignment of code embedding spaces across two disjoint coding vocabularies.
//!
//! The library learns a linear map `W` sending the embedding space of a
//! "target" coding vocabulary into the space of a "source" vocabulary,
//! without any paired supervision:
//!
//! 1. **Embedding** ([`embedding`]): GloVe-style factorization of the visit
//!    co-occurrence matrix yields per-code vectors for each corpus.
//! 2. **Ontology-level alignment** ([`align`]): codes are grouped by their
//!    ontology categories level by level; groups are matched unsupervisedly
//!    by comparing row-sorted self-similarity profiles, and an orthogonal
//!    `W` is fit by iterated Procrustes over the accumulated anchor pairs.
//! 3. **Code-level refinement** ([`refine`]): `W` is fine-tuned by an
//!    adversarial discriminator (distribution teacher) combined with the
//!    task loss of a frozen backbone (task teacher).
//!
//! A synthetic two-vocabulary benchmark with a ground-truth mapping
//! ([`corpus::generate_synthetic`]) makes the whole pipeline verifiable
//! end to end; [`eval`] provides mapping and task metrics plus the
//! benchmark harness.

pub mod align;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod neural;
pub mod numerics;
pub mod refine;
pub mod rng;

mod error;

pub use error::{Error, Result};
