//! Context-aware semantic similarity for short texts that carry a timestamp
//! and a location.
//!
//! Two ways of folding time and place into similarity are provided:
//!
//! - [`rankopt`] keeps text embeddings as they are and multiplies or adds
//!   distance kernels over time and place into the dot-product score, with the
//!   kernel weights fitted against labeled rankings by a shrinking grid search.
//! - [`spectra`] reduces the embedding space with PCA and appends standardized
//!   geotemporal feature columns, so the balance between text and context is
//!   set by the number of retained components.
//!
//! [`tsne`] projects either space to the plane for inspection, and [`evalkit`]
//! scores spaces against human similarity labels.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod geotime;
pub mod par;
pub mod rankopt;
pub mod sidecar;
pub mod spectra;
pub mod tabular;
pub mod tsne;

pub use error::{Error, Result};
