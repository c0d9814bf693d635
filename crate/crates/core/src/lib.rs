//! Prototype-based parameter editing for device-cloud model adaptation.
//!
//! A device runs a small recommender whose last layers are swappable. The
//! cloud keeps a few prototype models, each with a hypernetwork that turns a
//! device's recent interaction window into bounded weight deltas. On every
//! sync the device uploads its window, the cloud picks the prototype that
//! needs the smallest edit and sends back edited layers.
//!
//! Modules, bottom up: [`numerics`], [`model`], [`editor`], [`prototypes`],
//! [`training`], [`data`], [`harness`], [`eval`], [`cli`].

pub mod cli;
pub mod data;
pub mod editor;
pub mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod prototypes;
pub mod training;

pub use error::{Error, Result};
