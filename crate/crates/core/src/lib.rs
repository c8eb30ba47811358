//! Two-agent household theory-of-mind engine.
//!
//! The crate has two halves. The generator samples household scenarios,
//! rolls them out with belief-driven planners and emits verified multiple
//! choice questions. The inference engine answers those questions by inverse
//! planning: it scores the observed actions and utterances under each
//! candidate mental-state hypothesis and normalizes.

pub mod world;
pub mod mind;
pub mod plan;
pub mod channel;
pub mod rng;
pub mod gen;
pub mod limp;
pub mod harness;
pub mod fixtures;
