//! Ladder network: encoders, decoder, combinators and costs.

pub mod combinator;
pub mod cost;
pub mod model;

pub use combinator::{Combinator, CombinatorKind};
pub use cost::{reconstruction_cost, supervised_cost, Attribute, CostWeights, Task};
pub use model::{CleanPass, CostReport, Decoder, DecoderConfig, LadderActivations, LadderConfig, LadderModel};
