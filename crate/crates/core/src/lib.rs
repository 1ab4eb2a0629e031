//! Search for a target on the unit circle when the observation noise grows
//! with the size of the probed region.
//!
//! The crate covers channel models, information quantities and exponents,
//! random query codebooks, Monte Carlo simulation of stationary-target
//! schemes and moving-target trajectory decoding.

pub mod channels;
pub mod codebook;
pub mod decode;
pub mod fmt;
pub mod infotheory;
pub mod moving;
pub mod optimize;
pub mod quad;
pub mod search;
pub mod stationary;
pub mod stats;
pub mod stream;

pub use channels::{ChannelError, ChannelKind, ChannelModel, ChannelSpec, Observation};
pub use infotheory::{ExponentCurve, ExponentPoint, InfoError, RhoSearch, SchemeTag};
pub use optimize::OptimumReport;
