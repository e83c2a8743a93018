//! Circuit discovery with provable faithfulness guarantees for
//! piecewise-linear networks.

pub mod circuit;
pub mod discover;
pub mod encode;
pub mod error;
pub mod experiment;
pub mod hitting;
pub mod linalg;
pub mod models;
pub mod net;
pub mod oracle;
pub mod predicate;
pub mod train;
pub mod verify;

pub use circuit::{Circuit, PatchingScheme};
pub use error::{Error, Result};
pub use net::{ComponentId, Network, NetworkBuilder};
