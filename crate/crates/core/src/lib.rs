//! Link-level simulator for multi-hop image transmission over fading
//! channels, with a parallel digital link that carries each hop's residual.
//!
//! Every hop encodes its input with a [`codec::SemanticCodec`], sends the
//! real code over an MMSE-equalized Rayleigh link ([`channel`]) and decodes
//! it. The transmitter replays the same channel realization, so it knows the
//! receiver's reconstruction. It then quantizes the residual
//! ([`codec::ResidualCompressor`]), codes it with a learned logistic-mixture
//! model ([`entropy`]) and a range coder ([`accoder`]), and sends it over an
//! LDPC + QAM link ([`modem`]). When the frame passes its CRC, the receiver
//! adds the decoded residual back.
//!
//! [`pipeline`] chains hops and runs sweeps, [`train`] holds the three
//! training stages, and [`config`] and [`workflow`] back the `mhsim` tool.
//! The acceptance checks live in [`acceptance`].

pub mod acceptance;
pub mod accoder;
pub mod channel;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod image;
pub mod modem;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod seed;
pub mod train;
pub mod weights;
pub mod workflow;

pub use error::{Error, Result};
