//! Time-reversal (TR) and iterative time-reversal (ITRDMA) precoding for
//! multi-user MISO downlinks.
//!
//! The crate is organised bottom-up:
//!
//! - [`signals`]: complex sequences with explicit start offsets, convolution
//!   and correlation.
//! - [`channel`]: synthetic multipath channel banks, normalization, receiver
//!   displacement and the CIR file format.
//! - [`precoder`]: conventional TR precoders and the greedy ITRDMA side-lobe
//!   cancellation loop with full residual tracking.
//! - [`link`]: equivalent channels, SIR/SINR, symbol transmission and BER.
//! - [`experiments`]: seeded ensemble sweeps that emit CSV tables.
//!
//! ```
//! use itrdma::channel::{generate_synthetic, ChannelSpec};
//! use itrdma::link::{equivalent_channel, sinr};
//! use itrdma::precoder::{PrecoderSet, ItrdmaParams};
//!
//! let spec = ChannelSpec { n_users: 2, n_antennas: 4, n_taps: 32, decay_taps: 8.0, seed: 7 };
//! let cirs = generate_synthetic(&spec).unwrap();
//!
//! let tr = PrecoderSet::tr(&cirs).unwrap();
//! let itr = PrecoderSet::itrdma(&cirs, ItrdmaParams { epsilon: 0.0, n_max: 40 }).unwrap();
//!
//! let sir_tr = sinr(&equivalent_channel(&cirs, &tr).unwrap(), 0, 0.0).unwrap();
//! let sir_itr = sinr(&equivalent_channel(&cirs, &itr).unwrap(), 0, 0.0).unwrap();
//! assert!(sir_itr > sir_tr);
//! ```

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod experiments;
pub mod link;
pub mod precoder;
pub mod signals;
pub mod units;

mod error;

pub use error::{Error, FormatError};
pub use signals::ComplexSequence;

pub type Result<T, E = Error> = std::result::Result<T, E>;
