//! The book chapters under `book/src`, compiled as doc-tests so every
//! listing stays in sync with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}
#[doc = include_str!("../../../book/src/channels.md")]
pub mod channels {}
#[doc = include_str!("../../../book/src/precoders.md")]
pub mod precoders {}
#[doc = include_str!("../../../book/src/link.md")]
pub mod link {}
#[doc = include_str!("../../../book/src/mobility.md")]
pub mod mobility {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
