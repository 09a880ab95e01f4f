//! Simulation of authenticated rank and version dissemination in RPL-style DODAGs:
//! hash-chain schemes, filter-array attestations and an adversary model to test them.

pub mod adversary;
pub mod bloom;
pub mod chains;
pub mod dodag;
pub mod error;
pub mod harness;
pub mod message;
pub mod sim;
pub mod topology;
pub mod trail;
pub mod vera;
pub mod verapp;
pub mod scenario;
pub mod world;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/chains.md")]
    mod chains {}
    #[doc = include_str!("../../../book/src/dodag.md")]
    mod dodag {}
    #[doc = include_str!("../../../book/src/vera.md")]
    mod vera {}
    #[doc = include_str!("../../../book/src/verapp.md")]
    mod verapp {}
    #[doc = include_str!("../../../book/src/trail.md")]
    mod trail {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
