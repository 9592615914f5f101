//! Decoding toolkit for dually coupled binary codes.
//!
//! The crate builds overall codes from simple constituents (dual coupling,
//! direct coupling, concatenation, LDPC expansion), represents each
//! constituent by a syndrome trellis, and decodes via
//!
//! * classic loopy belief propagation (extrinsic LLR exchange between
//!   constituent BCJR runs),
//! * discriminated belief propagation on exact correlation grids
//!   (hard-decision iteration with erasure and two-sided variants), and
//! * Gauss-approximated discrimination (trellis moment extraction plus
//!   multivariate Gaussian combination), including channel-detached
//!   discrimination for linear ISI channels.
//!
//! All probability work runs in the base-2 log domain with the convention
//! `P(r|s) ∝ exp2(Σ r_i s_i)` over symbols `s_i ∈ {-1,+1}`, so every belief
//! is a half log-ratio `L = ½·log2(P(+1)/P(-1))`.
//!
//! A brute-force enumeration oracle ([`oracle`]) reproduces every exact
//! quantity for small block lengths and backs the test suite; [`sim`]
//! provides the Monte Carlo channel-simulation harness used by the CLI.

pub mod bp;
pub mod channel;
pub mod code;
pub mod codefile;
pub mod discrim;
pub mod gauss;
pub mod gf2;
pub mod linalg;
pub mod oracle;
pub mod passes;
pub mod sim;
pub mod trellis;

use thiserror::Error;

/// Errors reported by construction and decoding operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Mismatched vector/matrix dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A full-rank matrix was required.
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    /// A systematic generator `[I | P]` was required.
    #[error("generator is not systematic: {0}")]
    NotSystematic(String),
    /// LDPC expansion found a variable with no checks attached.
    #[error("zero-weight column {0} in parity check matrix")]
    ZeroColumn(usize),
    /// Channel parameter outside its valid range.
    #[error("invalid channel parameter: {0}")]
    InvalidChannel(String),
    /// Non-finite input where finite values are required.
    #[error("non-finite input: {0}")]
    NonFinite(String),
    /// A discriminator was required to live on an integer lattice.
    #[error("discriminator is not on an integer lattice: {0}")]
    NotOnLattice(String),
    /// Exact-grid support exceeded the configured cap.
    #[error("correlation grid blow-up: {size} keys exceeds cap {cap}")]
    GridBlowup { size: usize, cap: usize },
    /// ISI memory above the configured cap.
    #[error("channel memory {0} exceeds cap {1}")]
    MemoryCap(usize, usize),
    /// Brute-force enumeration refused (block length above the guard).
    #[error("block length {0} exceeds enumeration guard {1}")]
    EnumerationGuard(usize, usize),
    /// Internal consistency violation (a bug, not a user error).
    #[error("internal inconsistency: {0}")]
    Internal(String),
    /// Malformed text input (code files, config files, observations).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
