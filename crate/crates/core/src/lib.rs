//! Two-party secure training and prediction engine for ternary fixed-point
//! neural networks.
//!
//! The crate is split into plaintext and cryptographic halves that are kept
//! bit-compatible with each other:
//!
//! * [`fxp`]: fixed-point tensors plus every quantization and normalization
//!   function used by the training pipeline.
//! * [`nn`]: plaintext forward/backward passes over ternary weights and the
//!   fixed-point SGD/AMSgrad optimizers. This module doubles as the reference
//!   oracle for the secure path.
//! * [`shares`]: additive and Boolean secret sharing and the ternary weight
//!   decomposition into disjoint indicator matrices.
//! * [`ot`]: base oblivious transfers plus IKNP-style OT extension and a
//!   correlated-OT extension with lane-wise additive correlations.
//! * [`gc`]: a free-XOR half-gates garbling engine and the circuit builders
//!   for reconstruction, ReLU, rounding shifts, saturation, normalization,
//!   private shifts, ternarization, and element-wise max.
//! * [`proto`]: the share-computation protocols built on COT: Boolean-integer
//!   inner products, component-wise products, ternary matrix-vector products
//!   with lane packing, and Gilboa multiplication for outer products.
//! * [`secure`]: the two-party composition of everything above into secure
//!   forward/backward passes and optimizer steps, bit-exact against [`nn`].
//! * [`channel`]: the transport abstraction the protocols run over; TCP
//!   framing lives in the companion CLI crate.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std` feature
//! only adds an in-memory channel used for loopback tests and benchmarks.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod channel;
pub mod fxp;
pub mod gc;
pub mod nn;
pub mod ot;
pub mod proto;
pub mod rng;
pub mod secure;
pub mod shares;
