//! Network-coded adaptive bitrate streaming.
//!
//! - [`gf256`]: arithmetic and linear algebra over GF(2^8).
//! - [`rlnc`]: systematic random linear network coding of video chunks.
//! - [`sim`]: trace-driven streaming simulator with a lossy link.
//! - [`qoe`]: chunk and session quality-of-experience scores.
//! - [`baselines`]: rate-, buffer- and model-predictive bitrate controllers.
//! - [`agent`]: actor-critic agent choosing bitrate and coding parameters.
//! - [`harness`]: run configuration and the tracegen, train, eval and compare commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::suspicious_op_assign_impl, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod agent;
pub mod baselines;
pub mod gf256;
pub mod harness;
mod par;
pub mod qoe;
pub mod rlnc;
pub mod sim;
