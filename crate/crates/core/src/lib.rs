//! Voltage-glitch campaign simulator.
//!
//! * [`cmos`] models how a supply glitch stretches the propagation delay of a
//!   CMOS stage and decides when that breaks a setup constraint.
//! * [`emmc`] encodes and decodes eMMC command tokens and matches the trigger.
//! * [`target`] simulates a boot ROM that reads its bootloader from eMMC and
//!   refuses oversized images unless the size check is glitched.
//! * [`search`] runs the exhaustive (N, M) crowbar search and summarises the
//!   working window.
//! * [`config`] reads the flat `key = value` files the tools consume.

pub mod cmos;
pub mod config;
pub mod emmc;
pub mod scalar;
pub mod search;
pub mod seed;
pub mod target;

pub use scalar::Scalar;

/// Timing model parameters in double precision.
pub type GatePhysics = cmos::GatePhysics<f64>;
/// Timing model parameters in single precision.
pub type GatePhysicsF32 = cmos::GatePhysics<f32>;
pub type GlitchPulse = cmos::GlitchPulse<f64>;
pub type GlitchPulseF32 = cmos::GlitchPulse<f32>;
pub type GlitchRiseTime = cmos::GlitchRiseTime<f64>;
pub type TransientState = cmos::TransientState<f64>;
