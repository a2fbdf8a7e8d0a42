//! Simulation and analysis core for coherent one-way (COW) QKD in a
//! plug-and-play, client/server arrangement.
//!
//! The server (Bob) carves blank four-pulse frames with an unbalanced
//! Faraday-Michelson interferometer, the client (Alice) writes symbols by
//! erasing pulses with a polarization-insensitive ring modulator, and Bob
//! reads bits on a data line while checking inter-pulse coherence on a
//! monitoring line through the same interferometer.
//!
//! The math layers are generic over the scalar type ([`Scalar`]); the
//! aliases at the crate root fix it to `f64`, which is what sessions and the
//! wire protocol use.

pub mod adversary;
pub mod distill;
mod error;
pub mod photonic;
pub mod rng;
pub mod security;
pub mod stations;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the optics and rate models.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Tolerance for structural checks (unit norm, unitarity).
    fn structural_tol() -> Self;
}

impl Scalar for f32 {
    fn structural_tol() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn structural_tol() -> Self {
        1e-9
    }
}

/// Converts a decibel loss to an intensity transmittance.
pub fn db_to_transmittance<T: Scalar>(db: T) -> T {
    T::lit(10.0).powf(-db / T::lit(10.0))
}

/// Converts an intensity transmittance to decibels of loss.
pub fn transmittance_to_db<T: Scalar>(t: T) -> T {
    -T::lit(10.0) * t.log10()
}

pub type ComplexAmp = photonic::ComplexAmp<f64>;
pub type JonesVector = photonic::JonesVector<f64>;
pub type JonesMatrix = photonic::JonesMatrix<f64>;
pub type PulseSlot = photonic::PulseSlot<f64>;
pub type PulseTrain = photonic::PulseTrain<f64>;
pub type SourceParams = photonic::SourceParams<f64>;
pub type ChannelState = photonic::ChannelState<f64>;
pub type LinkParams = stations::LinkParams<f64>;
pub type RateResult = security::RateResult<f64>;
pub type Attack = adversary::Attack<f64>;
pub type AttackRecord = adversary::AttackRecord<f64>;

pub use distill::{SiftedKeyPair, VisibilityEstimate, VisibilityKind};
pub use stations::{DetectionEvent, Line, RawSessionData, Symbol};
