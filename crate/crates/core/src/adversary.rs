//! Eavesdropping attacks on the Alice-to-Bob leg.
//!
//! Attacks act on a frame between Alice's output and Bob's tap. A passive
//! beam splitter only removes light; intercept-resend and two-pulse
//! photon-number measurements destroy the phase relation between pulses,
//! which shows up as lost visibility on the monitoring line.

use std::f64::consts::TAU;

use num_complex::Complex;
use rand::Rng;

use crate::photonic::PulseTrain;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    BeamSplit,
    InterceptResend,
    PairDecohere,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::BeamSplit => "beam_split",
            AttackKind::InterceptResend => "intercept_resend",
            AttackKind::PairDecohere => "pair_decohere",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "beam_split" => Ok(AttackKind::BeamSplit),
            "intercept_resend" => Ok(AttackKind::InterceptResend),
            "pair_decohere" => Ok(AttackKind::PairDecohere),
            other => Err(format!("unknown attack kind `{other}`")),
        }
    }
}

/// Running tally of what Eve did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackRecord<T> {
    pub kind: AttackKind,
    pub strength: T,
    /// Mean photon number Eve has removed from the channel so far.
    pub eve_mean_photons: T,
    pub frames_attacked: u64,
}

impl<T: Scalar> AttackRecord<T> {
    pub fn new(kind: AttackKind, strength: T) -> Self {
        Self {
            kind,
            strength,
            eve_mean_photons: T::zero(),
            frames_attacked: 0,
        }
    }
}

/// A configured attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack<T> {
    BeamSplit { fraction: T },
    InterceptResend { p_attack: T, resend_mu: T },
    PairDecohere { p_attack: T },
}

impl<T: Scalar> Attack<T> {
    /// Intercept-resend that keeps Bob's mean received intensity: Eve detects
    /// a pulse of `mu_a` with probability `1 - exp(-mu_a)` and resends
    /// `mu_a / (1 - exp(-mu_a))`.
    pub fn intercept_resend_calibrated(p_attack: T, mu_a: T) -> Self {
        Attack::InterceptResend {
            p_attack,
            resend_mu: mu_a / (T::one() - (-mu_a).exp()),
        }
    }

    pub fn kind(&self) -> AttackKind {
        match self {
            Attack::BeamSplit { .. } => AttackKind::BeamSplit,
            Attack::InterceptResend { .. } => AttackKind::InterceptResend,
            Attack::PairDecohere { .. } => AttackKind::PairDecohere,
        }
    }

    pub fn strength(&self) -> T {
        match *self {
            Attack::BeamSplit { fraction } => fraction,
            Attack::InterceptResend { p_attack, .. } | Attack::PairDecohere { p_attack } => p_attack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Attack::BeamSplit { fraction } => check_fraction(fraction),
            Attack::InterceptResend { p_attack, resend_mu } => {
                check_probability(p_attack)?;
                if !(resend_mu >= T::zero() && resend_mu.is_finite()) {
                    return Err(Error::param("resend_mu", format!("must be >= 0, got {resend_mu}")));
                }
                Ok(())
            }
            Attack::PairDecohere { p_attack } => check_probability(p_attack),
        }
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        train: &PulseTrain<T>,
        rec: &mut AttackRecord<T>,
        rng: &mut R,
    ) -> Result<PulseTrain<T>> {
        let before = train.total_mean_photons();
        let out = match *self {
            Attack::BeamSplit { fraction } => {
                let (out, r) = beam_split_attack(train, fraction, *rec)?;
                *rec = r;
                rec.frames_attacked += 1;
                return Ok(out);
            }
            Attack::InterceptResend { p_attack, resend_mu } => intercept_resend(train, p_attack, resend_mu, rng)?,
            Attack::PairDecohere { p_attack } => pair_decohere(train, p_attack, rng)?,
        };
        if out != *train {
            rec.frames_attacked += 1;
            if self.kind() == AttackKind::InterceptResend {
                rec.eve_mean_photons = rec.eve_mean_photons + before;
            }
        }
        Ok(out)
    }
}

fn check_fraction<T: Scalar>(f: T) -> Result<()> {
    if !(f >= T::zero() && f < T::one()) {
        return Err(Error::param("split_fraction", format!("must be in [0, 1), got {f}")));
    }
    Ok(())
}

fn check_probability<T: Scalar>(p: T) -> Result<()> {
    if !(T::zero()..=T::one()).contains(&p) {
        return Err(Error::param("p_attack", format!("must be in [0, 1], got {p}")));
    }
    Ok(())
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.gen::<f64>())
}

/// Passive tap of `split_fraction` of every pulse.
pub fn beam_split_attack<T: Scalar>(
    train: &PulseTrain<T>,
    split_fraction: T,
    rec: AttackRecord<T>,
) -> Result<(PulseTrain<T>, AttackRecord<T>)> {
    check_fraction(split_fraction)?;
    let keep = (T::one() - split_fraction).sqrt();
    let tapped = train.total_mean_photons() * split_fraction;
    let out = train.clone().map_slots(|s| s.amplitude = s.amplitude * keep);
    Ok((
        out,
        AttackRecord {
            eve_mean_photons: rec.eve_mean_photons + tapped,
            ..rec
        },
    ))
}

/// With probability `p_attack` per frame, Eve time-tags every bin with an
/// ideal threshold detector and resends a fresh pulse of `resend_mu` photons
/// with a random phase wherever she clicked. Bins without a click come out
/// empty.
pub fn intercept_resend<T: Scalar, R: Rng + ?Sized>(
    train: &PulseTrain<T>,
    p_attack: T,
    resend_mu: T,
    rng: &mut R,
) -> Result<PulseTrain<T>> {
    check_probability(p_attack)?;
    if uniform::<T, R>(rng) >= p_attack {
        return Ok(train.clone());
    }
    let amp = resend_mu.sqrt();
    Ok(train.clone().map_slots(|s| {
        let p_click = T::one() - (-s.mean_photons()).exp();
        s.amplitude = if uniform::<T, R>(rng) < p_click {
            Complex::from_polar(amp, T::lit(TAU) * uniform::<T, R>(rng))
        } else {
            Complex::new(T::zero(), T::zero())
        };
    }))
}

/// With probability `p_attack` per adjacent pulse pair, a random phase is
/// added between the two pulses. The kick carries over to the rest of the
/// frame, so exactly the selected pairs lose their relative phase.
pub fn pair_decohere<T: Scalar, R: Rng + ?Sized>(
    train: &PulseTrain<T>,
    p_attack: T,
    rng: &mut R,
) -> Result<PulseTrain<T>> {
    check_probability(p_attack)?;
    if p_attack == T::zero() {
        return Ok(train.clone());
    }
    let mut offset = T::zero();
    let mut first = true;
    Ok(train.clone().map_slots(|s| {
        if !first && uniform::<T, R>(rng) < p_attack {
            offset = offset + T::lit(TAU) * uniform::<T, R>(rng);
        }
        first = false;
        s.amplitude = s.amplitude * Complex::from_polar(T::one(), offset);
    }))
}
