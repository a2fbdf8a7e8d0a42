//! Closed-form key rates.
//!
//! Rates are per symbol. The sifted rate counts signal clicks on key
//! symbols; the secret fraction subtracts error-correction leakage `h(Q)`
//! and Eve's information, bounded here by what a collective beam splitter
//! learns from the channel loss plus what the observed loss of visibility
//! leaves open. Other bounds can be plugged in through [`EveBound`].

use crate::stations::LinkParams;
use crate::{db_to_transmittance, Error, Result, Scalar};

/// Rates at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult<T> {
    pub r_sift: T,
    pub r_sec: T,
    pub secret_fraction: T,
    pub q_used: T,
    pub v_used: T,
    pub mu_a: T,
    /// Channel transmittance.
    pub t: T,
    pub loss_db: T,
}

/// Where the QBER of a rate evaluation comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Qber<T> {
    /// [`qber_model`] evaluated at the link parameters.
    Model,
    /// An externally measured value.
    Measured(T),
}

impl<T: Scalar> Qber<T> {
    pub fn resolve(self, params: &LinkParams<T>) -> T {
        match self {
            Qber::Model => qber_model(params),
            Qber::Measured(q) => q,
        }
    }
}

/// Upper bound on Eve's information per sifted bit.
pub trait EveBound<T> {
    fn information(&self, mu_a: T, t: T, v: T) -> T;
}

/// Collective beam splitting plus coherence loss: `mu_a (1 - t) + (1 - v)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BeamSplitCoherence;

impl<T: Scalar> EveBound<T> for BeamSplitCoherence {
    fn information(&self, mu_a: T, t: T, v: T) -> T {
        eve_information(mu_a, t, v)
    }
}

pub fn binary_entropy<T: Scalar>(q: T) -> Result<T> {
    if !(T::zero()..=T::one()).contains(&q) {
        return Err(Error::param("q", format!("must be in [0, 1], got {q}")));
    }
    if q == T::zero() || q == T::one() {
        return Ok(T::zero());
    }
    let one = T::one();
    Ok(-q * q.log2() - (one - q) * (one - q).log2())
}

/// `(1 - exp(-mu_a t eta)) f_key`; dark counts are left out.
pub fn r_sift<T: Scalar>(params: &LinkParams<T>) -> T {
    let t = params.transmittance();
    (T::one() - (-params.mu_a * t * params.eta_det).exp()) * params.f_key
}

/// Eve's information, clamped to `[0, 1]`.
pub fn eve_information<T: Scalar>(mu_a: T, t: T, v: T) -> T {
    (mu_a * (T::one() - t) + (T::one() - v)).max(T::zero()).min(T::one())
}

pub fn secret_fraction<T: Scalar>(q: T, mu_a: T, t: T, v: T) -> Result<T> {
    secret_fraction_with(&BeamSplitCoherence, q, mu_a, t, v)
}

pub fn secret_fraction_with<T: Scalar, B: EveBound<T> + ?Sized>(bound: &B, q: T, mu_a: T, t: T, v: T) -> Result<T> {
    let h = binary_entropy(q)?;
    Ok((T::one() - h - bound.information(mu_a, t, v)).max(T::zero()).min(T::one()))
}

/// Probabilities of a single click in the right bin and in the wrong bin of
/// a key symbol, including extinction leakage and per-bin noise. Double
/// clicks are excluded.
pub fn key_symbol_click_split<T: Scalar>(params: &LinkParams<T>) -> (T, T) {
    let one = T::one();
    let mu_b = params.mu_a * params.transmittance();
    let noise = params.p_dark + params.p_bg;
    let p = |mu: T| one - (-mu * params.eta_det).exp();
    let right = one - (one - p(mu_b)) * (one - noise);
    let wrong = one - (one - p(mu_b * params.extinction())) * (one - noise);
    (right * (one - wrong), wrong * (one - right))
}

/// QBER implied by extinction leakage, dark counts and background.
pub fn qber_model<T: Scalar>(params: &LinkParams<T>) -> T {
    let (right, wrong) = key_symbol_click_split(params);
    wrong / (right + wrong)
}

/// Sifted fraction a Monte Carlo run should observe: single data-line
/// clicks on key symbols, noise and leakage included.
pub fn sift_fraction_with_noise<T: Scalar>(params: &LinkParams<T>) -> T {
    let (right, wrong) = key_symbol_click_split(params);
    params.f_key * params.tap_data * (right + wrong)
}

pub fn r_sec<T: Scalar>(params: &LinkParams<T>, qber: Qber<T>) -> Result<RateResult<T>> {
    r_sec_with(&BeamSplitCoherence, params, qber)
}

/// Rate evaluation against an arbitrary bound. Visibility is `v_across`.
pub fn r_sec_with<T: Scalar, B: EveBound<T> + ?Sized>(
    bound: &B,
    params: &LinkParams<T>,
    qber: Qber<T>,
) -> Result<RateResult<T>> {
    let q = qber.resolve(params);
    let v = params.v_across;
    let t = params.transmittance();
    let sift = r_sift(params);
    let sf = secret_fraction_with(bound, q, params.mu_a, t, v)?;
    Ok(RateResult {
        r_sift: sift,
        r_sec: sift * sf,
        secret_fraction: sf,
        q_used: q,
        v_used: v,
        mu_a: params.mu_a,
        t,
        loss_db: params.loss_db,
    })
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`,
/// stopping when the bracket is narrower than `tol`.
pub fn golden_section_max<T: Scalar>(mut f: impl FnMut(T) -> T, lo: T, hi: T, tol: T) -> (T, T) {
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / T::lit(2.0);
    let fx = f(x);
    // the plateau at a bracket end can beat the midpoint
    [(x, fx), (lo, f(lo)), (hi, f(hi))]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 > best.1 { cand } else { best })
}

pub const MU_TOLERANCE: f64 = 1e-4;

/// Maximizes `r_sec` over `mu_a`, holding Q and V at the operating point.
pub fn optimize_mu<T: Scalar>(params: &LinkParams<T>, qber: Qber<T>, bounds: (T, T)) -> Result<(T, T)> {
    let (lo, hi) = bounds;
    if !(lo > T::zero() && hi > lo && hi.is_finite()) {
        return Err(Error::param("bounds", format!("need 0 < lo < hi, got ({lo}, {hi})")));
    }
    let q = Qber::Measured(qber.resolve(params));
    binary_entropy(q.resolve(params))?;
    let rate = |mu: T| {
        let p = LinkParams { mu_a: mu, ..*params };
        r_sec(&p, q).map(|r| r.r_sec).unwrap_or(T::zero())
    };
    Ok(golden_section_max(rate, lo, hi, T::lit(MU_TOLERANCE)))
}

/// Rates versus fiber length at `fiber_db_per_km`.
pub fn sweep_distance<T: Scalar>(params: &LinkParams<T>, qber: Qber<T>, lengths_km: &[T]) -> Result<Vec<RateResult<T>>> {
    lengths_km
        .iter()
        .map(|&km| {
            if !(km >= T::zero() && km.is_finite()) {
                return Err(Error::param("length_km", format!("must be >= 0, got {km}")));
            }
            let p = LinkParams {
                loss_db: params.fiber_db_per_km * km,
                ..*params
            };
            r_sec(&p, qber)
        })
        .collect()
}

/// Convenience: intensity transmittance of `km` of fiber.
pub fn fiber_transmittance<T: Scalar>(params: &LinkParams<T>, km: T) -> T {
    db_to_transmittance(params.fiber_db_per_km * km)
}
