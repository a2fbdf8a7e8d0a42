//! Bin-level linear optics: coherent pulse amplitudes, Jones polarization,
//! the unbalanced Faraday-Michelson interferometer (FMI), the
//! polarization-insensitive ring modulator (PIIM), loss and phase drift.
//!
//! A pulse is one complex amplitude per time bin (mean photon number is
//! `|amp|^2`) with a unit Jones vector. Temporal mode mismatch between
//! interfering pulses is folded into a scalar overlap `xi` in `[0, 1]`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{db_to_transmittance, Error, Result, Scalar};

/// Field amplitude of a coherent pulse in one time bin.
pub type ComplexAmp<T> = Complex<T>;

/// Polarization on the H/V fiber modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector<T> {
    pub h: Complex<T>,
    pub v: Complex<T>,
}

impl<T: Scalar> JonesVector<T> {
    pub fn new(h: Complex<T>, v: Complex<T>) -> Self {
        Self { h, v }
    }

    pub fn horizontal() -> Self {
        Self::new(Complex::new(T::one(), T::zero()), Complex::new(T::zero(), T::zero()))
    }

    pub fn vertical() -> Self {
        Self::new(Complex::new(T::zero(), T::zero()), Complex::new(T::one(), T::zero()))
    }

    pub fn norm_sqr(&self) -> T {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm_sqr() - T::one()).abs() <= T::structural_tol()
    }

    /// Returns `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm_sqr().sqrt();
        if n > T::zero() {
            Some(Self::new(self.h / n, self.v / n))
        } else {
            None
        }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Complex<T> {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    pub fn conj(&self) -> Self {
        Self::new(self.h.conj(), self.v.conj())
    }

    pub fn scale(&self, k: Complex<T>) -> Self {
        Self::new(self.h * k, self.v * k)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.h + other.h, self.v + other.v)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.h - other.h, self.v - other.v)
    }

    /// Uniformly distributed unit vector on the Poincare sphere.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let g = |rng: &mut R| T::lit(rand_distr::StandardNormal.sample(rng));
        let v = Self::new(Complex::new(g(rng), g(rng)), Complex::new(g(rng), g(rng)));
        v.normalized().unwrap_or_else(Self::horizontal)
    }
}

/// 2x2 complex Jones matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix<T> {
    pub m: [[Complex<T>; 2]; 2],
}

impl<T: Scalar> JonesMatrix<T> {
    pub fn new(m: [[Complex<T>; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let (o, z) = (Complex::new(T::one(), T::zero()), Complex::new(T::zero(), T::zero()));
        Self::new([[o, z], [z, o]])
    }

    /// Pauli sigma_y.
    pub fn sigma_y() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        let i = Complex::new(T::zero(), T::one());
        Self::new([[z, -i], [i, z]])
    }

    /// Net action of the PBS ring modulator: H -> V, V -> -H (= -i sigma_y).
    pub fn ring_rotation() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        let o = Complex::new(T::one(), T::zero());
        Self::new([[z, -o], [o, z]])
    }

    pub fn apply(&self, p: &JonesVector<T>) -> JonesVector<T> {
        JonesVector::new(
            self.m[0][0] * p.h + self.m[0][1] * p.v,
            self.m[1][0] * p.h + self.m[1][1] * p.v,
        )
    }

    /// Reciprocal backward pass through the element described by `self`.
    ///
    /// The counter-propagating field is handled in the time-reversed
    /// (conjugated) representation, where reciprocity gives the transpose:
    /// `conj(M^T conj(x))`, which equals `M^dagger x`.
    pub fn reverse_propagate(&self, p: &JonesVector<T>) -> JonesVector<T> {
        self.transpose().apply(&p.conj()).conj()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [[Complex::new(T::zero(), T::zero()); 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.m[r][0] * other.m[0][c] + self.m[r][1] * other.m[1][c];
            }
        }
        Self::new(out)
    }

    pub fn transpose(&self) -> Self {
        Self::new([[self.m[0][0], self.m[1][0]], [self.m[0][1], self.m[1][1]]])
    }

    pub fn adjoint(&self) -> Self {
        let t = self.transpose();
        Self::new([
            [t.m[0][0].conj(), t.m[0][1].conj()],
            [t.m[1][0].conj(), t.m[1][1].conj()],
        ])
    }

    /// Largest entry deviation of `M^dagger M` from the identity.
    pub fn unitarity_error(&self) -> T {
        let p = self.adjoint().mul(self);
        let id = Self::identity();
        let mut worst = T::zero();
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((p.m[r][c] - id.m[r][c]).norm());
            }
        }
        worst
    }

    /// Haar-random unitary via Gram-Schmidt on two Gaussian columns.
    pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let a = JonesVector::<T>::random(rng);
        // orthogonal complement of a, with a random phase
        let b = JonesVector::new(-a.v.conj(), a.h.conj());
        let phase: T = T::lit(rng.gen::<f64>() * std::f64::consts::TAU);
        let b = b.scale(Complex::from_polar(T::one(), phase));
        Self::new([[a.h, b.h], [a.v, b.v]])
    }
}

/// One pulse of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSlot<T> {
    pub bin_index: u32,
    pub amplitude: ComplexAmp<T>,
    pub polarization: JonesVector<T>,
    /// Temporal mode center offset in picoseconds.
    pub mode_center_ps: T,
}

impl<T: Scalar> PulseSlot<T> {
    pub fn new(bin_index: u32, amplitude: ComplexAmp<T>, polarization: JonesVector<T>) -> Self {
        Self {
            bin_index,
            amplitude,
            polarization,
            mode_center_ps: T::zero(),
        }
    }

    pub fn mean_photons(&self) -> T {
        self.amplitude.norm_sqr()
    }

    /// Field vector `amplitude * polarization`.
    fn field(&self) -> JonesVector<T> {
        self.polarization.scale(self.amplitude)
    }

    fn scaled(mut self, k: T) -> Self {
        self.amplitude = self.amplitude * k;
        self
    }
}

/// Ordered time-bin slots of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain<T> {
    slots: Vec<PulseSlot<T>>,
    bin_pitch_ns: T,
    frame_id: u64,
}

impl<T: Scalar> PulseTrain<T> {
    pub fn new(slots: Vec<PulseSlot<T>>, bin_pitch_ns: T, frame_id: u64) -> Result<Self> {
        if !(bin_pitch_ns > T::zero()) {
            return Err(Error::param("bin_pitch_ns", format!("must be > 0, got {bin_pitch_ns}")));
        }
        if slots.windows(2).any(|w| w[0].bin_index >= w[1].bin_index) {
            return Err(Error::Geometry("slot bin indices must be strictly increasing".into()));
        }
        if let Some(s) = slots.iter().find(|s| !s.polarization.is_unit()) {
            return Err(Error::Geometry(format!(
                "slot at bin {} has non-unit polarization",
                s.bin_index
            )));
        }
        if let Some(s) = slots
            .iter()
            .find(|s| !(s.amplitude.re.is_finite() && s.amplitude.im.is_finite()))
        {
            return Err(Error::Geometry(format!("slot at bin {} has non-finite amplitude", s.bin_index)));
        }
        Ok(Self {
            slots,
            bin_pitch_ns,
            frame_id,
        })
    }

    /// Internal constructor for outputs that are correct by construction.
    fn from_parts(slots: Vec<PulseSlot<T>>, bin_pitch_ns: T, frame_id: u64) -> Self {
        debug_assert!(slots.windows(2).all(|w| w[0].bin_index < w[1].bin_index));
        Self {
            slots,
            bin_pitch_ns,
            frame_id,
        }
    }

    pub fn slots(&self) -> &[PulseSlot<T>] {
        &self.slots
    }

    pub fn bin_pitch_ns(&self) -> T {
        self.bin_pitch_ns
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn with_frame_id(mut self, frame_id: u64) -> Self {
        self.frame_id = frame_id;
        self
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, bin: u32) -> Option<&PulseSlot<T>> {
        self.slots
            .binary_search_by_key(&bin, |s| s.bin_index)
            .ok()
            .map(|i| &self.slots[i])
    }

    pub fn mean_photons(&self, bin: u32) -> T {
        self.slot(bin).map_or(T::zero(), PulseSlot::mean_photons)
    }

    pub fn total_mean_photons(&self) -> T {
        self.slots.iter().fold(T::zero(), |acc, s| acc + s.mean_photons())
    }

    /// Applies `f` to every slot; bin indices must be left untouched.
    pub fn map_slots(mut self, mut f: impl FnMut(&mut PulseSlot<T>)) -> Self {
        for s in &mut self.slots {
            f(s);
        }
        self
    }
}

/// Settings of Bob's pulse source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams<T> {
    pub pulse_width_ps: T,
    pub pair_separation_ns: T,
    pub frame_rate_hz: T,
    /// Gating window of the extra intensity modulator; bookkeeping only.
    pub window_ns: T,
    /// Symbols per frame; the blank frame carries this many pulses before the FMI.
    pub symbols_per_frame: u32,
}

impl<T: Scalar> Default for SourceParams<T> {
    fn default() -> Self {
        Self {
            pulse_width_ps: T::lit(800.0),
            pair_separation_ns: T::lit(4.6),
            frame_rate_hz: T::lit(115_000.0),
            window_ns: T::lit(35.0),
            symbols_per_frame: 2,
        }
    }
}

impl<T: Scalar> SourceParams<T> {
    /// Bin pitch, equal to the FMI delay: half the carved pulse separation.
    pub fn bin_pitch_ns(&self) -> T {
        self.pair_separation_ns / T::lit(2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pulse_width_ps", self.pulse_width_ps),
            ("pair_separation_ns", self.pair_separation_ns),
            ("frame_rate_hz", self.frame_rate_hz),
            ("window_ns", self.window_ns),
        ];
        for (name, x) in positive {
            if !(x > T::zero() && x.is_finite()) {
                return Err(Error::param(name, format!("must be positive and finite, got {x}")));
            }
        }
        if !(1..=MAX_SYMBOLS_PER_FRAME).contains(&self.symbols_per_frame) {
            return Err(Error::param(
                "symbols_per_frame",
                format!("must be in [1, {MAX_SYMBOLS_PER_FRAME}], got {}", self.symbols_per_frame),
            ));
        }
        Ok(())
    }
}

pub const MAX_SYMBOLS_PER_FRAME: u32 = 64;

/// Fiber link state between the stations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState<T> {
    pub loss_db: T,
    pub birefringence: JonesMatrix<T>,
    /// Current relative arm phase drift phi(t), radians.
    pub phase_phi: T,
    /// Standard deviation of the per-frame random-walk step of phi.
    pub phi_step_sigma: T,
}

impl<T: Scalar> ChannelState<T> {
    pub fn new(loss_db: T, birefringence: JonesMatrix<T>, phi_step_sigma: T) -> Result<Self> {
        if !(loss_db >= T::zero()) {
            return Err(Error::param("loss_db", format!("must be >= 0, got {loss_db}")));
        }
        if !(phi_step_sigma >= T::zero()) {
            return Err(Error::param("phi_step_sigma", format!("must be >= 0, got {phi_step_sigma}")));
        }
        if birefringence.unitarity_error() > T::structural_tol() {
            return Err(Error::param("birefringence", "matrix is not unitary"));
        }
        Ok(Self {
            loss_db,
            birefringence,
            phase_phi: T::zero(),
            phi_step_sigma,
        })
    }

    /// Lossless, polarization-preserving, drift-free link.
    pub fn ideal() -> Self {
        Self {
            loss_db: T::zero(),
            birefringence: JonesMatrix::identity(),
            phase_phi: T::zero(),
            phi_step_sigma: T::zero(),
        }
    }
}

fn amp_factor_db<T: Scalar>(db: T) -> T {
    db_to_transmittance(db).sqrt()
}

/// Carves the blank pulse sequence: one pulse every two bins (the carved
/// separation is twice the FMI delay), `symbols_per_frame` pulses.
pub fn make_blank_frame<T: Scalar>(src: &SourceParams<T>, mu_pulse: T) -> Result<PulseTrain<T>> {
    src.validate()?;
    if !(mu_pulse > T::zero() && mu_pulse.is_finite()) {
        return Err(Error::param("mu_pulse", format!("must be > 0, got {mu_pulse}")));
    }
    let amp = Complex::new(mu_pulse.sqrt(), T::zero());
    let pol = JonesVector::horizontal();
    let slots = (0..src.symbols_per_frame)
        .map(|k| PulseSlot::new(2 * k, amp, pol))
        .collect();
    Ok(PulseTrain::from_parts(slots, src.bin_pitch_ns(), 0))
}

/// First pass through the FMI: each pulse exits once via the short arm (same
/// bin) and once via the long arm (next bin), each copy with amplitude `a/2`
/// times the arm loss. Faraday mirrors leave every copy with the same
/// polarization, `faraday_mirror(input)`.
pub fn fmi_split<T: Scalar>(train: &PulseTrain<T>, arm_loss_db: T) -> Result<PulseTrain<T>> {
    if !(arm_loss_db >= T::zero()) {
        return Err(Error::param("arm_loss_db", format!("must be >= 0, got {arm_loss_db}")));
    }
    if train.slots.windows(2).any(|w| w[1].bin_index - w[0].bin_index < 2) {
        return Err(Error::Geometry(
            "FMI outputs overlap: input pulses must be at least two bins apart".into(),
        ));
    }
    let k = T::lit(0.5) * amp_factor_db(arm_loss_db);
    let mut slots = Vec::with_capacity(train.len() * 2);
    for s in &train.slots {
        let pol = faraday_mirror(&s.polarization);
        let copy = PulseSlot {
            polarization: pol,
            ..s.scaled(k)
        };
        slots.push(copy);
        slots.push(PulseSlot {
            bin_index: s.bin_index + 1,
            ..copy
        });
    }
    Ok(PulseTrain::from_parts(slots, train.bin_pitch_ns, train.frame_id))
}

/// Return pass through the FMI with a uniform temporal overlap `xi`.
///
/// Returns `(monitor, through)` ports.
pub fn fmi_interfere<T: Scalar>(
    train: &PulseTrain<T>,
    phi: T,
    xi: T,
) -> Result<(PulseTrain<T>, PulseTrain<T>)> {
    fmi_interfere_with(train, phi, |_| xi)
}

/// Return pass through the FMI with a per-output-bin overlap.
///
/// Output bin `k` collects the short-arm copy of slot `k` and the long-arm
/// copy of slot `k-1`. Only the overlapping fraction `xi` of the long copy
/// adds coherently (with arm phase `phi`); the rest adds intensity. The two
/// ports differ by a relative phase of pi, so with lossless arms the ports
/// together carry exactly the input energy.
pub fn fmi_interfere_with<T: Scalar>(
    train: &PulseTrain<T>,
    phi: T,
    overlap: impl Fn(u32) -> T,
) -> Result<(PulseTrain<T>, PulseTrain<T>)> {
    let (Some(first), Some(last)) = (train.slots.first(), train.slots.last()) else {
        return Ok((train.clone(), train.clone()));
    };
    let half = Complex::new(T::lit(0.5), T::zero());
    let arm = Complex::from_polar(T::lit(0.5), phi);
    let n_out = (last.bin_index - first.bin_index + 2) as usize;
    let mut monitor = Vec::with_capacity(n_out);
    let mut through = Vec::with_capacity(n_out);
    for k in first.bin_index..=last.bin_index + 1 {
        let short = train.slot(k);
        let long = k.checked_sub(1).and_then(|j| train.slot(j));
        let xi = overlap(k);
        if !(T::zero()..=T::one()).contains(&xi) {
            return Err(Error::param("overlap", format!("must be in [0, 1], got {xi}")));
        }
        let s_field = short.map(|s| s.field().scale(half));
        let l_field = long.map(|s| s.field().scale(arm));
        let zero = JonesVector::new(Complex::new(T::zero(), T::zero()), Complex::new(T::zero(), T::zero()));
        let sf = s_field.unwrap_or(zero);
        let lf = l_field.unwrap_or(zero);
        let coherent_l = lf.scale(Complex::new(xi, T::zero()));
        let incoherent = (T::one() - xi * xi) * lf.norm_sqr();
        let fallback = short.or(long).map(|s| s.polarization).unwrap_or_else(JonesVector::horizontal);
        let mode_center = short.or(long).map_or(T::zero(), |s| s.mode_center_ps);
        monitor.push(port_slot(k, &sf.add(&coherent_l), incoherent, fallback, mode_center));
        through.push(port_slot(k, &sf.sub(&coherent_l), incoherent, fallback, mode_center));
    }
    Ok((
        PulseTrain::from_parts(monitor, train.bin_pitch_ns, train.frame_id),
        PulseTrain::from_parts(through, train.bin_pitch_ns, train.frame_id),
    ))
}

/// Packs a port field plus incoherent excess intensity into a slot. The
/// slot amplitude takes the phase of the dominant field component.
fn port_slot<T: Scalar>(
    bin: u32,
    field: &JonesVector<T>,
    incoherent: T,
    fallback: JonesVector<T>,
    mode_center_ps: T,
) -> PulseSlot<T> {
    let mu = field.norm_sqr() + incoherent;
    let (amplitude, polarization) = match field.normalized() {
        Some(unit) => {
            let lead = if field.h.norm_sqr() >= field.v.norm_sqr() { field.h } else { field.v };
            let phase = lead.arg();
            let pol = unit.scale(Complex::from_polar(T::one(), -phase));
            (Complex::from_polar(mu.sqrt(), phase), pol)
        }
        None => (Complex::new(mu.sqrt(), T::zero()), fallback),
    };
    PulseSlot {
        bin_index: bin,
        amplitude,
        polarization,
        mode_center_ps,
    }
}

/// Ring modulator write: erased pulses keep a residual `sqrt(eps)` of their
/// field, `eps = 10^(-er_db/10)`; every pulse gets the ring's polarization
/// rotation. `pattern[i]` is `true` to pass slot `i`.
pub fn piim_apply<T: Scalar>(train: &PulseTrain<T>, pattern: &[bool], er_db: T) -> Result<PulseTrain<T>> {
    if pattern.len() != train.len() {
        return Err(Error::Geometry(format!(
            "pattern has {} entries for a frame of {} pulses",
            pattern.len(),
            train.len()
        )));
    }
    if !(er_db > T::zero()) {
        return Err(Error::param("er_db", format!("must be > 0, got {er_db}")));
    }
    let residual = amp_factor_db(er_db);
    let ring = JonesMatrix::ring_rotation();
    let slots = train
        .slots
        .iter()
        .zip(pattern)
        .map(|(s, &pass)| {
            let mut out = if pass { *s } else { s.scaled(residual) };
            out.polarization = ring.apply(&s.polarization);
            out
        })
        .collect();
    Ok(PulseTrain::from_parts(slots, train.bin_pitch_ns, train.frame_id))
}

/// Faraday mirror: conjugate, then rotate by the sigma_y-proportional map.
/// The output is always orthogonal to the input.
pub fn faraday_mirror<T: Scalar>(p: &JonesVector<T>) -> JonesVector<T> {
    JonesMatrix::ring_rotation().apply(&p.conj())
}

/// One pass over the fiber link. The arm phase drift `phi` takes one
/// Gaussian random-walk step and is imprinted on odd-bin (long-arm) pulses.
pub fn channel_propagate<T: Scalar, R: Rng + ?Sized>(
    train: &PulseTrain<T>,
    ch: &ChannelState<T>,
    rng: &mut R,
) -> (PulseTrain<T>, ChannelState<T>) {
    let mut next = *ch;
    if ch.phi_step_sigma > T::zero() {
        let step = Normal::new(0.0, ch.phi_step_sigma.to_f64().unwrap_or(0.0))
            .expect("sigma validated non-negative")
            .sample(rng);
        next.phase_phi = ch.phase_phi + T::lit(step);
    }
    let k = amp_factor_db(ch.loss_db);
    let drift = Complex::from_polar(T::one(), next.phase_phi);
    let out = train.clone().map_slots(|s| {
        s.amplitude = s.amplitude * k;
        if s.bin_index % 2 == 1 {
            s.amplitude = s.amplitude * drift;
        }
        s.polarization = ch.birefringence.apply(&s.polarization);
    });
    (out, next)
}

/// Return leg of the link: same loss, reverse-direction birefringence, no
/// further drift.
pub fn channel_return<T: Scalar>(train: &PulseTrain<T>, ch: &ChannelState<T>) -> PulseTrain<T> {
    let k = amp_factor_db(ch.loss_db);
    train.clone().map_slots(|s| {
        s.amplitude = s.amplitude * k;
        s.polarization = ch.birefringence.reverse_propagate(&s.polarization);
    })
}

/// Scales every pulse intensity by `10^(-db/10)`.
pub fn attenuate<T: Scalar>(train: &PulseTrain<T>, db: T) -> Result<PulseTrain<T>> {
    if !(db >= T::zero()) {
        return Err(Error::param("db", format!("attenuation must be >= 0, got {db}")));
    }
    let k = amp_factor_db(db);
    Ok(train.clone().map_slots(|s| s.amplitude = s.amplitude * k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn train(mus: &[(u32, f64)]) -> PulseTrain<f64> {
        let slots = mus
            .iter()
            .map(|&(b, mu)| PulseSlot::new(b, Complex::new(mu.sqrt(), 0.0), JonesVector::horizontal()))
            .collect();
        PulseTrain::new(slots, 2.3, 0).unwrap()
    }

    #[test]
    fn blank_frame_default_geometry() {
        let t = make_blank_frame(&SourceParams::<f64>::default(), 1.0).unwrap();
        let bins: Vec<u32> = t.slots().iter().map(|s| s.bin_index).collect();
        assert_eq!(bins, vec![0, 2]);
        assert!((t.bin_pitch_ns() - 2.3).abs() < 1e-12);
        for s in t.slots() {
            assert!((s.mean_photons() - 1.0).abs() < 1e-12);
            assert_eq!(s.mode_center_ps, 0.0);
        }
        let q = make_blank_frame(&SourceParams::<f64>::default(), 0.25).unwrap();
        assert!((q.total_mean_photons() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn blank_frame_rejects_empty_source() {
        let src = SourceParams::default();
        assert!(matches!(make_blank_frame(&src, 0.0), Err(Error::Parameter { name: "mu_pulse", .. })));
        assert!(make_blank_frame(&src, -1.0).is_err());
    }

    #[test]
    fn pair_separation_is_twice_the_pitch() {
        let src = SourceParams::<f64>::default();
        assert!((src.pair_separation_ns - 2.0 * src.bin_pitch_ns()).abs() < 1e-9);
    }

    #[test]
    fn split_yields_four_equal_pulses() {
        let blank = make_blank_frame(&SourceParams::<f64>::default(), 1.0).unwrap();
        let out = fmi_split(&blank, 0.0).unwrap();
        let bins: Vec<u32> = out.slots().iter().map(|s| s.bin_index).collect();
        assert_eq!(bins, vec![0, 1, 2, 3]);
        for s in out.slots() {
            assert!((s.mean_photons() - 0.25).abs() < 1e-12);
            assert_eq!(s.polarization, out.slots()[0].polarization);
        }
    }

    #[test]
    fn split_single_slot() {
        let out = fmi_split(&train(&[(0, 1.0)]), 0.0).unwrap();
        assert_eq!(out.len(), 2);
        for s in out.slots() {
            assert!((s.amplitude.norm() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn split_with_arm_loss() {
        // 0.25 * 10^(-0.301) by hand
        let expected = 0.25 * 10f64.powf(-0.301);
        assert!((expected - 0.125).abs() < 1e-4);
        let blank = make_blank_frame(&SourceParams::<f64>::default(), 1.0).unwrap();
        let out = fmi_split(&blank, 3.01).unwrap();
        for s in out.slots() {
            assert!((s.mean_photons() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn split_rejects_adjacent_inputs() {
        let err = fmi_split(&train(&[(0, 1.0), (1, 1.0)]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn interfere_three_peak_pattern() {
        // hand expansion: bin0 = a/2, bin1 = a/2 + a/2, bin2 = a/2 with a = 0.5
        let t = train(&[(0, 0.25), (1, 0.25)]);
        let (mon, thr) = fmi_interfere(&t, 0.0, 1.0).unwrap();
        assert!((mon.mean_photons(1) - 0.25).abs() < 1e-12);
        assert!((mon.mean_photons(0) - 0.0625).abs() < 1e-12);
        assert!((mon.mean_photons(2) - 0.0625).abs() < 1e-12);
        assert!(thr.mean_photons(1).abs() < 1e-12);

        let (mon, thr) = fmi_interfere(&t, std::f64::consts::PI, 1.0).unwrap();
        assert!(mon.mean_photons(1) < 1e-12);
        assert!((thr.mean_photons(1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn interfere_partial_overlap_sets_visibility() {
        let t = train(&[(0, 0.25), (1, 0.25)]);
        let xi = 0.93;
        let (max, min) = (0..360)
            .map(|d| {
                let phi = (d as f64).to_radians();
                fmi_interfere(&t, phi, xi).unwrap().0.mean_photons(1)
            })
            .fold((f64::MIN, f64::MAX), |(hi, lo), x| (hi.max(x), lo.min(x)));
        assert!(((max - min) / (max + min) - 0.93).abs() < 1e-9);
    }

    #[test]
    fn interfere_rejects_bad_overlap() {
        let t = train(&[(0, 0.25), (1, 0.25)]);
        assert!(fmi_interfere(&t, 0.0, 1.5).is_err());
    }

    #[test]
    fn piim_erases_with_residual() {
        let blank = fmi_split(&make_blank_frame(&SourceParams::<f64>::default(), 1.0).unwrap(), 0.0).unwrap();
        let out = piim_apply(&blank, &[true, false, true, true], 13.0).unwrap();
        let eps = 10f64.powf(-1.3);
        assert!((eps - 0.0501).abs() < 1e-4);
        assert!((out.mean_photons(1) - 0.25 * eps).abs() < 1e-12);
        assert!((out.mean_photons(0) - 0.25).abs() < 1e-12);

        let dark = piim_apply(&blank, &[false; 4], 300.0).unwrap();
        assert!(dark.slots().iter().all(|s| s.mean_photons() <= 1e-30));
    }

    #[test]
    fn piim_rotates_h_to_v() {
        let t = train(&[(0, 1.0)]);
        let out = piim_apply(&t, &[true], 13.0).unwrap();
        let p = out.slots()[0].polarization;
        // (0, -1) up to a global phase
        assert!(p.h.norm() < 1e-12);
        assert!((p.v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn piim_rejects_bad_pattern() {
        let t = train(&[(0, 1.0), (2, 1.0)]);
        assert!(matches!(piim_apply(&t, &[true], 13.0), Err(Error::Geometry(_))));
        assert!(matches!(piim_apply(&t, &[true, true], 0.0), Err(Error::Parameter { .. })));
    }

    #[test]
    fn faraday_mirror_examples() {
        let out = faraday_mirror(&JonesVector::<f64>::horizontal());
        assert!(out.h.norm() < 1e-15 && (out.v.norm() - 1.0).abs() < 1e-15);
        let d = JonesVector::new(
            Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        );
        assert!(faraday_mirror(&d).inner(&d).norm() < 1e-15);
    }

    #[test]
    fn faraday_mirror_orthogonal_over_random_states() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for _ in 0..1000 {
            let p = JonesVector::<f64>::random(&mut rng);
            assert!(faraday_mirror(&p).inner(&p).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_loss_to_bob() {
        let t = train(&[(0, 0.5)]);
        let ch = ChannelState::new(7.0, JonesMatrix::identity(), 0.0).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let (out, _) = channel_propagate(&t, &ch, &mut rng);
        assert!((out.mean_photons(0) - 0.0998).abs() < 1e-4);
    }

    #[test]
    fn identity_channel_is_identity() {
        let t = train(&[(0, 0.3), (1, 0.2), (2, 0.1)]);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let (out, next) = channel_propagate(&t, &ChannelState::ideal(), &mut rng);
        assert_eq!(out, t);
        assert_eq!(next, ChannelState::ideal());
    }

    #[test]
    fn phase_drift_is_a_random_walk() {
        let sigma = 0.05;
        let frames = 1000;
        let runs = 400;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
        let t = train(&[(0, 0.1), (1, 0.1)]);
        let mut finals = Vec::with_capacity(runs);
        for _ in 0..runs {
            let mut ch = ChannelState::new(0.0, JonesMatrix::identity(), sigma).unwrap();
            for _ in 0..frames {
                ch = channel_propagate(&t, &ch, &mut rng).1;
            }
            finals.push(ch.phase_phi);
        }
        let mean = finals.iter().sum::<f64>() / runs as f64;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let expected = frames as f64 * sigma * sigma;
        // sample variance of 400 Gaussians: relative sd ~ sqrt(2/399) = 7%
        assert!((var / expected - 1.0).abs() < 0.25, "var {var} vs {expected}");
    }

    #[test]
    fn drift_is_imprinted_on_odd_bins() {
        let t = train(&[(0, 1.0), (1, 1.0)]);
        let mut ch = ChannelState::ideal();
        ch.phase_phi = 0.7;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let (out, _) = channel_propagate(&t, &ch, &mut rng);
        assert!(out.slots()[0].amplitude.arg().abs() < 1e-12);
        assert!((out.slots()[1].amplitude.arg() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn attenuate_examples() {
        let t = train(&[(0, 1.0)]);
        assert!((attenuate(&t, 10.0).unwrap().mean_photons(0) - 0.1).abs() < 1e-12);
        assert_eq!(attenuate(&t, 0.0).unwrap(), t);
        assert!(matches!(attenuate(&t, -1.0), Err(Error::Parameter { name: "db", .. })));
    }

    #[test]
    fn loss_budget_chain() {
        // attenuator 46 dB (double pass), client insertion 9 dB, patchcord 2 dB
        let intense = train(&[(0, 3.98e4)]);
        let after_att = attenuate(&intense, 46.0).unwrap();
        assert!((after_att.mean_photons(0) - 1.0).abs() < 5e-3);

        let mu_a = 0.5;
        let needed = mu_a * 10f64.powf(5.5);
        let start = train(&[(0, needed)]);
        let chained = attenuate(&attenuate(&start, 46.0).unwrap(), 9.0).unwrap();
        assert!((chained.mean_photons(0) - mu_a).abs() < 1e-9);
        let at_bob = attenuate(&chained, 2.0).unwrap();
        let direct = attenuate(&start, 57.0).unwrap();
        assert!((at_bob.mean_photons(0) - direct.mean_photons(0)).abs() < 1e-12);
    }

    #[test]
    fn random_unitaries_are_unitary() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..100 {
            let u = JonesMatrix::<f64>::random_unitary(&mut rng);
            assert!(u.unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unitary_birefringence() {
        let mut m = JonesMatrix::<f64>::identity();
        m.m[0][0] = Complex::new(2.0, 0.0);
        assert!(ChannelState::new(0.0, m, 0.0).is_err());
    }

    #[test]
    fn train_validation() {
        let p = JonesVector::horizontal();
        let a = Complex::new(1.0, 0.0);
        assert!(PulseTrain::new(vec![PulseSlot::new(1, a, p), PulseSlot::new(1, a, p)], 2.3, 0).is_err());
        assert!(PulseTrain::new(vec![PulseSlot::new(0, a, p)], 0.0, 0).is_err());
        let bad = JonesVector::new(a, a);
        assert!(PulseTrain::new(vec![PulseSlot::new(0, a, bad)], 2.3, 0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let blank = make_blank_frame(&SourceParams::<f32>::default(), 1.0).unwrap();
        let split = fmi_split(&blank, 0.0).unwrap();
        let (m, t) = fmi_interfere(&split, 0.3, 0.95).unwrap();
        let total = m.total_mean_photons() + t.total_mean_photons();
        assert!((total - 1.0).abs() < 1e-5);
    }
}
