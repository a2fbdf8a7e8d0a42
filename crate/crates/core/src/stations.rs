//! Alice (client) and Bob (server) stations and the Monte Carlo session.
//!
//! A session runs per frame: Bob carves a blank frame, splits it in the FMI
//! and sends it over the link; Alice erases pulses to write two symbols and
//! attenuates to `mu_a` per pulse; the frame comes back (possibly through an
//! eavesdropper) and Bob routes it either to the data line, which time-tags
//! the bins directly, or to the monitoring line, which sends it through the
//! FMI again and watches the interference bins.
//!
//! Frames cross between the stations as [`FrameRecord`]s, in-process and on
//! the wire alike, so a split client/server run reproduces a single-process
//! run exactly.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;

use crate::adversary::{Attack, AttackRecord};
use crate::photonic::{
    attenuate, channel_propagate, channel_return, fmi_interfere_with, fmi_split, make_blank_frame,
    piim_apply, ChannelState, JonesMatrix, JonesVector, PulseSlot, PulseTrain, SourceParams,
};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::{Error, Result, Scalar};

/// Three-valued COW alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    /// Bit 0: light in the early bin only.
    Zero,
    /// Bit 1: light in the late bin only.
    One,
    /// Both pulses, used to check coherence.
    Decoy,
}

impl Symbol {
    pub fn bit(self) -> Option<bool> {
        match self {
            Symbol::Zero => Some(false),
            Symbol::One => Some(true),
            Symbol::Decoy => None,
        }
    }

    /// `[early, late]` pass flags.
    pub fn pattern(self) -> [bool; 2] {
        match self {
            Symbol::Zero => [true, false],
            Symbol::One => [false, true],
            Symbol::Decoy => [true, true],
        }
    }

    pub fn from_pattern(p: [bool; 2]) -> Option<Self> {
        match p {
            [true, false] => Some(Symbol::Zero),
            [false, true] => Some(Symbol::One),
            [true, true] => Some(Symbol::Decoy),
            [false, false] => None,
        }
    }
}

/// Physical parameters of a link and its detection stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams<T = f64> {
    /// Mean photons per pulse at Alice's output.
    pub mu_a: T,
    pub loss_db: T,
    pub eta_det: T,
    /// Dark count probability per bin.
    pub p_dark: T,
    /// Background click probability per bin.
    pub p_bg: T,
    /// Modulator extinction ratio.
    pub er_db: T,
    /// Probability that a symbol carries a key bit; the rest are decoys.
    pub f_key: T,
    /// Probability that a returning frame is routed to the data line.
    pub tap_data: T,
    pub v_intra: T,
    pub v_across: T,
    pub fiber_db_per_km: T,
}

impl<T: Scalar> LinkParams<T> {
    /// The 30 km operating point: 7 dB link, 10% detector efficiency,
    /// 9:1 key-to-decoy emission, everything routed to the data line.
    pub fn paper30km() -> Self {
        Self {
            mu_a: T::lit(0.5),
            loss_db: T::lit(7.0),
            eta_det: T::lit(0.1),
            p_dark: T::lit(2.5e-5),
            p_bg: T::lit(1.1e-4),
            er_db: T::lit(13.0),
            f_key: T::lit(0.9),
            tap_data: T::one(),
            v_intra: T::lit(0.95),
            v_across: T::lit(0.93),
            fiber_db_per_km: T::lit(7.0 / 30.0),
        }
    }

    /// `paper30km` with the detector time-multiplexed between the lines so
    /// that 65% of clicks land on the data line.
    pub fn demo() -> Self {
        Self {
            tap_data: T::lit(0.49),
            ..Self::paper30km()
        }
    }

    pub fn transmittance(&self) -> T {
        crate::db_to_transmittance(self.loss_db)
    }

    pub fn extinction(&self) -> T {
        crate::db_to_transmittance(self.er_db)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("eta_det", self.eta_det),
            ("p_dark", self.p_dark),
            ("p_bg", self.p_bg),
            ("tap_data", self.tap_data),
            ("v_intra", self.v_intra),
            ("v_across", self.v_across),
        ];
        for (name, x) in unit {
            if !(T::zero()..=T::one()).contains(&x) {
                return Err(Error::param(name, format!("must be in [0, 1], got {x}")));
            }
        }
        if self.p_dark + self.p_bg > T::one() {
            return Err(Error::param("p_bg", "p_dark + p_bg must not exceed 1"));
        }
        if !(self.mu_a > T::zero() && self.mu_a.is_finite()) {
            return Err(Error::param("mu_a", format!("must be > 0, got {}", self.mu_a)));
        }
        if !(self.f_key > T::zero() && self.f_key <= T::one()) {
            return Err(Error::param("f_key", format!("must be in (0, 1], got {}", self.f_key)));
        }
        if !(self.loss_db >= T::zero() && self.loss_db.is_finite()) {
            return Err(Error::param("loss_db", format!("must be >= 0, got {}", self.loss_db)));
        }
        if !(self.er_db > T::zero()) {
            return Err(Error::param("er_db", format!("must be > 0, got {}", self.er_db)));
        }
        if !(self.fiber_db_per_km > T::zero() && self.fiber_db_per_km.is_finite()) {
            return Err(Error::param(
                "fiber_db_per_km",
                format!("must be > 0, got {}", self.fiber_db_per_km),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Line {
    Data,
    Monitor,
}

/// One threshold-detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectionEvent {
    pub frame_id: u32,
    /// Frame-local bin. The monitor line has one extra bin at the end.
    pub bin_index: u8,
    pub line: Line,
}

/// Everything a session produced, before post-processing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSessionData {
    pub alice_symbols: Vec<Symbol>,
    pub events: Vec<DetectionEvent>,
    /// Arm phase applied on the monitor pass, per frame.
    pub monitor_phase_log: Vec<f64>,
    pub params: LinkParams<f64>,
    pub symbols_per_frame: u32,
    pub seed: u64,
    pub attack_record: Option<AttackRecord<f64>>,
}

impl RawSessionData {
    pub fn n_frames(&self) -> usize {
        self.monitor_phase_log.len()
    }

    pub fn decoy_indices(&self) -> Vec<u32> {
        decoy_indices(&self.alice_symbols)
    }

    pub fn clicks_on(&self, line: Line) -> usize {
        self.events.iter().filter(|e| e.line == line).count()
    }
}

pub fn decoy_indices(symbols: &[Symbol]) -> Vec<u32> {
    symbols
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == Symbol::Decoy)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Independent symbol draws: decoy with probability `1 - f_key`, otherwise
/// an unbiased bit.
pub fn alice_draw_symbols<R: Rng + ?Sized>(n: usize, f_key: f64, rng: &mut R) -> Result<Vec<Symbol>> {
    if n == 0 {
        return Err(Error::param("n", "must draw at least one symbol"));
    }
    if !(f_key > 0.0 && f_key <= 1.0) {
        return Err(Error::param("f_key", format!("must be in (0, 1], got {f_key}")));
    }
    Ok((0..n).map(|_| draw_symbol(f_key, rng)).collect())
}

fn draw_symbol<R: Rng + ?Sized>(f_key: f64, rng: &mut R) -> Symbol {
    let u: f64 = rng.gen();
    if u >= f_key {
        Symbol::Decoy
    } else if u < f_key / 2.0 {
        Symbol::Zero
    } else {
        Symbol::One
    }
}

/// Pass/erase flags for one frame, in bin order.
pub fn symbols_to_pattern(symbols: &[Symbol]) -> Vec<bool> {
    symbols.iter().flat_map(|s| s.pattern()).collect()
}

/// Inverse of [`symbols_to_pattern`]; `None` if some symbol has both pulses erased.
pub fn pattern_to_symbols(pattern: &[bool]) -> Option<Vec<Symbol>> {
    pattern
        .chunks(2)
        .map(|c| match c {
            [a, b] => Symbol::from_pattern([*a, *b]),
            _ => None,
        })
        .collect()
}

/// Threshold-detector click probability for a bin holding `mu` photons.
pub fn click_probability<T: Scalar>(mu: T, params: &LinkParams<T>) -> T {
    let p_sig = T::one() - (-mu * params.eta_det).exp();
    T::one() - (T::one() - p_sig) * (T::one() - params.p_dark - params.p_bg)
}

/// Bernoulli routing at Bob's tap.
pub fn route_frame<T: Scalar, R: Rng + ?Sized>(params: &LinkParams<T>, rng: &mut R) -> Line {
    let tap = params.tap_data.to_f64().unwrap_or(1.0);
    if rng.gen::<f64>() < tap {
        Line::Data
    } else {
        Line::Monitor
    }
}

/// Samples at most one click per bin of `train` and tags it with `line`.
pub fn detect_frame<T: Scalar, R: Rng + ?Sized>(
    train: &PulseTrain<T>,
    params: &LinkParams<T>,
    line: Line,
    rng: &mut R,
) -> Vec<DetectionEvent> {
    let frame_id = train.frame_id() as u32;
    train
        .slots()
        .iter()
        .filter_map(|s| {
            let p = click_probability(s.mean_photons(), params).to_f64().unwrap_or(0.0);
            (rng.gen::<f64>() < p).then_some(DetectionEvent {
                frame_id,
                bin_index: s.bin_index as u8,
                line,
            })
        })
        .collect()
}

/// Monitor-interferometer setting for a frame: 0 on even frames, pi on odd.
pub fn monitor_setting(frame_id: u32) -> f64 {
    if frame_id % 2 == 0 {
        0.0
    } else {
        PI
    }
}

/// A frame as exchanged between the stations: one polarization shared by
/// every pulse and per-pulse `(bin, mean photon number, phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub polarization: JonesVector<f64>,
    pub slots: Vec<SlotRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub bin: u8,
    pub mu: f64,
    pub phase: f64,
}

impl FrameRecord {
    pub fn from_train(train: &PulseTrain<f64>) -> Self {
        let polarization = train
            .slots()
            .first()
            .map_or_else(JonesVector::horizontal, |s| s.polarization);
        Self {
            frame_id: train.frame_id() as u32,
            polarization,
            slots: train
                .slots()
                .iter()
                .map(|s| SlotRecord {
                    bin: s.bin_index as u8,
                    mu: s.mean_photons(),
                    phase: s.amplitude.arg(),
                })
                .collect(),
        }
    }

    pub fn to_train(&self, bin_pitch_ns: f64) -> Result<PulseTrain<f64>> {
        let pol = self
            .polarization
            .normalized()
            .ok_or_else(|| Error::Geometry("frame polarization is zero".into()))?;
        if let Some(s) = self.slots.iter().find(|s| !(s.mu >= 0.0 && s.mu.is_finite() && s.phase.is_finite())) {
            return Err(Error::Geometry(format!("bin {} has invalid mean photon number or phase", s.bin)));
        }
        let slots = self
            .slots
            .iter()
            .map(|s| PulseSlot::new(u32::from(s.bin), Complex::from_polar(s.mu.sqrt(), s.phase), pol))
            .collect();
        PulseTrain::new(slots, bin_pitch_ns, u64::from(self.frame_id))
    }
}

/// Intensity of Bob's carved blank pulses, far above the single-photon level.
pub const BLANK_MU: f64 = 1.0e6;

/// Session-wide settings not covered by [`LinkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOptions {
    pub n_frames: u32,
    pub seed: u64,
    pub attack: Option<Attack<f64>>,
    pub symbols: SymbolPlan,
    pub phi_step_sigma: f64,
}

impl SessionOptions {
    pub fn new(n_frames: u32, seed: u64) -> Self {
        Self {
            n_frames,
            seed,
            attack: None,
            symbols: SymbolPlan::Random,
            phi_step_sigma: 0.0,
        }
    }
}

/// How Alice picks symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolPlan {
    Random,
    /// The same symbols every frame (length = symbols per frame).
    Fixed(Vec<Symbol>),
}

/// Client station: writes symbols onto the blank frames it receives.
#[derive(Debug)]
pub struct AliceStation {
    params: LinkParams<f64>,
    src: SourceParams<f64>,
    plan: SymbolPlan,
    rng: SimRng,
    symbols: Vec<Symbol>,
}

impl AliceStation {
    pub fn new(params: LinkParams<f64>, src: SourceParams<f64>, plan: SymbolPlan, seed: u64) -> Result<Self> {
        params.validate()?;
        src.validate()?;
        if let SymbolPlan::Fixed(s) = &plan {
            if s.len() != src.symbols_per_frame as usize {
                return Err(Error::param(
                    "symbols",
                    format!("fixed plan has {} symbols, frame holds {}", s.len(), src.symbols_per_frame),
                ));
            }
        }
        Ok(Self {
            params,
            src,
            plan,
            rng: stream_rng(seed, Stream::Alice),
            symbols: Vec::new(),
        })
    }

    /// Chooses this frame's symbols, erases pulses accordingly and attenuates
    /// the passed pulses to `mu_a`.
    pub fn encode(&mut self, blank: &FrameRecord) -> Result<FrameRecord> {
        let train = blank.to_train(self.src.bin_pitch_ns())?;
        let n_sym = self.src.symbols_per_frame as usize;
        if train.len() != 2 * n_sym {
            return Err(Error::Geometry(format!(
                "frame {} has {} pulses, expected {}",
                blank.frame_id,
                train.len(),
                2 * n_sym
            )));
        }
        let chosen: Vec<Symbol> = match &self.plan {
            SymbolPlan::Random => (0..n_sym).map(|_| draw_symbol(self.params.f_key, &mut self.rng)).collect(),
            SymbolPlan::Fixed(s) => s.clone(),
        };
        let pattern = symbols_to_pattern(&chosen);
        let written = piim_apply(&train, &pattern, self.params.er_db)?;
        let mu_in = train.total_mean_photons() / train.len() as f64;
        if !(mu_in >= self.params.mu_a) {
            return Err(Error::param(
                "mu_a",
                format!("blank pulses carry {mu_in} photons, cannot attenuate up to {}", self.params.mu_a),
            ));
        }
        let out = attenuate(&written, crate::transmittance_to_db(self.params.mu_a / mu_in))?;
        self.symbols.extend(chosen);
        Ok(FrameRecord::from_train(&out))
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn into_symbols(self) -> Vec<Symbol> {
        self.symbols
    }
}

/// Server station: light source, FMI, link simulation and detectors.
#[derive(Debug)]
pub struct BobStation {
    params: LinkParams<f64>,
    src: SourceParams<f64>,
    forward: ChannelState<f64>,
    back: ChannelState<f64>,
    attack: Option<(Attack<f64>, AttackRecord<f64>)>,
    channel_rng: SimRng,
    eve_rng: SimRng,
    det_rng: SimRng,
    drift_log: Vec<f64>,
    phase_log: Vec<f64>,
    events: Vec<DetectionEvent>,
}

impl BobStation {
    pub fn new(
        params: LinkParams<f64>,
        src: SourceParams<f64>,
        attack: Option<Attack<f64>>,
        phi_step_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        src.validate()?;
        if let Some(a) = &attack {
            a.validate()?;
        }
        let mut channel_rng = stream_rng(seed, Stream::Channel);
        let biref = JonesMatrix::random_unitary(&mut channel_rng);
        let forward = ChannelState::new(params.loss_db, biref, phi_step_sigma)?;
        let back = ChannelState::new(params.loss_db, biref, 0.0)?;
        Ok(Self {
            params,
            src,
            forward,
            back,
            attack: attack.map(|a| {
                let rec = AttackRecord::new(a.kind(), a.strength());
                (a, rec)
            }),
            channel_rng,
            eve_rng: stream_rng(seed, Stream::Eve),
            det_rng: stream_rng(seed, Stream::Detector),
            drift_log: Vec::new(),
            phase_log: Vec::new(),
            events: Vec::new(),
        })
    }

    /// Carves, splits and launches blank frame `frame_id` toward Alice.
    pub fn emit_blank(&mut self, frame_id: u32) -> Result<FrameRecord> {
        if frame_id as usize != self.drift_log.len() {
            return Err(Error::Protocol(format!(
                "blank frames must be emitted in order, expected {}",
                self.drift_log.len()
            )));
        }
        let blank = make_blank_frame(&self.src, BLANK_MU)?.with_frame_id(u64::from(frame_id));
        let split = fmi_split(&blank, 0.0)?;
        let (at_alice, next) = channel_propagate(&split, &self.forward, &mut self.channel_rng);
        self.forward = next;
        self.drift_log.push(next.phase_phi);
        Ok(FrameRecord::from_train(&at_alice))
    }

    /// Receives Alice's frame, applies the eavesdropper (if any) and the
    /// return leg, and detects it on one of the two lines.
    pub fn receive(&mut self, record: &FrameRecord) -> Result<()> {
        let frame_id = record.frame_id;
        if frame_id as usize != self.phase_log.len() {
            return Err(Error::Protocol(format!(
                "frames must return in order, expected {}",
                self.phase_log.len()
            )));
        }
        let drift = *self.drift_log.get(frame_id as usize).ok_or_else(|| {
            Error::Protocol(format!("frame {frame_id} returned before it was emitted"))
        })?;
        let n_pulses = 2 * self.src.symbols_per_frame as usize;
        if record.slots.len() != n_pulses {
            return Err(Error::Geometry(format!(
                "frame {frame_id} returned with {} pulses, expected {n_pulses}",
                record.slots.len()
            )));
        }
        let mut train = record.to_train(self.src.bin_pitch_ns())?;
        if let Some((attack, rec)) = &mut self.attack {
            train = attack.apply(&train, rec, &mut self.eve_rng)?;
        }
        let at_bob = channel_return(&train, &self.back);
        // the monitor pass sees the arm phase the pulses were carved with
        let phi = drift + monitor_setting(frame_id);
        self.phase_log.push(phi);
        let (v_intra, v_across) = (self.params.v_intra, self.params.v_across);
        match route_frame(&self.params, &mut self.det_rng) {
            Line::Data => {
                let ev = detect_frame(&at_bob, &self.params, Line::Data, &mut self.det_rng);
                self.events.extend(ev);
            }
            Line::Monitor => {
                let (monitor, _) =
                    fmi_interfere_with(&at_bob, phi, |bin| if bin % 2 == 1 { v_intra } else { v_across })?;
                let ev = detect_frame(&monitor, &self.params, Line::Monitor, &mut self.det_rng);
                self.events.extend(ev);
            }
        }
        Ok(())
    }

    pub fn events(&self) -> &[DetectionEvent] {
        &self.events
    }

    pub fn monitor_phase_log(&self) -> &[f64] {
        &self.phase_log
    }

    pub fn attack_record(&self) -> Option<&AttackRecord<f64>> {
        self.attack.as_ref().map(|(_, r)| r)
    }

    pub fn into_parts(self) -> (Vec<DetectionEvent>, Vec<f64>, Option<AttackRecord<f64>>) {
        (self.events, self.phase_log, self.attack.map(|(_, r)| r))
    }
}

/// Full session in one process.
pub fn run_session(
    params: &LinkParams<f64>,
    src: &SourceParams<f64>,
    n_frames: u32,
    attack: Option<Attack<f64>>,
    seed: u64,
) -> Result<RawSessionData> {
    let opts = SessionOptions {
        attack,
        ..SessionOptions::new(n_frames, seed)
    };
    run_session_with(params, src, &opts)
}

pub fn run_session_with(
    params: &LinkParams<f64>,
    src: &SourceParams<f64>,
    opts: &SessionOptions,
) -> Result<RawSessionData> {
    if opts.n_frames == 0 {
        return Err(Error::param("n_frames", "must be >= 1"));
    }
    let total_symbols = u64::from(opts.n_frames) * u64::from(src.symbols_per_frame);
    if total_symbols > u64::from(u32::MAX) {
        return Err(Error::param("n_frames", "symbol count must fit in 32 bits"));
    }
    let mut alice = AliceStation::new(*params, *src, opts.symbols.clone(), opts.seed)?;
    let mut bob = BobStation::new(*params, *src, opts.attack, opts.phi_step_sigma, opts.seed)?;
    for f in 0..opts.n_frames {
        let blank = bob.emit_blank(f)?;
        let written = alice.encode(&blank)?;
        bob.receive(&written)?;
    }
    let (events, monitor_phase_log, attack_record) = bob.into_parts();
    Ok(RawSessionData {
        alice_symbols: alice.into_symbols(),
        events,
        monitor_phase_log,
        params: *params,
        symbols_per_frame: src.symbols_per_frame,
        seed: opts.seed,
        attack_record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn decoy_fraction_follows_key_ratio() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let s = alice_draw_symbols(1_000_000, 0.9, &mut rng).unwrap();
        let decoys = s.iter().filter(|x| **x == Symbol::Decoy).count() as f64 / 1e6;
        assert!((decoys - 0.1).abs() < 0.001, "{decoys}");
        let zeros = s.iter().filter(|x| **x == Symbol::Zero).count() as f64 / 1e6;
        assert!((zeros - 0.45).abs() < 0.002);
    }

    #[test]
    fn no_decoys_at_unit_key_fraction() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let s = alice_draw_symbols(10_000, 1.0, &mut rng).unwrap();
        assert!(s.iter().all(|x| *x != Symbol::Decoy));
    }

    #[test]
    fn draws_are_deterministic() {
        let a = alice_draw_symbols(100, 0.9, &mut Xoshiro256PlusPlus::seed_from_u64(9)).unwrap();
        let b = alice_draw_symbols(100, 0.9, &mut Xoshiro256PlusPlus::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draw_rejects_bad_ratio() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        assert!(alice_draw_symbols(10, 0.0, &mut rng).is_err());
        assert!(alice_draw_symbols(10, 1.5, &mut rng).is_err());
        assert!(alice_draw_symbols(0, 0.5, &mut rng).is_err());
    }

    #[test]
    fn patterns() {
        use Symbol::*;
        assert_eq!(symbols_to_pattern(&[Decoy, One]), vec![true, true, false, true]);
        assert_eq!(symbols_to_pattern(&[Zero, Zero]), vec![true, false, true, false]);
        assert_eq!(symbols_to_pattern(&[Decoy, Decoy]), vec![true; 4]);
        for a in [Zero, One, Decoy] {
            for b in [Zero, One, Decoy] {
                assert_eq!(pattern_to_symbols(&symbols_to_pattern(&[a, b])).unwrap(), vec![a, b]);
            }
        }
    }

    #[test]
    fn click_probabilities() {
        let mut p = LinkParams::<f64>::paper30km();
        p.p_dark = 0.0;
        p.p_bg = 0.0;
        assert!((click_probability(0.0998, &p) - 0.00993).abs() < 1e-5);
        p.p_dark = 2.5e-5;
        assert!((click_probability(0.0, &p) - 2.5e-5).abs() < 1e-15);
        assert!(click_probability(1e6, &p) > 1.0 - 1e-12);
    }

    #[test]
    fn link_params_validation() {
        let ok = LinkParams::<f64>::paper30km();
        assert!(ok.validate().is_ok());
        let bad = LinkParams { mu_a: -1.0, ..ok };
        assert!(matches!(bad.validate(), Err(Error::Parameter { name: "mu_a", .. })));
        let bad = LinkParams { f_key: 0.0, ..ok };
        assert!(bad.validate().is_err());
        let bad = LinkParams { eta_det: 1.1, ..ok };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_record_round_trip_preserves_intensities() {
        let src = SourceParams::default();
        let t = fmi_split(&make_blank_frame(&src, 2.0).unwrap(), 0.0).unwrap();
        let back = FrameRecord::from_train(&t).to_train(src.bin_pitch_ns()).unwrap();
        for (a, b) in t.slots().iter().zip(back.slots()) {
            assert!((a.amplitude - b.amplitude).norm() < 1e-12);
        }
    }

    #[test]
    fn session_is_reproducible() {
        let p = LinkParams::paper30km();
        let src = SourceParams::default();
        let a = run_session(&p, &src, 1, None, 3).unwrap();
        let b = run_session(&p, &src, 1, None, 3).unwrap();
        assert_eq!(a, b);
        let c = run_session(&p, &src, 2000, None, 3).unwrap();
        let d = run_session(&p, &src, 2000, None, 3).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.alice_symbols.len(), 4000);
    }

    #[test]
    fn noiseless_data_clicks_fall_in_passed_bins() {
        let p = LinkParams {
            p_dark: 0.0,
            p_bg: 0.0,
            er_db: 300.0,
            ..LinkParams::paper30km()
        };
        let data = run_session(&p, &SourceParams::default(), 20_000, None, 8).unwrap();
        assert!(!data.events.is_empty());
        for e in &data.events {
            let sym = data.alice_symbols[(e.frame_id * 2 + u32::from(e.bin_index) / 2) as usize];
            assert!(sym.pattern()[usize::from(e.bin_index % 2)], "click in erased bin");
        }
    }

    #[test]
    fn alice_output_has_mu_a_per_passed_pulse() {
        let p = LinkParams::paper30km();
        let src = SourceParams::default();
        let mut bob = BobStation::new(p, src, None, 0.0, 1).unwrap();
        let mut alice = AliceStation::new(p, src, SymbolPlan::Fixed(vec![Symbol::Zero, Symbol::Decoy]), 1).unwrap();
        let out = alice.encode(&bob.emit_blank(0).unwrap()).unwrap();
        let mus: Vec<f64> = out.slots.iter().map(|s| s.mu).collect();
        assert!((mus[0] - 0.5).abs() < 1e-9);
        assert!((mus[1] - 0.5 * p.extinction()).abs() < 1e-9);
        assert!((mus[2] - 0.5).abs() < 1e-9 && (mus[3] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let p = LinkParams::paper30km();
        let src = SourceParams::default();
        let mut bob = BobStation::new(p, src, None, 0.0, 1).unwrap();
        assert!(matches!(bob.emit_blank(1), Err(Error::Protocol(_))));
        let blank = bob.emit_blank(0).unwrap();
        let mut wrong = blank.clone();
        wrong.frame_id = 1;
        assert!(bob.receive(&wrong).is_err());
    }
}
