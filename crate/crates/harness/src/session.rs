//! Session orchestration: single-process runs and the two-party protocol.
//!
//! The server plays Bob (source, interferometer, detectors, and the
//! simulated link including any eavesdropper); the client plays Alice.
//! Both sides exchange, in order:
//!
//! ```text
//! C->S HELLO          S->C HELLO
//! C->S PARAMS         S->C PARAMS          (must match)
//! S->C FRAMES blank   C->S FRAMES encoded
//! S->C DETECTIONS     C->S DECOY_REVEAL
//! S->C QBER_SAMPLE    C->S QBER_SAMPLE     (same indices, own bits)
//! S->C PA_SEED        C->S PA_SEED         (echo)
//! S->C REPORT         C->S REPORT
//! ```
//!
//! A single-process run performs Bob's side of the same computation on the
//! same random streams, so its report equals the server's.

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;

use cowpnp_core::distill::{
    alice_bits_at, bits_to_hex, choose_sample, final_key_length, mismatch_rate, monitor_counts, privacy_amplify,
    remove_positions, sift_bob, BobSift, MonitorCounts,
};
use cowpnp_core::rng::{stream_rng, SimRng, Stream, PRNG_ALGORITHM};
use cowpnp_core::security::{r_sift, secret_fraction};
use cowpnp_core::stations::{decoy_indices, run_session_with, AliceStation, BobStation, SymbolPlan};
use cowpnp_core::{DetectionEvent, Line};
use rand::RngCore;
use thiserror::Error;

use crate::config::Config;
use crate::report::{Counters, SessionReport};
use crate::wire::{read_message, write_message, DecodeError, Message, MsgType, RecvError};

/// Protocol step a session error happened in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Hello,
    Params,
    Frames,
    Detections,
    DecoyReveal,
    QberSample,
    PaSeed,
    Report,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Hello => "hello",
            Phase::Params => "params",
            Phase::Frames => "frames",
            Phase::Detections => "detections",
            Phase::DecoyReveal => "decoy-reveal",
            Phase::QberSample => "qber-sample",
            Phase::PaSeed => "pa-seed",
            Phase::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("[{phase}] expected {expected}, received {got}")]
    OutOfOrder {
        phase: Phase,
        expected: MsgType,
        got: MsgType,
    },
    #[error("[{phase}] parameter negotiation failed: {detail}")]
    Negotiation { phase: Phase, detail: String },
    #[error("[{phase}] protocol violation: {detail}")]
    Protocol { phase: Phase, detail: String },
    #[error("[{phase}] transport failure: {source}")]
    Transport {
        phase: Phase,
        #[source]
        source: std::io::Error,
    },
    #[error("[{phase}] undecodable message: {source}")]
    Decode {
        phase: Phase,
        #[source]
        source: DecodeError,
    },
    #[error("[{phase}] simulation error: {source}")]
    Simulation {
        phase: Phase,
        #[source]
        source: cowpnp_core::Error,
    },
}

impl SessionError {
    pub fn phase(&self) -> Phase {
        match self {
            SessionError::OutOfOrder { phase, .. }
            | SessionError::Negotiation { phase, .. }
            | SessionError::Protocol { phase, .. }
            | SessionError::Transport { phase, .. }
            | SessionError::Decode { phase, .. }
            | SessionError::Simulation { phase, .. } => *phase,
        }
    }
}

fn sim(phase: Phase) -> impl Fn(cowpnp_core::Error) -> SessionError {
    move |source| SessionError::Simulation { phase, source }
}

fn violation(phase: Phase, detail: impl Into<String>) -> SessionError {
    SessionError::Protocol {
        phase,
        detail: detail.into(),
    }
}

/// What both parties know once sampling is done.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    n_symbols: u64,
    data_clicks: u64,
    monitor_clicks: u64,
    sifted: u64,
    disclosed: u64,
    qber: Option<f64>,
    counts: MonitorCounts,
}

impl Tally {
    fn new(events: &[DetectionEvent], n_symbols: u64, sift: &BobSift, counts: MonitorCounts) -> Self {
        let data = events.iter().filter(|e| e.line == Line::Data).count() as u64;
        Self {
            n_symbols,
            data_clicks: data,
            monitor_clicks: events.len() as u64 - data,
            sifted: sift.symbol_indices.len() as u64,
            disclosed: 0,
            qber: None,
            counts,
        }
    }
}

/// Positions (into the sifted key) of the disclosed sample, empty when
/// nothing was sifted. Bob draws it from the protocol stream.
fn draw_sample(n: usize, fraction: f64, rng: &mut SimRng) -> Result<Vec<usize>, cowpnp_core::Error> {
    if n == 0 {
        Ok(Vec::new())
    } else {
        choose_sample(n, fraction, rng)
    }
}

/// Turns the tally and this side's undisclosed bits into a report.
fn conclude(cfg: &Config, tally: &Tally, remaining: &[bool], pa_seed: u64) -> Result<SessionReport, SessionError> {
    let phase = Phase::Report;
    let p = &cfg.link;
    let v_intra = tally.counts.intra().ok().map(|e| e.v);
    let v_across = tally.counts.across().ok().map(|e| e.v);
    let v_mc = tally.counts.pooled();
    let aborted = v_mc.is_some_and(|v| v < cfg.abort_v_min);
    let sf = match tally.qber {
        Some(q) => secret_fraction(q, p.mu_a, p.transmittance(), v_mc.unwrap_or(p.v_across)).map_err(sim(phase))?,
        None => 0.0,
    };
    let n_key = if aborted { 0 } else { final_key_length(remaining.len(), sf) };
    let key = if n_key > 0 {
        privacy_amplify(remaining, n_key, pa_seed).map_err(sim(phase))?
    } else {
        Vec::new()
    };
    let c = &tally.counts;
    Ok(SessionReport {
        prng: PRNG_ALGORITHM.to_string(),
        seed: cfg.seed,
        n_frames: cfg.n_frames,
        r_sift_mc: tally.sifted as f64 / tally.n_symbols as f64,
        qber_mc: tally.qber,
        v_mc,
        v_intra_mc: v_intra,
        v_across_mc: v_across,
        r_sec_model: r_sift(p) * sf,
        secret_fraction: sf,
        aborted,
        final_key_bits: key.len() as u64,
        final_key_hex: bits_to_hex(&key),
        counters: Counters {
            symbols: tally.n_symbols,
            data_clicks: tally.data_clicks,
            monitor_clicks: tally.monitor_clicks,
            sifted_bits: tally.sifted,
            disclosed_bits: tally.disclosed,
            monitor_intra_max: c.intra_max,
            monitor_intra_min: c.intra_min,
            monitor_across_max: c.across_max,
            monitor_across_min: c.across_min,
        },
        config: cfg.canonical_text(),
    }
    .rounded())
}

/// Runs a whole session in this process and returns Bob's report.
pub fn run_single(cfg: &Config) -> Result<SessionReport, SessionError> {
    let raw = run_session_with(&cfg.link, &cfg.source, &cfg.session_options()).map_err(sim(Phase::Frames))?;
    let n = raw.alice_symbols.len();
    let reveal = decoy_indices(&raw.alice_symbols);
    let phase = Phase::DecoyReveal;
    let bob = sift_bob(&raw.events, n, raw.symbols_per_frame, &reveal).map_err(sim(phase))?;
    let counts = monitor_counts(&raw.events, n, raw.symbols_per_frame, &reveal).map_err(sim(phase))?;
    let mut tally = Tally::new(&raw.events, n as u64, &bob, counts);

    let mut proto = stream_rng(cfg.seed, Stream::Protocol);
    let sample = draw_sample(bob.bits.len(), cfg.qber_sample_fraction, &mut proto).map_err(sim(Phase::QberSample))?;
    let alice = alice_bits_at(&raw.alice_symbols, &bob.symbol_indices).map_err(sim(Phase::QberSample))?;
    tally.disclosed = sample.len() as u64;
    if !sample.is_empty() {
        let a: Vec<bool> = sample.iter().map(|&i| alice[i]).collect();
        let b: Vec<bool> = sample.iter().map(|&i| bob.bits[i]).collect();
        tally.qber = Some(mismatch_rate(&a, &b));
    }
    let pa_seed = proto.next_u64();
    conclude(cfg, &tally, &remove_positions(&bob.bits, &sample), pa_seed)
}

/// Both reports of a networked session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    /// This side's report.
    pub report: SessionReport,
    /// The report the peer sent.
    pub peer_report: SessionReport,
}

/// One end of a connection with phase-aware error mapping.
pub struct Peer<R: Read, W: Write> {
    reader: R,
    writer: W,
}

impl Peer<BufReader<TcpStream>, BufWriter<TcpStream>> {
    pub fn tcp(stream: TcpStream) -> Result<Self, SessionError> {
        let transport = |source| SessionError::Transport {
            phase: Phase::Hello,
            source,
        };
        stream.set_nodelay(true).map_err(transport)?;
        let reader = BufReader::new(stream.try_clone().map_err(transport)?);
        Ok(Self::new(reader, BufWriter::new(stream)))
    }
}

impl<R: Read, W: Write> Peer<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }

    pub fn send(&mut self, phase: Phase, msg: &Message) -> Result<(), SessionError> {
        write_message(&mut self.writer, msg).map_err(|source| SessionError::Transport { phase, source })
    }

    pub fn recv(&mut self, phase: Phase) -> Result<Message, SessionError> {
        read_message(&mut self.reader).map_err(|e| match e {
            RecvError::Io(source) => SessionError::Transport { phase, source },
            RecvError::Decode(source) => SessionError::Decode { phase, source },
        })
    }

    fn expect(&mut self, phase: Phase, expected: MsgType) -> Result<Message, SessionError> {
        let m = self.recv(phase)?;
        if m.msg_type() != expected {
            return Err(SessionError::OutOfOrder {
                phase,
                expected,
                got: m.msg_type(),
            });
        }
        Ok(m)
    }
}

fn check_params(mine: &str, theirs: &str) -> Result<(), SessionError> {
    if mine == theirs {
        return Ok(());
    }
    let diff: Vec<String> = mine
        .lines()
        .zip(theirs.lines())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| format!("local `{a}` vs peer `{b}`"))
        .collect();
    let detail = if diff.is_empty() {
        "configuration texts differ in length".to_string()
    } else {
        diff.join("; ")
    };
    Err(SessionError::Negotiation {
        phase: Phase::Params,
        detail,
    })
}

macro_rules! expect_msg {
    ($peer:expr, $phase:expr, $pat:pat => $out:expr, $ty:expr) => {
        match $peer.expect($phase, $ty)? {
            $pat => $out,
            _ => unreachable!("message type checked"),
        }
    };
}

/// Server side (Bob) of one session over an established connection.
pub fn serve_session<R: Read, W: Write>(peer: &mut Peer<R, W>, cfg: &Config) -> Result<SessionOutcome, SessionError> {
    let mine = cfg.canonical_text();
    let mut proto = stream_rng(cfg.seed, Stream::Protocol);

    let _nonce = expect_msg!(peer, Phase::Hello, Message::Hello { nonce } => nonce, MsgType::Hello);
    peer.send(Phase::Hello, &Message::Hello { nonce: cfg.seed.rotate_left(32) ^ 0x5345_5256 })?;

    let theirs = expect_msg!(peer, Phase::Params, Message::Params { text } => text, MsgType::Params);
    peer.send(Phase::Params, &Message::Params { text: mine.clone() })?;
    check_params(&mine, &theirs)?;

    let phase = Phase::Frames;
    let mut bob = BobStation::new(cfg.link, cfg.source, cfg.attack(), cfg.phi_step_sigma, cfg.seed)
        .map_err(sim(phase))?;
    let blanks = (0..cfg.n_frames)
        .map(|f| bob.emit_blank(f))
        .collect::<Result<Vec<_>, _>>()
        .map_err(sim(phase))?;
    peer.send(phase, &Message::Frames(blanks))?;
    let encoded = expect_msg!(peer, phase, Message::Frames(f) => f, MsgType::Frames);
    if encoded.len() != cfg.n_frames as usize {
        return Err(violation(
            phase,
            format!("{} frames returned, {} sent", encoded.len(), cfg.n_frames),
        ));
    }
    for f in &encoded {
        bob.receive(f).map_err(|e| violation(phase, e.to_string()))?;
    }
    drop(encoded);
    let (events, _, _) = bob.into_parts();

    peer.send(Phase::Detections, &Message::Detections(events.clone()))?;

    let phase = Phase::DecoyReveal;
    let reveal = expect_msg!(peer, phase, Message::DecoyReveal(r) => r, MsgType::DecoyReveal);
    let n = cfg.n_symbols() as usize;
    let spf = cfg.source.symbols_per_frame;
    let sift = sift_bob(&events, n, spf, &reveal).map_err(|e| violation(phase, e.to_string()))?;
    let counts = monitor_counts(&events, n, spf, &reveal).map_err(|e| violation(phase, e.to_string()))?;
    let mut tally = Tally::new(&events, n as u64, &sift, counts);

    let phase = Phase::QberSample;
    let sample = draw_sample(sift.bits.len(), cfg.qber_sample_fraction, &mut proto).map_err(sim(phase))?;
    let indices: Vec<u32> = sample.iter().map(|&i| sift.symbol_indices[i]).collect();
    let bob_bits: Vec<bool> = sample.iter().map(|&i| sift.bits[i]).collect();
    peer.send(
        phase,
        &Message::QberSample {
            indices: indices.clone(),
            bits: bob_bits.clone(),
        },
    )?;
    let (their_idx, alice_bits) = expect_msg!(
        peer, phase, Message::QberSample { indices, bits } => (indices, bits), MsgType::QberSample
    );
    if their_idx != indices {
        return Err(violation(phase, "peer disclosed bits at different positions"));
    }
    tally.disclosed = sample.len() as u64;
    if !sample.is_empty() {
        tally.qber = Some(mismatch_rate(&alice_bits, &bob_bits));
    }

    let phase = Phase::PaSeed;
    let pa_seed = proto.next_u64();
    peer.send(phase, &Message::PaSeed(pa_seed))?;
    let echo = expect_msg!(peer, phase, Message::PaSeed(s) => s, MsgType::PaSeed);
    if echo != pa_seed {
        return Err(violation(phase, format!("seed echo {echo:#x} differs from {pa_seed:#x}")));
    }

    let report = conclude(cfg, &tally, &remove_positions(&sift.bits, &sample), pa_seed)?;
    peer.send(Phase::Report, &Message::Report(report.clone()))?;
    let peer_report = expect_msg!(peer, Phase::Report, Message::Report(r) => r, MsgType::Report);
    Ok(SessionOutcome { report, peer_report })
}

/// Client side (Alice) of one session over an established connection.
pub fn client_session<R: Read, W: Write>(peer: &mut Peer<R, W>, cfg: &Config) -> Result<SessionOutcome, SessionError> {
    let mine = cfg.canonical_text();

    peer.send(Phase::Hello, &Message::Hello { nonce: cfg.seed.rotate_left(32) ^ 0x434c_4e54 })?;
    let _nonce = expect_msg!(peer, Phase::Hello, Message::Hello { nonce } => nonce, MsgType::Hello);

    peer.send(Phase::Params, &Message::Params { text: mine.clone() })?;
    let theirs = expect_msg!(peer, Phase::Params, Message::Params { text } => text, MsgType::Params);
    check_params(&mine, &theirs)?;

    let phase = Phase::Frames;
    let blanks = expect_msg!(peer, phase, Message::Frames(f) => f, MsgType::Frames);
    if blanks.len() != cfg.n_frames as usize {
        return Err(violation(
            phase,
            format!("{} blank frames received, expected {}", blanks.len(), cfg.n_frames),
        ));
    }
    let mut alice = AliceStation::new(cfg.link, cfg.source, SymbolPlan::Random, cfg.seed).map_err(sim(phase))?;
    let encoded = blanks
        .iter()
        .map(|b| alice.encode(b))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| violation(phase, e.to_string()))?;
    drop(blanks);
    peer.send(phase, &Message::Frames(encoded))?;
    let symbols = alice.into_symbols();

    let events = expect_msg!(peer, Phase::Detections, Message::Detections(e) => e, MsgType::Detections);

    let phase = Phase::DecoyReveal;
    let reveal = decoy_indices(&symbols);
    peer.send(phase, &Message::DecoyReveal(reveal.clone()))?;
    let n = symbols.len();
    let spf = cfg.source.symbols_per_frame;
    let sift = sift_bob(&events, n, spf, &reveal).map_err(|e| violation(Phase::Detections, e.to_string()))?;
    let counts = monitor_counts(&events, n, spf, &reveal).map_err(|e| violation(Phase::Detections, e.to_string()))?;
    let mut tally = Tally::new(&events, n as u64, &sift, counts);
    let alice_bits = alice_bits_at(&symbols, &sift.symbol_indices).map_err(sim(phase))?;

    let phase = Phase::QberSample;
    let (indices, bob_bits) = expect_msg!(
        peer, phase, Message::QberSample { indices, bits } => (indices, bits), MsgType::QberSample
    );
    // map symbol indices back to positions in the sifted key
    let mut sample = Vec::with_capacity(indices.len());
    let mut from = 0;
    for &idx in &indices {
        let pos = sift.symbol_indices[from..]
            .binary_search(&idx)
            .map_err(|_| violation(phase, format!("symbol {idx} is not a sifted position in order")))?;
        sample.push(from + pos);
        from += pos + 1;
    }
    let disclosed: Vec<bool> = sample.iter().map(|&i| alice_bits[i]).collect();
    peer.send(
        phase,
        &Message::QberSample {
            indices,
            bits: disclosed.clone(),
        },
    )?;
    tally.disclosed = sample.len() as u64;
    if !sample.is_empty() {
        tally.qber = Some(mismatch_rate(&disclosed, &bob_bits));
    }

    let phase = Phase::PaSeed;
    let pa_seed = expect_msg!(peer, phase, Message::PaSeed(s) => s, MsgType::PaSeed);
    peer.send(phase, &Message::PaSeed(pa_seed))?;

    let report = conclude(cfg, &tally, &remove_positions(&alice_bits, &sample), pa_seed)?;
    let peer_report = expect_msg!(peer, Phase::Report, Message::Report(r) => r, MsgType::Report);
    peer.send(Phase::Report, &Message::Report(report.clone()))?;
    Ok(SessionOutcome { report, peer_report })
}

/// Connects to a server and runs one session as Alice.
pub fn connect<A: ToSocketAddrs>(endpoint: A, cfg: &Config) -> Result<SessionOutcome, SessionError> {
    let stream = TcpStream::connect(endpoint).map_err(|source| SessionError::Transport {
        phase: Phase::Hello,
        source,
    })?;
    client_session(&mut Peer::tcp(stream)?, cfg)
}

/// Accepts `sessions` connections (0 = no limit), each served on its own
/// thread with its own state, and calls `on_done` with every result.
pub fn serve<F>(listener: &TcpListener, cfg: &Config, sessions: usize, on_done: F) -> std::io::Result<()>
where
    F: Fn(Result<SessionOutcome, SessionError>) + Send + Sync + 'static,
{
    let on_done = std::sync::Arc::new(on_done);
    let mut handles = Vec::new();
    let mut accepted = 0usize;
    while sessions == 0 || accepted < sessions {
        let (stream, _) = listener.accept()?;
        accepted += 1;
        let cfg = cfg.clone();
        let on_done = on_done.clone();
        handles.push(thread::spawn(move || {
            let result = Peer::tcp(stream).and_then(|mut p| serve_session(&mut p, &cfg));
            on_done(result);
        }));
        handles.retain(|h| !h.is_finished());
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

/// Serves exactly one session on an already bound listener.
pub fn serve_one(listener: &TcpListener, cfg: &Config) -> Result<SessionOutcome, SessionError> {
    let (stream, _) = listener.accept().map_err(|source| SessionError::Transport {
        phase: Phase::Hello,
        source,
    })?;
    serve_session(&mut Peer::tcp(stream)?, cfg)
}
