//! `key = value` configuration files.
//!
//! A file starts from a preset (`paper30km` unless `preset = ...` says
//! otherwise) and overrides individual keys. Every value is range-checked
//! when it is read.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use cowpnp_core::adversary::AttackKind;
use cowpnp_core::stations::{SessionOptions, SymbolPlan};
use cowpnp_core::{Attack, LinkParams, SourceParams};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("{key}: cannot parse `{value}` as {expected}")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{key} = {value} is out of range, must be in {bounds}")]
    Range { key: String, value: String, bounds: String },
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Paper30km,
    Demo,
    /// `demo` with a random-walk phase drift on the link.
    Drifting,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Paper30km, Preset::Demo, Preset::Drifting];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper30km => "paper30km",
            Preset::Demo => "demo",
            Preset::Drifting => "drifting",
        }
    }

    pub fn config(self) -> Config {
        let base = Config {
            preset: self,
            link: LinkParams::paper30km(),
            source: SourceParams::default(),
            n_frames: 100_000,
            seed: 1,
            attack_kind: None,
            attack_strength: 0.0,
            mode: Mode::Single,
            abort_v_min: 0.85,
            phi_step_sigma: 0.0,
            qber_sample_fraction: 0.1,
            q_op: 0.06,
        };
        match self {
            Preset::Paper30km => base,
            Preset::Demo => Config {
                link: LinkParams::demo(),
                ..base
            },
            Preset::Drifting => Config {
                link: LinkParams::demo(),
                phi_step_sigma: 0.05,
                ..base
            },
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown preset `{s}` (known: paper30km, demo, drifting)"))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Single,
    Serve,
    Connect,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Serve => "serve",
            Mode::Connect => "connect",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Mode::Single),
            "serve" => Ok(Mode::Serve),
            "connect" => Ok(Mode::Connect),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub preset: Preset,
    pub link: LinkParams,
    pub source: SourceParams,
    pub n_frames: u32,
    pub seed: u64,
    pub attack_kind: Option<AttackKind>,
    /// Beam-split fraction, or per-frame attack probability.
    pub attack_strength: f64,
    pub mode: Mode,
    /// Sessions whose measured visibility falls below this abort.
    pub abort_v_min: f64,
    /// Standard deviation of the per-frame link phase step (rad).
    pub phi_step_sigma: f64,
    pub qber_sample_fraction: f64,
    /// Operating QBER for the analytic `sweep` and `optimize` commands.
    pub q_op: f64,
}

impl Default for Config {
    fn default() -> Self {
        Preset::Paper30km.config()
    }
}

impl Config {
    pub fn attack(&self) -> Option<Attack> {
        let s = self.attack_strength;
        self.attack_kind.map(|k| match k {
            AttackKind::BeamSplit => Attack::BeamSplit { fraction: s },
            AttackKind::InterceptResend => Attack::intercept_resend_calibrated(s, self.link.mu_a),
            AttackKind::PairDecohere => Attack::PairDecohere { p_attack: s },
        })
    }

    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            attack: self.attack(),
            symbols: SymbolPlan::Random,
            phi_step_sigma: self.phi_step_sigma,
            ..SessionOptions::new(self.n_frames, self.seed)
        }
    }

    pub fn n_symbols(&self) -> u64 {
        u64::from(self.n_frames) * u64::from(self.source.symbols_per_frame)
    }

    /// Every key except `mode`, one per line, in a fixed order. Parsing the
    /// text gives back the same configuration; two peers agree on a session
    /// when their texts are equal.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let l = &self.link;
        let src = &self.source;
        let f = |x: f64| format!("{x:?}");
        vec![
            ("preset", self.preset.to_string()),
            ("mu_a", f(l.mu_a)),
            ("loss_db", f(l.loss_db)),
            ("eta_det", f(l.eta_det)),
            ("p_dark", f(l.p_dark)),
            ("p_bg", f(l.p_bg)),
            ("er_db", f(l.er_db)),
            ("f_key", f(l.f_key)),
            ("tap_data", f(l.tap_data)),
            ("v_intra", f(l.v_intra)),
            ("v_across", f(l.v_across)),
            ("fiber_db_per_km", f(l.fiber_db_per_km)),
            ("pulse_width_ps", f(src.pulse_width_ps)),
            ("pair_separation_ns", f(src.pair_separation_ns)),
            ("frame_rate_hz", f(src.frame_rate_hz)),
            ("window_ns", f(src.window_ns)),
            ("symbols_per_frame", src.symbols_per_frame.to_string()),
            ("n_frames", self.n_frames.to_string()),
            ("seed", self.seed.to_string()),
            ("attack_kind", self.attack_kind.map_or("none", AttackKind::as_str).to_string()),
            ("attack_strength", f(self.attack_strength)),
            ("abort_v_min", f(self.abort_v_min)),
            ("phi_step_sigma", f(self.phi_step_sigma)),
            ("qber_sample_fraction", f(self.qber_sample_fraction)),
            ("q_op", f(self.q_op)),
        ]
    }

    /// Sets one key from its textual value, with range checking.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let l = &mut self.link;
        let s = &mut self.source;
        match key {
            "preset" => {
                let p: Preset = parse_with(key, value, "a preset name")?;
                *self = Config { mode: self.mode, ..p.config() };
            }
            "mu_a" => l.mu_a = real(key, value, Lo::Open(0.0), Hi::Closed(100.0))?,
            "loss_db" => l.loss_db = real(key, value, Lo::Closed(0.0), Hi::Closed(200.0))?,
            "eta_det" => l.eta_det = real(key, value, Lo::Open(0.0), Hi::Closed(1.0))?,
            "p_dark" => l.p_dark = real(key, value, Lo::Closed(0.0), Hi::Open(1.0))?,
            "p_bg" => l.p_bg = real(key, value, Lo::Closed(0.0), Hi::Open(1.0))?,
            "er_db" => l.er_db = real(key, value, Lo::Open(0.0), Hi::Closed(200.0))?,
            "f_key" => l.f_key = real(key, value, Lo::Closed(0.0), Hi::Closed(1.0))?,
            "tap_data" => l.tap_data = real(key, value, Lo::Closed(0.0), Hi::Closed(1.0))?,
            "v_intra" => l.v_intra = real(key, value, Lo::Closed(0.0), Hi::Closed(1.0))?,
            "v_across" => l.v_across = real(key, value, Lo::Closed(0.0), Hi::Closed(1.0))?,
            "fiber_db_per_km" => l.fiber_db_per_km = real(key, value, Lo::Open(0.0), Hi::Closed(10.0))?,
            "pulse_width_ps" => s.pulse_width_ps = real(key, value, Lo::Open(0.0), Hi::Closed(1e6))?,
            "pair_separation_ns" => s.pair_separation_ns = real(key, value, Lo::Open(0.0), Hi::Closed(1e6))?,
            "frame_rate_hz" => s.frame_rate_hz = real(key, value, Lo::Open(0.0), Hi::Closed(1e12))?,
            "window_ns" => s.window_ns = real(key, value, Lo::Open(0.0), Hi::Closed(1e6))?,
            "symbols_per_frame" => s.symbols_per_frame = integer(key, value, 1, 64)? as u32,
            "n_frames" => self.n_frames = integer(key, value, 1, 1 << 31)? as u32,
            "seed" => self.seed = parse_with(key, value, "an unsigned 64-bit integer")?,
            "attack_kind" => {
                self.attack_kind = match value {
                    "none" => None,
                    v => Some(parse_with(key, v, "none, beam_split, intercept_resend or pair_decohere")?),
                }
            }
            "attack_strength" => self.attack_strength = real(key, value, Lo::Closed(0.0), Hi::Closed(1.0))?,
            "mode" => self.mode = parse_with(key, value, "single, serve or connect")?,
            "abort_v_min" => self.abort_v_min = real(key, value, Lo::Closed(0.0), Hi::Closed(1.0))?,
            "phi_step_sigma" => self.phi_step_sigma = real(key, value, Lo::Closed(0.0), Hi::Closed(10.0))?,
            "qber_sample_fraction" => {
                self.qber_sample_fraction = real(key, value, Lo::Open(0.0), Hi::Closed(1.0))?
            }
            "q_op" => self.q_op = real(key, value, Lo::Closed(0.0), Hi::Closed(0.5))?,
            other => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Checks constraints that involve more than one key.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.n_symbols() > u64::from(u32::MAX) {
            return Err(ConfigError::Inconsistent(format!(
                "n_frames * symbols_per_frame = {} exceeds {}",
                self.n_symbols(),
                u32::MAX
            )));
        }
        if self.attack_kind == Some(AttackKind::BeamSplit) && self.attack_strength >= 1.0 {
            return Err(ConfigError::Range {
                key: "attack_strength".into(),
                value: format!("{:?}", self.attack_strength),
                bounds: "[0, 1) for beam_split".into(),
            });
        }
        self.link
            .validate()
            .and_then(|_| self.source.validate())
            .map_err(|e| ConfigError::Inconsistent(e.to_string()))
    }
}

/// Parses a configuration file on top of the `paper30km` preset.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    parse_config_with(text, None)
}

/// Like [`parse_config`]; `preset`, when given, replaces any `preset` line
/// in the file.
pub fn parse_config_with(text: &str, preset: Option<Preset>) -> Result<Config, ConfigError> {
    let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: body.to_string(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: body.to_string(),
            });
        }
        if pairs.iter().any(|(_, seen, _)| *seen == k) {
            return Err(ConfigError::Duplicate { line, key: k.into() });
        }
        pairs.push((line, k, v));
    }

    let mut cfg = Config::default();
    // the preset comes first so that the other lines override it
    match preset {
        Some(p) => cfg = p.config(),
        None => {
            if let Some((_, k, v)) = pairs.iter().find(|(_, k, _)| *k == "preset") {
                cfg.set(k, v)?;
            }
        }
    }
    for (line, k, v) in pairs.into_iter().filter(|(_, k, _)| *k != "preset") {
        cfg.set(k, v).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
            e => e,
        })?;
    }
    cfg.check()?;
    Ok(cfg)
}

#[derive(Clone, Copy)]
enum Lo {
    Open(f64),
    Closed(f64),
}

#[derive(Clone, Copy)]
enum Hi {
    Open(f64),
    Closed(f64),
}

fn bounds_text(lo: Lo, hi: Hi) -> String {
    let (l, a) = match lo {
        Lo::Open(a) => ('(', a),
        Lo::Closed(a) => ('[', a),
    };
    let (r, b) = match hi {
        Hi::Open(b) => (')', b),
        Hi::Closed(b) => (']', b),
    };
    format!("{l}{a}, {b}{r}")
}

fn parse_with<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn real(key: &str, value: &str, lo: Lo, hi: Hi) -> Result<f64, ConfigError> {
    let x: f64 = parse_with(key, value, "a real number")?;
    let above = match lo {
        Lo::Open(a) => x > a,
        Lo::Closed(a) => x >= a,
    };
    let below = match hi {
        Hi::Open(b) => x < b,
        Hi::Closed(b) => x <= b,
    };
    if above && below {
        Ok(x)
    } else {
        Err(ConfigError::Range {
            key: key.into(),
            value: value.into(),
            bounds: bounds_text(lo, hi),
        })
    }
}

fn integer(key: &str, value: &str, lo: u64, hi: u64) -> Result<u64, ConfigError> {
    let x: u64 = match value.parse() {
        Ok(x) => x,
        // a negative integer is a range problem, not a syntax one
        Err(_) if value.parse::<i64>().is_ok() => u64::MAX,
        Err(_) => return Err(parse_with::<u64>(key, value, "a non-negative integer").unwrap_err()),
    };
    if (lo..=hi).contains(&x) {
        Ok(x)
    } else {
        Err(ConfigError::Range {
            key: key.into(),
            value: value.into(),
            bounds: format!("[{lo}, {hi}]"),
        })
    }
}
