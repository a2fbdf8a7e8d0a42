//! Classical post-processing: sifting, QBER and visibility estimation,
//! Toeplitz privacy amplification.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::stations::{monitor_setting, DetectionEvent, Line, RawSessionData, Symbol};
use crate::{Error, Result};

/// Alice's and Bob's raw key bits at the symbols Bob kept.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SiftedKeyPair {
    pub alice_bits: Vec<bool>,
    pub bob_bits: Vec<bool>,
    pub symbol_indices: Vec<u32>,
}

impl SiftedKeyPair {
    pub fn len(&self) -> usize {
        self.symbol_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbol_indices.is_empty()
    }

    /// Mismatch rate over the whole pair.
    pub fn error_rate(&self) -> Option<f64> {
        (!self.is_empty()).then(|| mismatch_rate(&self.alice_bits, &self.bob_bits))
    }
}

/// Bob's half of sifting, computable from his clicks and Alice's decoy
/// announcement alone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BobSift {
    pub symbol_indices: Vec<u32>,
    pub bits: Vec<bool>,
}

pub fn validate_reveal(reveal: &[u32], n_symbols: usize) -> Result<()> {
    if reveal.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Protocol("decoy reveal must be strictly increasing".into()));
    }
    if let Some(&last) = reveal.last() {
        if last as usize >= n_symbols {
            return Err(Error::Protocol(format!(
                "decoy index {last} out of range for {n_symbols} symbols"
            )));
        }
    }
    Ok(())
}

/// Keeps single data-line clicks on non-decoy symbols: early bin reads 0,
/// late bin reads 1, both bins discard the symbol.
pub fn sift_bob(
    events: &[DetectionEvent],
    n_symbols: usize,
    symbols_per_frame: u32,
    reveal_decoys: &[u32],
) -> Result<BobSift> {
    validate_reveal(reveal_decoys, n_symbols)?;
    let spf = symbols_per_frame as usize;
    // bit 0: early click, bit 1: late click
    let mut hits = vec![0u8; n_symbols];
    for e in events.iter().filter(|e| e.line == Line::Data) {
        let idx = e.frame_id as usize * spf + usize::from(e.bin_index) / 2;
        let slot = hits.get_mut(idx).ok_or_else(|| {
            Error::Protocol(format!("click in frame {} bin {} outside the session", e.frame_id, e.bin_index))
        })?;
        *slot |= 1 << (e.bin_index % 2);
    }
    for &d in reveal_decoys {
        hits[d as usize] = 0;
    }
    let mut out = BobSift::default();
    for (i, h) in hits.iter().enumerate() {
        match h {
            1 => {
                out.symbol_indices.push(i as u32);
                out.bits.push(false);
            }
            2 => {
                out.symbol_indices.push(i as u32);
                out.bits.push(true);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Alice's bits at the kept indices.
pub fn alice_bits_at(symbols: &[Symbol], indices: &[u32]) -> Result<Vec<bool>> {
    indices
        .iter()
        .map(|&i| {
            symbols
                .get(i as usize)
                .and_then(|s| s.bit())
                .ok_or_else(|| Error::Protocol(format!("symbol {i} is not a key symbol")))
        })
        .collect()
}

pub fn sift(data: &RawSessionData, reveal_decoys: &[u32]) -> Result<SiftedKeyPair> {
    let n = data.alice_symbols.len();
    validate_reveal(reveal_decoys, n)?;
    if reveal_decoys != data.decoy_indices().as_slice() {
        return Err(Error::Protocol("decoy reveal does not match the emitted decoys".into()));
    }
    let bob = sift_bob(&data.events, n, data.symbols_per_frame, reveal_decoys)?;
    let alice_bits = alice_bits_at(&data.alice_symbols, &bob.symbol_indices)?;
    Ok(SiftedKeyPair {
        alice_bits,
        bob_bits: bob.bits,
        symbol_indices: bob.symbol_indices,
    })
}

pub fn mismatch_rate(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / n as f64
}

/// Sorted positions of a uniform random sample of `ceil(fraction * n)` bits.
pub fn choose_sample<R: Rng + ?Sized>(n: usize, sample_fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::param(
            "sample_fraction",
            format!("must be in (0, 1], got {sample_fraction}"),
        ));
    }
    if n == 0 {
        return Err(Error::Estimation("cannot sample an empty key".into()));
    }
    let k = ((n as f64 * sample_fraction).ceil() as usize).clamp(1, n);
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Removes the given sorted positions from `bits`.
pub fn remove_positions<T: Copy>(bits: &[T], sorted_positions: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(bits.len().saturating_sub(sorted_positions.len()));
    let mut drop = sorted_positions.iter().peekable();
    for (i, &b) in bits.iter().enumerate() {
        if drop.peek() == Some(&&i) {
            drop.next();
        } else {
            out.push(b);
        }
    }
    out
}

/// Discloses a random sample, returns its mismatch rate and the disclosed
/// positions, and strips those bits from `pair`.
pub fn estimate_qber<R: Rng + ?Sized>(
    pair: &mut SiftedKeyPair,
    sample_fraction: f64,
    rng: &mut R,
) -> Result<(f64, Vec<usize>)> {
    let disclosed = choose_sample(pair.len(), sample_fraction, rng)?;
    let a: Vec<bool> = disclosed.iter().map(|&i| pair.alice_bits[i]).collect();
    let b: Vec<bool> = disclosed.iter().map(|&i| pair.bob_bits[i]).collect();
    let q = mismatch_rate(&a, &b);
    pair.alice_bits = remove_positions(&pair.alice_bits, &disclosed);
    pair.bob_bits = remove_positions(&pair.bob_bits, &disclosed);
    pair.symbol_indices = remove_positions(&pair.symbol_indices, &disclosed);
    Ok((q, disclosed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VisibilityKind {
    IntraBit,
    AcrossBit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityEstimate {
    pub v: f64,
    pub n_max: u64,
    pub n_min: u64,
    pub kind: VisibilityKind,
}

pub fn estimate_visibility(n_max: u64, n_min: u64, kind: VisibilityKind) -> Result<VisibilityEstimate> {
    let total = n_max + n_min;
    if total == 0 {
        return Err(Error::Estimation("no monitor counts".into()));
    }
    Ok(VisibilityEstimate {
        v: (n_max as f64 - n_min as f64) / total as f64,
        n_max,
        n_min,
        kind,
    })
}

/// Interference-bin counts on the monitoring line, split by setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MonitorCounts {
    pub intra_max: u64,
    pub intra_min: u64,
    pub across_max: u64,
    pub across_min: u64,
}

impl MonitorCounts {
    pub fn intra(&self) -> Result<VisibilityEstimate> {
        estimate_visibility(self.intra_max, self.intra_min, VisibilityKind::IntraBit)
    }

    pub fn across(&self) -> Result<VisibilityEstimate> {
        estimate_visibility(self.across_max, self.across_min, VisibilityKind::AcrossBit)
    }

    /// Intra and across counts pooled.
    pub fn pooled(&self) -> Option<f64> {
        let max = self.intra_max + self.across_max;
        let min = self.intra_min + self.across_min;
        (max + min > 0).then(|| (max as f64 - min as f64) / (max + min) as f64)
    }
}

/// Counts monitor clicks in interference bins whose two pulses both belong
/// to revealed decoys. Monitor bin `k` mixes pulses `k-1` and `k`: odd `k`
/// is within one symbol, even `k` spans two neighbours. Frames with setting
/// 0 give the constructive count, frames with setting pi the destructive.
pub fn monitor_counts(
    events: &[DetectionEvent],
    n_symbols: usize,
    symbols_per_frame: u32,
    reveal_decoys: &[u32],
) -> Result<MonitorCounts> {
    validate_reveal(reveal_decoys, n_symbols)?;
    let mut decoy = vec![false; n_symbols];
    for &d in reveal_decoys {
        decoy[d as usize] = true;
    }
    let spf = symbols_per_frame as usize;
    let mut c = MonitorCounts::default();
    for e in events.iter().filter(|e| e.line == Line::Monitor) {
        let k = usize::from(e.bin_index);
        if k == 0 || k >= 2 * spf {
            continue;
        }
        let base = e.frame_id as usize * spf;
        let (left, right) = (base + (k - 1) / 2, base + k / 2);
        if right >= n_symbols {
            return Err(Error::Protocol(format!("monitor click in frame {} outside the session", e.frame_id)));
        }
        if !(decoy[left] && decoy[right]) {
            continue;
        }
        let constructive = monitor_setting(e.frame_id) == 0.0;
        match (k % 2 == 1, constructive) {
            (true, true) => c.intra_max += 1,
            (true, false) => c.intra_min += 1,
            (false, true) => c.across_max += 1,
            (false, false) => c.across_min += 1,
        }
    }
    Ok(c)
}

/// Multiplies `bits` by a binary Toeplitz matrix of `out_len` rows over
/// GF(2). The matrix diagonals are `out_len + n - 1` bits drawn from
/// xoshiro256++ seeded with `pa_seed`; entry `(i, j)` is diagonal
/// `i + n - 1 - j`.
pub fn privacy_amplify(bits: &[bool], out_len: usize, pa_seed: u64) -> Result<Vec<bool>> {
    let n = bits.len();
    if out_len == 0 || out_len > n {
        return Err(Error::param(
            "out_len",
            format!("must be in [1, {n}], got {out_len}"),
        ));
    }
    let diag_len = out_len + n - 1;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(pa_seed);
    let diag: Vec<u64> = (0..diag_len.div_ceil(64) + 1).map(|_| rng.next_u64()).collect();
    // reversed input so that row i is a plain AND with diag[i .. i + n]
    let mut rev = vec![0u64; n.div_ceil(64)];
    for (k, &b) in bits.iter().rev().enumerate() {
        if b {
            rev[k / 64] |= 1 << (k % 64);
        }
    }
    let last_mask = if n % 64 == 0 { u64::MAX } else { (1u64 << (n % 64)) - 1 };
    let words = rev.len();
    Ok((0..out_len)
        .map(|i| {
            let (w0, sh) = (i / 64, i % 64);
            let mut acc = 0u32;
            for (w, &r) in rev.iter().enumerate() {
                let lo = diag[w0 + w] >> sh;
                let hi = if sh == 0 { 0 } else { diag[w0 + w + 1] << (64 - sh) };
                let mut window = lo | hi;
                if w + 1 == words {
                    window &= last_mask;
                }
                acc += (window & r).count_ones();
            }
            acc % 2 == 1
        })
        .collect())
}

/// Final key length with ideal error correction.
pub fn final_key_length(n_bits: usize, secret_fraction: f64) -> usize {
    if secret_fraction <= 0.0 {
        return 0;
    }
    (n_bits as f64 * secret_fraction.min(1.0)).floor() as usize
}

pub fn bits_to_hex(bits: &[bool]) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))))
        .collect();
    hex::encode(bytes)
}
