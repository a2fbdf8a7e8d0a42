//! Session reports and their JSON/CSV forms.

use std::fmt::Write as _;
use std::str::FromStr;

use cowpnp_core::RateResult;
use serde::{Deserialize, Serialize};

/// Rounds to 6 significant digits. Reports store rounded values so that
/// every serialization of them is exact.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub symbols: u64,
    pub data_clicks: u64,
    pub monitor_clicks: u64,
    pub sifted_bits: u64,
    pub disclosed_bits: u64,
    /// Decoy-pair monitor clicks, constructive and destructive setting.
    pub monitor_intra_max: u64,
    pub monitor_intra_min: u64,
    pub monitor_across_max: u64,
    pub monitor_across_min: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub prng: String,
    pub seed: u64,
    pub n_frames: u32,
    /// Sifted bits per emitted symbol.
    pub r_sift_mc: f64,
    /// Mismatch rate of the disclosed sample; absent when nothing was sifted.
    pub qber_mc: Option<f64>,
    /// Pooled monitor visibility; absent without decoy-pair monitor clicks.
    pub v_mc: Option<f64>,
    pub v_intra_mc: Option<f64>,
    pub v_across_mc: Option<f64>,
    /// Analytic sifted rate times the secret fraction at the measured Q and V.
    pub r_sec_model: f64,
    pub secret_fraction: f64,
    pub aborted: bool,
    pub final_key_bits: u64,
    pub final_key_hex: String,
    pub counters: Counters,
    /// Canonical text of the configuration that produced the report.
    pub config: String,
}

impl SessionReport {
    /// Applies [`round6`] to every real-valued field.
    pub fn rounded(mut self) -> Self {
        let opt = |x: Option<f64>| x.map(round6);
        self.r_sift_mc = round6(self.r_sift_mc);
        self.qber_mc = opt(self.qber_mc);
        self.v_mc = opt(self.v_mc);
        self.v_intra_mc = opt(self.v_intra_mc);
        self.v_across_mc = opt(self.v_across_mc);
        self.r_sec_model = round6(self.r_sec_model);
        self.secret_fraction = round6(self.secret_fraction);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown report format `{other}` (json or csv)")),
        }
    }
}

fn opt_cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Quotes a CSV cell when it needs it.
fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn emit_report(report: &SessionReport, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut s = report.to_json();
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let c = &report.counters;
            let header = "prng,seed,n_frames,r_sift_mc,qber_mc,v_mc,v_intra_mc,v_across_mc,r_sec_model,\
                          secret_fraction,aborted,final_key_bits,final_key_hex,symbols,data_clicks,\
                          monitor_clicks,sifted_bits,disclosed_bits,monitor_intra_max,monitor_intra_min,\
                          monitor_across_max,monitor_across_min,config";
            let row = [
                csv_cell(&report.prng),
                report.seed.to_string(),
                report.n_frames.to_string(),
                round6(report.r_sift_mc).to_string(),
                opt_cell(report.qber_mc.map(round6)),
                opt_cell(report.v_mc.map(round6)),
                opt_cell(report.v_intra_mc.map(round6)),
                opt_cell(report.v_across_mc.map(round6)),
                round6(report.r_sec_model).to_string(),
                round6(report.secret_fraction).to_string(),
                report.aborted.to_string(),
                report.final_key_bits.to_string(),
                report.final_key_hex.clone(),
                c.symbols.to_string(),
                c.data_clicks.to_string(),
                c.monitor_clicks.to_string(),
                c.sifted_bits.to_string(),
                c.disclosed_bits.to_string(),
                c.monitor_intra_max.to_string(),
                c.monitor_intra_min.to_string(),
                c.monitor_across_max.to_string(),
                c.monitor_across_min.to_string(),
                csv_cell(&report.config.trim_end().replace('\n', "; ")),
            ]
            .join(",");
            format!("{header}\n{row}\n").into_bytes()
        }
    }
}

/// One row of a distance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length_km: f64,
    pub loss_db: f64,
    pub t: f64,
    pub mu_a: f64,
    pub q_used: f64,
    pub v_used: f64,
    pub r_sift: f64,
    pub secret_fraction: f64,
    pub r_sec: f64,
}

impl SweepRow {
    pub fn new(length_km: f64, r: &RateResult) -> Self {
        Self {
            length_km: round6(length_km),
            loss_db: round6(r.loss_db),
            t: round6(r.t),
            mu_a: round6(r.mu_a),
            q_used: round6(r.q_used),
            v_used: round6(r.v_used),
            r_sift: round6(r.r_sift),
            secret_fraction: round6(r.secret_fraction),
            r_sec: round6(r.r_sec),
        }
    }
}

pub fn emit_sweep(rows: &[SweepRow], format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut s = String::from("length_km,loss_db,t,mu_a,q_used,v_used,r_sift,secret_fraction,r_sec\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    r.length_km, r.loss_db, r.t, r.mu_a, r.q_used, r.v_used, r.r_sift, r.secret_fraction, r.r_sec
                );
            }
            s.into_bytes()
        }
    }
}

/// Result of the intensity optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumRow {
    pub loss_db: f64,
    pub q_used: f64,
    pub mu_opt: f64,
    pub r_sec_opt: f64,
    pub r_sec_at_config_mu: f64,
}

pub fn emit_optimum(row: &OptimumRow, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(row).expect("row serializes");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => format!(
            "loss_db,q_used,mu_opt,r_sec_opt,r_sec_at_config_mu\n{},{},{},{},{}\n",
            row.loss_db, row.q_used, row.mu_opt, row.r_sec_opt, row.r_sec_at_config_mu
        )
        .into_bytes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SessionReport {
        SessionReport {
            prng: "x".into(),
            seed: 7,
            n_frames: 10,
            r_sift_mc: 0.00893412345,
            qber_mc: Some(0.0612345678),
            v_mc: None,
            v_intra_mc: None,
            v_across_mc: Some(0.93),
            r_sec_model: 1.8e-3,
            secret_fraction: 0.2,
            aborted: false,
            final_key_bits: 12,
            final_key_hex: "abc0".into(),
            counters: Counters::default(),
            config: "preset = paper30km\nseed = 7\n".into(),
        }
        .rounded()
    }

    #[test]
    fn round6_keeps_six_digits() {
        assert_eq!(round6(0.00893412345), 0.00893412);
        assert_eq!(round6(123456789.0), 123457000.0);
        assert_eq!(round6(0.0), 0.0);
        assert_eq!(round6(-1.0000004), -1.0);
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let r = sample();
        let bytes = emit_report(&r, Format::Json);
        assert_eq!(bytes, emit_report(&r, Format::Json));
        let back = SessionReport::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(back, r);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.find("\"prng\"").unwrap() < text.find("\"seed\"").unwrap());
        assert!(text.contains("0.00893412"));
    }

    #[test]
    fn csv_has_header_and_row() {
        let text = String::from_utf8(emit_report(&sample(), Format::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("prng,seed"));
        assert!(lines[1].ends_with(",preset = paper30km; seed = 7"), "{}", lines[1]);
        assert!("xml".parse::<Format>().is_err());
    }
}
