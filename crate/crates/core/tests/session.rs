use cowpnp_core::adversary::Attack;
use cowpnp_core::distill::{estimate_qber, monitor_counts, sift};
use cowpnp_core::photonic::SourceParams;
use cowpnp_core::rng::{stream_rng, Stream};
use cowpnp_core::security::sift_fraction_with_noise;
use cowpnp_core::stations::{run_session, run_session_with, LinkParams, SessionOptions, SymbolPlan, Symbol};
use cowpnp_core::Line;

fn noiseless() -> LinkParams<f64> {
    LinkParams {
        p_dark: 0.0,
        p_bg: 0.0,
        er_db: 400.0,
        ..LinkParams::paper30km()
    }
}

#[test]
fn noiseless_sifting_is_exact() {
    let src = SourceParams::default();
    let data = run_session(&noiseless(), &src, 50_000, None, 11).unwrap();
    let pair = sift(&data, &data.decoy_indices()).unwrap();
    assert!(pair.len() > 500);
    assert_eq!(pair.error_rate(), Some(0.0));
}

#[test]
fn sessions_are_reproducible() {
    let src = SourceParams::default();
    let p = LinkParams::demo();
    let a = run_session(&p, &src, 5_000, None, 99).unwrap();
    let b = run_session(&p, &src, 5_000, None, 99).unwrap();
    let c = run_session(&p, &src, 5_000, None, 100).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.events, c.events);
}

#[test]
fn sifted_fraction_matches_noise_aware_expectation() {
    let p = LinkParams::paper30km();
    let src = SourceParams::default();
    let n = 200_000u32;
    let data = run_session(&p, &src, n, None, 5).unwrap();
    let pair = sift(&data, &data.decoy_indices()).unwrap();
    let symbols = f64::from(n) * 2.0;
    let frac = pair.len() as f64 / symbols;
    let want = sift_fraction_with_noise(&p);
    let sigma = (want * (1.0 - want) / symbols).sqrt();
    assert!((frac - want).abs() < 4.0 * sigma, "{frac} vs {want} +- {sigma}");
    assert_eq!(data.clicks_on(Line::Monitor), 0);
}

#[test]
fn wrong_decoy_reveal_is_rejected() {
    let src = SourceParams::default();
    let data = run_session(&LinkParams::paper30km(), &src, 1_000, None, 1).unwrap();
    let mut reveal = data.decoy_indices();
    reveal.pop();
    assert!(sift(&data, &reveal).is_err());
}

#[test]
fn qber_estimate_removes_disclosed_bits() {
    let src = SourceParams::default();
    let data = run_session(&LinkParams::paper30km(), &src, 100_000, None, 2).unwrap();
    let mut pair = sift(&data, &data.decoy_indices()).unwrap();
    let n = pair.len();
    let mut rng = stream_rng(2, Stream::Protocol);
    let (q, disclosed) = estimate_qber(&mut pair, 0.1, &mut rng).unwrap();
    assert_eq!(disclosed.len(), (n as f64 * 0.1).ceil() as usize);
    assert_eq!(pair.len(), n - disclosed.len());
    assert!((0.0..0.2).contains(&q));
}

fn decoy_monitor(attack: Option<Attack<f64>>, seed: u64) -> f64 {
    let p = LinkParams {
        tap_data: 0.0,
        p_dark: 0.0,
        p_bg: 0.0,
        loss_db: 0.0,
        ..LinkParams::paper30km()
    };
    let src = SourceParams::default();
    let opts = SessionOptions {
        attack,
        symbols: SymbolPlan::Fixed(vec![Symbol::Decoy, Symbol::Decoy]),
        ..SessionOptions::new(100_000, seed)
    };
    let data = run_session_with(&p, &src, &opts).unwrap();
    let c = monitor_counts(&data.events, data.alice_symbols.len(), 2, &data.decoy_indices()).unwrap();
    c.intra().unwrap().v
}

#[test]
fn pair_decoherence_lowers_visibility_proportionally() {
    let v0 = decoy_monitor(None, 3);
    let v_half = decoy_monitor(Some(Attack::PairDecohere { p_attack: 0.5 }), 3);
    assert!((v0 - 0.95).abs() < 0.02, "{v0}");
    assert!((v_half - 0.5 * v0).abs() < 0.03, "{v_half}");
}
