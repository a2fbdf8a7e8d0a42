use cowpnp::config::Preset;
use cowpnp::report::{Counters, SessionReport};
use cowpnp::wire::{decode_header, HEADER_LEN, MAGIC, VERSION};
use cowpnp::{decode_message, encode_message, parse_config, Message};
use cowpnp_core::photonic::JonesVector;
use cowpnp_core::stations::{FrameRecord, SlotRecord};
use cowpnp_core::{DetectionEvent, Line};
use num_complex::Complex;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
}

fn frame() -> impl Strategy<Value = FrameRecord> {
    (
        any::<u32>(),
        [finite(), finite(), finite(), finite()],
        prop::collection::vec((any::<u8>(), finite(), finite()), 0..6),
    )
        .prop_map(|(frame_id, p, slots)| FrameRecord {
            frame_id,
            polarization: JonesVector::new(Complex::new(p[0], p[1]), Complex::new(p[2], p[3])),
            slots: slots.into_iter().map(|(bin, mu, phase)| SlotRecord { bin, mu, phase }).collect(),
        })
}

fn event() -> impl Strategy<Value = DetectionEvent> {
    (any::<u32>(), any::<u8>(), any::<bool>()).prop_map(|(frame_id, bin_index, m)| DetectionEvent {
        frame_id,
        bin_index,
        line: if m { Line::Monitor } else { Line::Data },
    })
}

fn report() -> impl Strategy<Value = SessionReport> {
    (
        any::<u64>(),
        any::<u32>(),
        prop::option::of(0.0..1.0f64),
        prop::option::of(-1.0..1.0f64),
        0.0..1.0f64,
        any::<bool>(),
        "[0-9a-f]{0,40}",
        any::<[u64; 5]>(),
    )
        .prop_map(|(seed, n_frames, q, v, r, aborted, hex, c)| {
            SessionReport {
                prng: "xoshiro256++".into(),
                seed,
                n_frames,
                r_sift_mc: r,
                qber_mc: q,
                v_mc: v,
                v_intra_mc: v,
                v_across_mc: None,
                r_sec_model: r * 0.2,
                secret_fraction: 0.2,
                aborted,
                final_key_bits: hex.len() as u64 * 4,
                final_key_hex: hex,
                counters: Counters {
                    symbols: c[0],
                    data_clicks: c[1],
                    monitor_clicks: c[2],
                    sifted_bits: c[3],
                    disclosed_bits: c[4],
                    ..Counters::default()
                },
                config: Preset::Demo.config().canonical_text(),
            }
            .rounded()
        })
}

fn sorted_unique(v: Vec<u32>) -> Vec<u32> {
    let mut v = v;
    v.sort_unstable();
    v.dedup();
    v
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        any::<u64>().prop_map(|nonce| Message::Hello { nonce }),
        ".{0,200}".prop_map(|text| Message::Params { text }),
        prop::collection::vec(frame(), 0..8).prop_map(Message::Frames),
        prop::collection::vec(event(), 0..50).prop_map(Message::Detections),
        prop::collection::vec(any::<u32>(), 0..50).prop_map(|v| Message::DecoyReveal(sorted_unique(v))),
        prop::collection::vec((any::<u32>(), any::<bool>()), 0..70).prop_map(|v| Message::QberSample {
            indices: v.iter().map(|x| x.0).collect(),
            bits: v.iter().map(|x| x.1).collect(),
        }),
        any::<u64>().prop_map(Message::PaSeed),
        report().prop_map(Message::Report),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decode_inverts_encode(m in message()) {
        let bytes = encode_message(&m);
        prop_assert_eq!(&bytes[..4], &MAGIC);
        prop_assert_eq!(bytes[4], VERSION);
        prop_assert_eq!(bytes[5], m.msg_type() as u8);
        let len = u32::from_be_bytes(bytes[6..10].try_into().unwrap()) as usize;
        prop_assert_eq!(len, bytes.len() - HEADER_LEN);
        prop_assert_eq!(decode_message(&bytes).unwrap(), m);
    }

    #[test]
    fn decoder_survives_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_message(&bytes);
        let _ = decode_header(&bytes);
    }

    #[test]
    fn decoder_survives_corrupted_messages(m in message(), flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6)) {
        let mut bytes = encode_message(&m);
        for (i, x) in flips {
            let k = i.index(bytes.len());
            bytes[k] ^= x;
        }
        let _ = decode_message(&bytes);
        let cut = bytes.len() / 2;
        prop_assert!(decode_message(&bytes[..cut]).is_err());
    }

    #[test]
    fn canonical_config_text_round_trips(mu in 0.01..5.0f64, loss in 0.0..50.0f64, seed in any::<u64>(), frames in 1u32..1_000_000) {
        let text = format!("preset = demo\nmu_a = {mu}\nloss_db = {loss}\nseed = {seed}\nn_frames = {frames}\n");
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(parse_config(&cfg.canonical_text()).unwrap(), cfg);
    }
}
