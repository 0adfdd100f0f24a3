use std::path::Path;

use difface::schedule::NoiseSchedule;
use difface::store::{envelope, Checkpoint, CheckpointHeader, Tensor};
use difface::Error;
use proptest::prelude::*;
use serde_json::{json, Value};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE / 3.0),
    ]
}

fn checkpoint() -> impl Strategy<Value = Checkpoint> {
    let tensors = prop::collection::vec(
        (prop::collection::vec(1usize..5, 0..3), prop::collection::vec(finite(), 64)),
        0..4,
    );
    (tensors, prop::collection::vec(finite(), 0..10), "[a-z-]{1,12}").prop_map(|(ts, losses, arch)| {
        let tensors = ts
            .into_iter()
            .enumerate()
            .map(|(i, (shape, pool))| {
                let n: usize = shape.iter().product();
                Tensor::new(&format!("t{i}"), shape, pool[..n].to_vec()).unwrap()
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                arch,
                schedule_fingerprint: Some("ab".repeat(32)),
                config: json!({"width": 8}),
                loss_history: losses,
                meta: Value::Null,
            },
            tensors,
        }
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn envelope_round_trips_floats_bit_exactly(values in prop::collection::vec(finite(), 0..50)) {
        let bytes = envelope::to_bytes("test.values", &values).unwrap();
        let back: Vec<f64> = envelope::from_bytes(Path::new("v"), "test.values", &bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&values));
        let wrong = envelope::from_bytes::<Vec<f64>>(Path::new("v"), "other", &bytes);
        let is_corrupt = matches!(wrong, Err(Error::Corrupt { .. }));
        prop_assert!(is_corrupt);
    }

    #[test]
    fn edited_envelope_body_fails_integrity(values in prop::collection::vec(-1e6f64..1e6, 1..20), delta in 1.0f64..10.0) {
        let bytes = envelope::to_bytes("test.values", &values).unwrap();
        let mut env: Value = serde_json::from_slice(&bytes).unwrap();
        let first = env["body"][0].as_f64().unwrap();
        env["body"][0] = json!(first + delta);
        let edited = serde_json::to_vec(&env).unwrap();
        let res = envelope::from_bytes::<Vec<f64>>(Path::new("v"), "test.values", &edited);
        let is_integrity = matches!(res, Err(Error::Integrity { .. }));
        prop_assert!(is_integrity);
    }

    #[test]
    fn schedule_round_trips(t in 2usize..400, b0 in 1e-5f64..1e-3, ratio in 1.5f64..50.0) {
        let s = NoiseSchedule::linear(t, b0, b0 * ratio).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.json");
        envelope::save_schedule(&path, &s).unwrap();
        let back = envelope::load_schedule(&path).unwrap();
        prop_assert_eq!(back.fingerprint(), s.fingerprint());
        prop_assert_eq!(bits(back.alphas_cum()), bits(s.alphas_cum()));
    }

    #[test]
    fn checkpoint_round_trips(ck in checkpoint()) {
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(Path::new("c"), &bytes).unwrap();
        prop_assert_eq!(&back.header, &ck.header);
        prop_assert_eq!(back.tensors.len(), ck.tensors.len());
        for (a, b) in back.tensors.iter().zip(&ck.tensors) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.shape, &b.shape);
            prop_assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn any_flipped_checkpoint_byte_is_rejected(ck in checkpoint(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = ck.to_bytes().unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(Checkpoint::from_bytes(Path::new("c"), &bytes).is_err());
    }
}
