mod common;

use std::path::PathBuf;

use bikd::autograd::Tensor;
use bikd::models::{build_model, decode_checkpoint, encode_checkpoint, ModelConfig};
use bikd::Error;
use proptest::prelude::*;

fn reference() -> ModelConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/models/reference.toml");
    ModelConfig::load(path).unwrap()
}

#[test]
fn reference_parameter_count_by_hand() {
    // conv 4 -> 8, k 7; conv 8 -> 8, k 5; dense 8 -> 2
    let want = (8 * 4 * 7 + 8) + (8 * 8 * 5 + 8) + (8 * 2 + 2);
    assert_eq!(reference().parameter_count().unwrap(), want);
    let m = build_model(&reference(), 0).unwrap();
    assert_eq!(m.params().iter().map(Tensor::numel).sum::<usize>(), want);
}

/// Frozen output of the reference network with init seed 42 on a fixed ramp
/// input. Guards against accidental changes to initialization or forward.
#[test]
fn reference_logits_golden() {
    let cfg = reference();
    let m = build_model(&cfg, 42).unwrap();
    let n = cfg.input_channels * cfg.input_len;
    let x = Tensor::new(
        vec![1, cfg.input_channels, cfg.input_len],
        (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect(),
    )
    .unwrap();
    let logits = m.logits(&x).unwrap();
    let golden = GOLDEN;
    for (a, b) in logits.data().iter().zip(golden) {
        assert!((a - b).abs() < 1e-12, "{:?} vs {golden:?}", logits.data());
    }
}

const GOLDEN: [f64; 2] = [0.4376370480021478, -0.6596978975370447];

fn stack() -> impl Strategy<Value = ModelConfig> {
    (1usize..4, 8usize..40, 1usize..5, 1usize..4, 1usize..3, any::<bool>()).prop_map(|(c, len, out, k, s, relu)| {
        let relu = if relu { "[[layers]]\nkind = \"relu\"\ntap = true\n" } else { "" };
        ModelConfig::from_toml_str(&format!(
            "name = \"p\"\ninput_channels = {c}\ninput_len = {len}\nclasses = 2\n\
             [[layers]]\nkind = \"conv1d\"\nout_channels = {out}\nkernel = {k}\nstride = {s}\ntap = true\n\
             {relu}[[layers]]\nkind = \"flatten\"\n[[layers]]\nkind = \"dense\"\nout_features = 2\n"
        ))
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pool_and_customized_share_layer_signatures(cfg in stack(), a in 0u64..1000, b in 0u64..1000) {
        let p = build_model(&cfg, a).unwrap();
        let c = build_model(&cfg, b).unwrap();
        prop_assert_eq!(p.layer_signature(), c.layer_signature());
        prop_assert_eq!(p.tap_names(), c.tap_names());
        let cloned = p.clone_architecture(b).unwrap();
        prop_assert_eq!(cloned.layer_signature(), p.layer_signature());
    }

    #[test]
    fn checkpoint_round_trip_preserves_bits(cfg in stack(), seed in 0u64..1000) {
        let m = build_model(&cfg, seed).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        for (x, y) in m.params().iter().zip(back.params()) {
            prop_assert_eq!(x.shape(), y.shape());
            prop_assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        prop_assert_eq!(back.config(), m.config());
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn any_flipped_byte_is_rejected(seed in 0u64..50, at in 0usize..10_000, bit in 0u8..8) {
        let m = build_model(&common::toy_model_config(), seed).unwrap();
        let mut bytes = encode_checkpoint(&m).unwrap();
        let i = at % bytes.len();
        bytes[i] ^= 1 << bit;
        prop_assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }
}
