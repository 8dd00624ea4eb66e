mod common;

use common::*;
use geode::decoder::{load_decoder, Activation, AnalyticDecoder, Decoder, DecoderModel};
use geode::metric::jacobian_fd;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn batch_matches_looped_forward_bit_for_bit() {
    let model = random_mlp(4, 16, 6, 1);
    let zs = cloud(100, 4, -3.0, 3.0, 2);
    let batch = model.forward_batch(&zs).unwrap();
    let looped: Vec<Vec<f64>> = zs.iter().map(|z| model.forward(z).unwrap()).collect();
    assert_eq!(batch, looped);
    assert!(model.forward_batch(&[]).unwrap().is_empty());
}

#[test]
fn forward_is_deterministic() {
    let model = random_mlp(3, 32, 5, 3);
    for z in cloud(20, 3, -2.0, 2.0, 4) {
        let a = model.forward(&z).unwrap();
        let b = model.forward(&z).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn batch_rejects_wrong_row_width() {
    let model = random_mlp(2, 4, 3, 5);
    let err = model
        .forward_batch(&[vec![0.0, 0.0], vec![1.0]])
        .unwrap_err();
    assert!(err.to_string().contains("row 1"), "{err}");
}

#[test]
fn analytic_jacobians_match_central_differences() {
    let mut r = rng(6);
    for (name, dec) in analytic_decoders() {
        for _ in 0..100 {
            let z = vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
            let fd = jacobian_fd(&dec, &z, 1e-5).unwrap();
            let exact = oracle_jacobian(name, &dec, &z);
            let rel = frobenius(&(&fd - &exact)) / frobenius(&exact);
            assert!(rel < 1e-6, "{name} at {z:?}: {rel}");
            assert_eq!(dec.exact_jacobian(&z).unwrap(), exact);
        }
    }
}

#[test]
fn saved_model_reloads_through_format_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decoder.json");
    let model = random_mlp(3, 8, 4, 7);
    model.save(&path).unwrap();
    let again = DecoderModel::load(&path).unwrap();
    assert_eq!(again, model);
    let dynamic = load_decoder(&path).unwrap();
    assert_eq!(dynamic.digest(), model.digest());
    let z = [0.3, -0.2, 1.1];
    assert_eq!(dynamic.forward(&z).unwrap(), model.forward(&z).unwrap());

    let analytic = dir.path().join("ridge.json");
    let ridge = AnalyticDecoder::SineRidge {
        amplitude: 1.5,
        frequency: 2.0,
    };
    std::fs::write(&analytic, ridge.to_json_string()).unwrap();
    let loaded = load_decoder(&analytic).unwrap();
    assert_eq!(
        loaded.forward(&[0.4, 0.1]).unwrap(),
        ridge.forward(&[0.4, 0.1]).unwrap()
    );
}

#[test]
fn missing_file_is_an_io_error() {
    let Err(err) = load_decoder("/nonexistent/decoder.json") else {
        panic!("loaded a missing file");
    };
    assert_eq!(err.exit_code(), 1);
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Tanh),
        Just(Activation::Sigmoid),
        Just(Activation::Identity),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lipschitz_bound_holds(
        seed in any::<u64>(),
        acts in proptest::collection::vec(activation(), 1..4),
        z in proptest::collection::vec(-3.0f64..3.0, 3),
        delta in proptest::collection::vec(-0.5f64..0.5, 3),
    ) {
        let mut r = rng(seed);
        let mut layers = Vec::new();
        let mut cols = 3;
        for (i, act) in acts.iter().enumerate() {
            let rows = if i + 1 == acts.len() { 2 } else { 5 };
            layers.push(random_layer(rows, cols, *act, &mut r));
            cols = rows;
        }
        let model = DecoderModel::new(3, 2, layers).unwrap();
        let moved: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let fz = model.forward(&z).unwrap();
        let fm = model.forward(&moved).unwrap();
        let lhs = dist(&fz, &fm);
        let rhs = model.lipschitz_bound() * norm(&delta);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15, "{} > {}", lhs, rhs);
    }
}
