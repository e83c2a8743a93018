use certcirc::circuit::{masked_forward, CircuitFile};
use certcirc::models::{random_mlp, xor_gate, xor_toy};
use certcirc::{Circuit, Network, PatchingScheme};
use proptest::prelude::*;

fn mlp() -> Network {
    random_mlp(&[3, 7, 5, 2], 11).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // reverse-mode gradient against central differences
    #[test]
    fn gradient_matches_finite_differences(x in prop::collection::vec(-2.0f64..2.0, 3), w in prop::collection::vec(-1.0f64..1.0, 2)) {
        let net = mlp();
        let g = net.gradient(&x, &w).unwrap();
        let f = |x: &[f64]| net.evaluate(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-7;
        for i in 0..3 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() < 1e-5, "dim {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn full_circuit_is_the_model(x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let net = mlp();
        let y = masked_forward(&net, &Circuit::full(&net), &PatchingScheme::Zero, &x).unwrap();
        prop_assert_eq!(y, net.evaluate(&x).unwrap());
    }

    // patching the complement with the values the model itself produces on
    // the same input changes nothing
    #[test]
    fn self_patching_is_identity(x in prop::collection::vec(-2.0f64..2.0, 3), mask in any::<u16>()) {
        let net = mlp();
        let c = Circuit::new(net.component_ids().into_iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, c)| c));
        let y = masked_forward(&net, &c, &PatchingScheme::FromInput { z: x.clone() }, &x).unwrap();
        let want = net.evaluate(&x).unwrap();
        for (a, b) in y.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn json_round_trip_preserves_function_and_fingerprint() {
    let net = mlp();
    let back = Network::from_json(&net.to_json()).unwrap();
    assert_eq!(back.fingerprint(), net.fingerprint());
    for x in [[0.1, -0.4, 1.3], [2.0, 0.0, -1.0]] {
        assert_eq!(back.evaluate(&x).unwrap(), net.evaluate(&x).unwrap());
    }
}

#[test]
fn malformed_json_is_an_error() {
    assert!(Network::from_json("{\"nodes\": 3}").is_err());
    assert!(Network::from_json("not json").is_err());
}

#[test]
fn xor_toy_computes_second_input() {
    let net = xor_toy();
    for (x, want) in [
        ([0.0, 0.0], 0.0),
        ([0.0, 1.0], 1.0),
        ([1.0, 0.0], 0.0),
        ([1.0, 1.0], 1.0),
    ] {
        assert_eq!(net.evaluate(&x).unwrap(), vec![want]);
    }
    assert_eq!(net.component_ids().len(), 6);
}

#[test]
fn circuit_file_refuses_other_network() {
    let net = xor_toy();
    let file = CircuitFile::new(&net, &Circuit::new([xor_gate(1)]), PatchingScheme::Zero);
    let text = serde_json::to_string(&file).unwrap();
    let back: CircuitFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.circuit_for(&net).unwrap(), Circuit::new([xor_gate(1)]));
    assert!(back.circuit_for(&mlp()).is_err());
}

#[test]
fn wrong_input_width_is_rejected() {
    assert!(mlp().evaluate(&[1.0]).is_err());
}
