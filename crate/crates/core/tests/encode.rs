use certcirc::circuit::masked_forward;
use certcirc::encode::{
    build_input_siamese, build_tripled_siamese, EncodingKind, SiameseQuery, TripledSpec,
};
use certcirc::models::random_mlp;
use certcirc::verify::{verify, Budget, InputRegion, Property};
use certcirc::{Circuit, Network, PatchingScheme};
use proptest::prelude::*;

fn net() -> Network {
    random_mlp(&[2, 5, 4, 2], 21).unwrap()
}

fn circuit(net: &Network, mask: u16) -> Circuit {
    Circuit::new(
        net.component_ids()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, c)| c),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_siamese_halves(mask in any::<u16>(), x in prop::collection::vec(-1.0f64..1.0, 2)) {
        let net = net();
        let c = circuit(&net, mask);
        let q = build_input_siamese(&net, &c, &PatchingScheme::Zero, &InputRegion::ball(vec![0.0, 0.0], 1.0), &Property::AbsMax { delta: 0.5 }).unwrap();
        let y = q.net.evaluate(&x).unwrap();
        prop_assert_eq!(&y[..2], &net.evaluate(&x).unwrap()[..]);
        prop_assert_eq!(&y[2..], &masked_forward(&net, &c, &PatchingScheme::Zero, &x).unwrap()[..]);
    }

    // the tripled encoding with z' = z is the full model on both branches
    #[test]
    fn tripled_diagonal_is_the_model(mask in any::<u16>(), x in prop::collection::vec(-0.1f64..0.1, 2)) {
        let net = net();
        let spec = TripledSpec { anchor: &[0.0, 0.0], eps_in: 0.1, eps_patch: 0.2, clamp: None, box_patching: false };
        let q = build_tripled_siamese(&net, &circuit(&net, mask), &spec, &Property::AbsMax { delta: 0.5 }).unwrap();
        let mut inp = x.clone();
        inp.extend(&x);
        let y = q.net.evaluate(&inp).unwrap();
        for (a, b) in y[..2].iter().zip(&y[2..]) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn query_json_round_trip() {
    let net = net();
    let c = circuit(&net, 0b1010_1010);
    let spec = TripledSpec {
        anchor: &[0.1, 0.2],
        eps_in: 0.05,
        eps_patch: 0.06,
        clamp: None,
        box_patching: true,
    };
    let q = build_tripled_siamese(
        &net,
        &c,
        &spec,
        &Property::LogitDiff {
            gold: 1,
            delta: 1.0,
        },
    )
    .unwrap();
    assert_eq!(q.wiring.kind, EncodingKind::TripledBox);
    assert_eq!(q.wiring.inputs_within_patch_domain, Some(true));
    let back = SiameseQuery::from_json(&q.to_json().unwrap()).unwrap();
    assert_eq!(back, q);
    let a = verify(&q, &Budget::unlimited()).unwrap();
    let b = verify(&back, &Budget::unlimited()).unwrap();
    assert_eq!(a.status, b.status);
}

#[test]
fn non_constant_patch_is_refused_by_input_siamese() {
    let net = net();
    let r = build_input_siamese(
        &net,
        &Circuit::empty(),
        &PatchingScheme::FromInput { z: vec![0.0, 0.0] },
        &InputRegion::ball(vec![0.0, 0.0], 0.1),
        &Property::AbsMax { delta: 0.5 },
    );
    assert!(r.is_err());
}

#[test]
fn foreign_component_is_refused() {
    let net = net();
    let other = random_mlp(&[2, 9, 2], 1).unwrap();
    let c = Circuit::full(&other);
    let r = build_input_siamese(
        &net,
        &c,
        &PatchingScheme::Zero,
        &InputRegion::ball(vec![0.0, 0.0], 0.1),
        &Property::AbsMax { delta: 0.5 },
    );
    assert!(r.is_err());
}
