use certcirc::models::random_mlp;
use certcirc::oracle::enumerate_exact_range;
use certcirc::verify::{
    bound_propagate, max_linear, verify_boxes, BranchSlots, Budget, InputBox, OutputSpec, Property,
    Slot, Status,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(reference: Vec<f64>, delta: f64) -> OutputSpec {
    OutputSpec {
        property: Property::AbsMax { delta },
        slots: BranchSlots {
            reference: Slot::Constant { values: reference },
            circuit: Slot::Outputs { start: 0, len: 2 },
        },
    }
}

fn arb_box() -> impl Strategy<Value = InputBox> {
    (prop::collection::vec(-1.0f64..1.0, 2), 0.05f64..0.8)
        .prop_map(|(c, r)| InputBox::ball(&c, r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // interval + relaxation bounds enclose every reachable activation
    #[test]
    fn bounds_enclose_samples(seed in 0u64..1000, bx in arb_box()) {
        let net = random_mlp(&[2, 6, 6, 2], seed).unwrap();
        let b = bound_propagate(&net, &bx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let (_, acts) = net.forward(&bx.sample(&mut rng)).unwrap();
            prop_assert!(b.contains(&acts, 1e-9));
        }
    }

    // verdicts agree with the exact range, and witnesses really violate
    #[test]
    fn verdict_matches_exact_range(seed in 0u64..1000, bx in arb_box(), frac in 0.3f64..1.7) {
        let net = random_mlp(&[2, 5, 2], seed).unwrap();
        let reference = net.evaluate(&bx.center()).unwrap();
        let exact = enumerate_exact_range(&net, &bx).unwrap();
        let dev = exact.iter().zip(&reference).map(|((l, h), c)| (h - c).max(c - l)).fold(0.0, f64::max);
        prop_assume!((frac - 1.0).abs() > 1e-3);
        let s = spec(reference, frac * dev);
        let v = verify_boxes(&net, &[bx.clone()], &s, &Budget::unlimited()).unwrap();
        match v.status {
            Status::Certified => prop_assert!(frac > 1.0),
            Status::Falsified { witness, violation } => {
                prop_assert!(frac < 1.0);
                prop_assert!(bx.contains(&witness));
                prop_assert!(violation > 0.0);
                prop_assert!(s.violation(&net.evaluate(&witness).unwrap()) > 0.0);
            }
            Status::Unknown { .. } => prop_assert!(false, "unlimited budget returned unknown"),
        }
    }
}

#[test]
fn max_linear_matches_oracle_on_deep_net() {
    let net = random_mlp(&[2, 6, 6, 2], 3).unwrap();
    let bx = InputBox::ball(&[0.2, -0.1], 0.7).unwrap();
    let exact = enumerate_exact_range(&net, &bx).unwrap();
    let (upper, lower, arg, reason) =
        max_linear(&net, &bx, &[1.0, 0.0], 1e-9, &Budget::unlimited()).unwrap();
    assert!(reason.is_none());
    assert!((upper - exact[0].1).abs() < 1e-6);
    assert!(upper - lower <= 1e-9 + 1e-12);
    assert!(bx.contains(&arg));
}

#[test]
fn point_box_is_decided_exactly() {
    let net = random_mlp(&[2, 4, 2], 9).unwrap();
    let x = [0.3, 0.4];
    let y = net.evaluate(&x).unwrap();
    let v = verify_boxes(
        &net,
        &[InputBox::point(&x)],
        &spec(y, 0.0),
        &Budget::unlimited(),
    )
    .unwrap();
    assert!(v.is_certified());
}

#[test]
fn subproblem_budget_yields_unknown_or_decision() {
    let net = random_mlp(&[2, 6, 6, 2], 5).unwrap();
    let bx = InputBox::ball(&[0.0, 0.0], 0.6).unwrap();
    let reference = net.evaluate(&[0.0, 0.0]).unwrap();
    let exact = enumerate_exact_range(&net, &bx).unwrap();
    let dev = exact
        .iter()
        .zip(&reference)
        .map(|((l, h), c)| (h - c).max(c - l))
        .fold(0.0, f64::max);
    let budget = Budget {
        timeout_secs: None,
        max_subproblems: Some(1),
    };
    let v = verify_boxes(&net, &[bx], &spec(reference, dev * 1.0001), &budget).unwrap();
    // never a wrong decision: the property holds, so no falsification
    assert!(!v.is_falsified());
}

#[test]
fn mismatched_box_dimension_is_rejected() {
    let net = random_mlp(&[2, 4, 2], 9).unwrap();
    let bx = InputBox::ball(&[0.0, 0.0, 0.0], 0.1).unwrap();
    assert!(verify_boxes(&net, &[bx], &spec(vec![0.0, 0.0], 1.0), &Budget::default()).is_err());
}
