use std::collections::BTreeSet;

use certcirc::discover::{binary_search, exhaustive, greedy, Ordering};
use certcirc::hitting::{algorithm4, minimum_hitting_set, Alg4Options, Alg4Status};
use certcirc::oracle::{cardinal_minimum, classify_minimality};
use certcirc::predicate::{Faithfulness, MonotoneCertificate, Predicate};
use certcirc::Circuit;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = Vec<BTreeSet<u8>>> {
    prop::collection::vec(prop::collection::btree_set(0u8..8, 1..4), 1..6)
}

fn brute_force_mhs(sets: &[BTreeSet<u8>]) -> usize {
    (0u32..256)
        .filter(|m| sets.iter().all(|s| s.iter().any(|e| m >> e & 1 == 1)))
        .map(u32::count_ones)
        .min()
        .unwrap() as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mhs_hits_every_set_and_is_minimum(sets in family()) {
        let h = minimum_hitting_set(&sets).unwrap();
        prop_assert!(sets.iter().all(|s| !s.is_disjoint(&h)));
        prop_assert_eq!(h.len(), brute_force_mhs(&sets));
    }

    #[test]
    fn monotone_discovery_guarantees(n in 2usize..9, seed in any::<u64>()) {
        let p = Predicate::random_monotone(n, seed).unwrap();
        let ord = Ordering::default();
        let g = greedy(&p, &ord).unwrap();
        prop_assert!(classify_minimality(&p, &g.circuit).unwrap().subset);
        prop_assert!(g.trace.evals <= n);
        let e = exhaustive(&p, &ord).unwrap();
        prop_assert!(classify_minimality(&p, &e.circuit).unwrap().local);
        prop_assert!(e.trace.evals <= n * n);
        let b = binary_search(&p, &ord).unwrap();
        prop_assert!(p.eval(&b.circuit).unwrap().is_true());
        let bound = (usize::BITS - (n - 1).leading_zeros()) as usize + 1;
        prop_assert!(b.trace.evals <= bound);
    }

    // every stored blocking set really blocks, and the MHS never exceeds
    // the true minimum
    #[test]
    fn algorithm4_store_is_sound(n in 2usize..9, seed in any::<u64>(), t_max in 1usize..4) {
        let p = Predicate::random_monotone(n, seed).unwrap();
        let u = p.universe();
        let r = algorithm4(&p, Alg4Options { t_max, parallel: false }, MonotoneCertificate::Guaranteed).unwrap();
        for s in r.store.member_sets() {
            let rest = Circuit::new(u.iter().copied().filter(|c| !s.contains(c)));
            prop_assert!(!p.eval(&rest).unwrap().is_true());
        }
        let (card, _) = cardinal_minimum(&p).unwrap().unwrap();
        prop_assert!(r.rounds.iter().all(|x| x.mhs_size <= card));
        if r.status == Alg4Status::Exact {
            prop_assert_eq!(r.circuit.len(), card);
        }
    }
}

#[test]
fn empty_family_and_empty_member() {
    assert_eq!(minimum_hitting_set::<u8>(&[]), Some(BTreeSet::new()));
    assert_eq!(
        minimum_hitting_set(&[BTreeSet::from([1u8]), BTreeSet::new()]),
        None
    );
}

proptest! {
    // without monotonicity only the exhaustive fixpoint is locally minimal
    #[test]
    fn non_monotone_exhaustive_is_local(n in 2usize..8, seed in any::<u64>()) {
        let p = Predicate::synthetic_non_monotone(n, seed).unwrap();
        let e = exhaustive(&p, &Ordering::default()).unwrap();
        prop_assert!(classify_minimality(&p, &e.circuit).unwrap().local);
        let g = greedy(&p, &Ordering::default()).unwrap();
        prop_assert!(p.eval(&g.circuit).unwrap().is_true());
    }
}
