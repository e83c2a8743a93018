//! Blocking sets, exact minimum hitting sets, and the MHS-duality loop for
//! approximating cardinally minimal circuits.

use std::collections::BTreeSet;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::circuit::Circuit;
use crate::error::Result;
use crate::net::ComponentId;
use crate::predicate::{Faithfulness, MonotoneCertificate, Outcome};

/// A set whose removal from the full model broke faithfulness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingSet {
    pub members: BTreeSet<ComponentId>,
    /// Enumeration round (candidate size) it was found in.
    pub round: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingSetStore {
    pub universe: Vec<ComponentId>,
    pub sets: Vec<BlockingSet>,
}

impl BlockingSetStore {
    pub fn new(universe: Vec<ComponentId>) -> Self {
        Self {
            universe,
            sets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Whether some stored set is contained in `s`.
    pub fn blocks(&self, s: &BTreeSet<ComponentId>) -> bool {
        self.sets.iter().any(|b| b.members.is_subset(s))
    }

    pub fn insert(&mut self, members: BTreeSet<ComponentId>, round: usize) {
        if !self.sets.iter().any(|b| b.members == members) {
            self.sets.push(BlockingSet { members, round });
        }
    }

    pub fn member_sets(&self) -> Vec<BTreeSet<ComponentId>> {
        self.sets.iter().map(|b| b.members.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HittingSet {
    pub members: BTreeSet<ComponentId>,
    pub optimal: bool,
}

/// Exact minimum hitting set of the stored sets.
pub fn mhs(store: &BlockingSetStore) -> HittingSet {
    let members = minimum_hitting_set(&store.member_sets()).expect("blocking sets are nonempty");
    HittingSet {
        members,
        optimal: true,
    }
}

/// Exact minimum-cardinality hitting set of `sets`; among minimum sets the
/// lexicographically smallest (as ascending sequences) is returned. `None`
/// iff some set is empty.
pub fn minimum_hitting_set<T: Ord + Clone>(sets: &[BTreeSet<T>]) -> Option<BTreeSet<T>> {
    if sets.iter().any(|s| s.is_empty()) {
        return None;
    }
    let elems: Vec<T> = sets
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |t: &T| elems.binary_search(t).expect("collected above");
    let mut idx: Vec<Vec<usize>> = sets.iter().map(|s| s.iter().map(index).collect()).collect();
    idx.sort();
    idx.dedup();
    let mut search = Mhs {
        hit_count: vec![0; idx.len()],
        sets: idx,
        best: None,
    };
    let mut chosen = Vec::new();
    let mut taken = vec![false; elems.len()];
    search.go(&mut chosen, &mut taken);
    let best = search.best.expect("the union of all sets hits them");
    Some(best.into_iter().map(|i| elems[i].clone()).collect())
}

struct Mhs {
    sets: Vec<Vec<usize>>,
    hit_count: Vec<usize>,
    best: Option<Vec<usize>>,
}

impl Mhs {
    /// Disjoint unhit sets, greedily by size: each needs its own element.
    fn lower_bound(&self) -> usize {
        let mut unhit: Vec<&Vec<usize>> = self
            .sets
            .iter()
            .zip(&self.hit_count)
            .filter(|(_, h)| **h == 0)
            .map(|(s, _)| s)
            .collect();
        unhit.sort_by_key(|s| s.len());
        let mut used: BTreeSet<usize> = BTreeSet::new();
        let mut n = 0;
        for s in unhit {
            if s.iter().all(|e| !used.contains(e)) {
                used.extend(s.iter().copied());
                n += 1;
            }
        }
        n
    }

    fn better(&self, cand: &[usize]) -> bool {
        match &self.best {
            None => true,
            Some(b) => cand.len() < b.len() || (cand.len() == b.len() && cand < b.as_slice()),
        }
    }

    fn go(&mut self, chosen: &mut Vec<usize>, taken: &mut [bool]) {
        let smallest = self
            .sets
            .iter()
            .enumerate()
            .filter(|(k, _)| self.hit_count[*k] == 0)
            .min_by_key(|(k, s)| (s.len(), *k))
            .map(|(k, _)| k);
        let Some(k) = smallest else {
            let mut cand = chosen.clone();
            cand.sort();
            if self.better(&cand) {
                self.best = Some(cand);
            }
            return;
        };
        if let Some(b) = &self.best {
            // ties still explored so the lexicographic tie-break is exact
            if chosen.len() + self.lower_bound() > b.len() {
                return;
            }
        }
        for e in self.sets[k].clone() {
            if taken[e] {
                continue;
            }
            taken[e] = true;
            chosen.push(e);
            for (s, h) in self.sets.iter().zip(self.hit_count.iter_mut()) {
                if s.binary_search(&e).is_ok() {
                    *h += 1;
                }
            }
            self.go(chosen, taken);
            for (s, h) in self.sets.iter().zip(self.hit_count.iter_mut()) {
                if s.binary_search(&e).is_ok() {
                    *h -= 1;
                }
            }
            chosen.pop();
            taken[e] = false;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alg4Status {
    /// The hitting set is faithful, hence cardinally minimal.
    Exact,
    /// `t_max` was reached; the size lower-bounds the cardinal minimum.
    LowerBoundOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub t: usize,
    pub candidates_tested: usize,
    pub blocked: usize,
    /// Candidates whose test was inconclusive (never stored).
    pub unknown: usize,
    pub store_size: usize,
    pub mhs_size: usize,
    pub mhs_outcome: Outcome,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alg4Result {
    pub circuit: Circuit,
    pub store: BlockingSetStore,
    pub status: Alg4Status,
    pub rounds: Vec<RoundStats>,
    pub monotonicity: MonotoneCertificate,
    pub evals: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alg4Options {
    pub t_max: usize,
    /// Test the candidates of a round concurrently.
    pub parallel: bool,
}

impl Default for Alg4Options {
    fn default() -> Self {
        Self {
            t_max: 3,
            parallel: true,
        }
    }
}

fn test_candidates(
    pred: &dyn Faithfulness,
    universe: &[ComponentId],
    cands: &[BTreeSet<ComponentId>],
    parallel: bool,
) -> Result<Vec<Outcome>> {
    let test = |s: &BTreeSet<ComponentId>| {
        pred.eval(&Circuit::new(
            universe.iter().copied().filter(|c| !s.contains(c)),
        ))
    };
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return cands.par_iter().map(test).collect();
    }
    let _ = parallel;
    cands.iter().map(test).collect()
}

/// Enumerates candidate removal sets by increasing size, stores those whose
/// removal breaks faithfulness, and stops once their minimum hitting set is
/// itself faithful. Only correct for monotone predicates; `monotonicity`
/// records whether that was guaranteed or assumed.
pub fn algorithm4(
    pred: &dyn Faithfulness,
    opts: Alg4Options,
    monotonicity: MonotoneCertificate,
) -> Result<Alg4Result> {
    let universe = pred.universe();
    let mut store = BlockingSetStore::new(universe.clone());
    let mut rounds = Vec::new();
    let mut evals = 0;
    let start = Instant::now();
    let mut circuit = Circuit::empty();
    let mut status = Alg4Status::LowerBoundOnly;
    for t in 1..=opts.t_max.min(universe.len()) {
        // the filter reads the store as of the round start, so a round's
        // result is independent of evaluation order
        let cands: Vec<BTreeSet<ComponentId>> = universe
            .iter()
            .copied()
            .combinations(t)
            .map(BTreeSet::from_iter)
            .filter(|s| !store.blocks(s))
            .collect();
        let outcomes = test_candidates(pred, &universe, &cands, opts.parallel)?;
        evals += cands.len();
        let mut blocked = 0;
        let mut unknown = 0;
        for (s, o) in cands.iter().zip(&outcomes) {
            match o {
                Outcome::False => {
                    store.insert(s.clone(), t);
                    blocked += 1;
                }
                Outcome::Unknown => unknown += 1,
                Outcome::True => {}
            }
        }
        let h = mhs(&store);
        circuit = Circuit::new(h.members.iter().copied());
        let outcome = pred.eval(&circuit)?;
        evals += 1;
        rounds.push(RoundStats {
            t,
            candidates_tested: cands.len(),
            blocked,
            unknown,
            store_size: store.len(),
            mhs_size: circuit.len(),
            mhs_outcome: outcome,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if outcome.is_true() {
            status = Alg4Status::Exact;
            break;
        }
    }
    let mut warnings = Vec::new();
    if status == Alg4Status::Exact && circuit.is_empty() {
        warnings.push("empty circuit is faithful: the predicate holds vacuously".into());
    }
    if status == Alg4Status::Exact && monotonicity != MonotoneCertificate::Guaranteed {
        warnings.push("monotonicity is assumed, not guaranteed: a faithful hitting set need not be cardinally minimal".into());
    }
    if rounds.iter().any(|r| r.unknown > 0) {
        warnings.push("some blocking-set tests were inconclusive and not stored".into());
    }
    Ok(Alg4Result {
        circuit,
        store,
        status,
        rounds,
        monotonicity,
        evals,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{synthetic_universe, FnPredicate, Predicate};

    fn sets(v: &[&[u32]]) -> Vec<BTreeSet<u32>> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn mhs_small_cases() {
        assert_eq!(minimum_hitting_set::<u32>(&[]), Some(BTreeSet::new()));
        assert_eq!(
            minimum_hitting_set(&sets(&[&[1, 2], &[2, 3]])),
            Some(BTreeSet::from([2]))
        );
        assert_eq!(
            minimum_hitting_set(&sets(&[&[1, 2], &[3, 4], &[1, 3]])),
            Some(BTreeSet::from([1, 3]))
        );
        assert_eq!(minimum_hitting_set(&sets(&[&[1], &[]])), None);
    }

    #[test]
    fn lexicographic_tie_break() {
        // {1,3}, {1,4}, {2,3}, {2,4} all hit; {1,3} is smallest
        assert_eq!(
            minimum_hitting_set(&sets(&[&[1, 2], &[3, 4]])),
            Some(BTreeSet::from([1, 3]))
        );
        assert_eq!(
            minimum_hitting_set(&sets(&[&[4, 2], &[3, 1]])),
            Some(BTreeSet::from([1, 2]))
        );
    }

    #[test]
    fn recovers_hidden_witness() {
        let w = BTreeSet::from([1, 4]);
        let p = Predicate::synthetic_monotone(6, vec![w]).unwrap();
        let r = algorithm4(
            &p,
            Alg4Options {
                t_max: 6,
                parallel: false,
            },
            MonotoneCertificate::Guaranteed,
        )
        .unwrap();
        assert_eq!(r.status, Alg4Status::Exact);
        assert_eq!(
            r.circuit,
            Circuit::new([ComponentId::new(1, 1), ComponentId::new(1, 4)])
        );
        assert_eq!(r.rounds.len(), 1);
    }

    #[test]
    fn vacuous_predicate_warns() {
        let p = FnPredicate::new(synthetic_universe(3), |_| true);
        let r = algorithm4(&p, Alg4Options::default(), MonotoneCertificate::Guaranteed).unwrap();
        assert!(r.circuit.is_empty());
        assert_eq!(r.status, Alg4Status::Exact);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn nonempty_predicate_continues() {
        // every nonempty circuit is faithful: only G itself blocks
        let p = FnPredicate::new(synthetic_universe(3), |c| !c.is_empty());
        let r = algorithm4(
            &p,
            Alg4Options {
                t_max: 3,
                parallel: false,
            },
            MonotoneCertificate::Unknown,
        )
        .unwrap();
        assert_eq!(r.rounds[0].mhs_size, 0);
        assert_eq!(r.rounds[0].mhs_outcome, Outcome::False);
        assert_eq!(r.status, Alg4Status::Exact);
        assert_eq!(r.circuit.len(), 1);
        assert_eq!(r.store.len(), 1);
    }
}
