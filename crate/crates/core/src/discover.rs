//! Greedy, exhaustive and binary-search circuit discovery.

use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::net::ComponentId;
use crate::predicate::{Faithfulness, Outcome};

/// Order in which components are considered for removal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "snake_case")]
pub enum Ordering {
    /// Later layers first, units ascending within a layer.
    #[default]
    ReverseTopoLex,
    Explicit(Vec<ComponentId>),
}

impl Ordering {
    pub fn resolve(&self, universe: &[ComponentId]) -> Result<Vec<ComponentId>> {
        match self {
            Ordering::ReverseTopoLex => {
                let mut v = universe.to_vec();
                v.sort_by_key(|c| (Reverse(c.layer), c.unit));
                Ok(v)
            }
            Ordering::Explicit(order) => {
                let mut a = order.clone();
                let mut b = universe.to_vec();
                a.sort();
                b.sort();
                if a != b {
                    return Err(Error::InvalidInput(
                        "explicit ordering must list every component exactly once".into(),
                    ));
                }
                Ok(order.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Greedy,
    Exhaustive,
    BinarySearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    /// Components removed from the current circuit to form the candidate.
    pub removed: Vec<ComponentId>,
    pub outcome: Outcome,
    pub size_after: usize,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryTrace {
    pub steps: Vec<TraceStep>,
    /// Φ evaluations made by the search itself.
    pub evals: usize,
    /// Evaluations spent on checking preconditions (not counted in `evals`).
    pub precondition_evals: usize,
    /// First component whose removal broke faithfulness (greedy only).
    pub first_kept: Option<ComponentId>,
    pub passes: usize,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub circuit: Circuit,
    pub trace: DiscoveryTrace,
}

struct Run<'a> {
    pred: &'a dyn Faithfulness,
    start: Instant,
    trace: DiscoveryTrace,
}

impl<'a> Run<'a> {
    fn new(pred: &'a dyn Faithfulness) -> Self {
        Self {
            pred,
            start: Instant::now(),
            trace: DiscoveryTrace::default(),
        }
    }

    fn require(&mut self, c: &Circuit, want: bool, what: &str) -> Result<()> {
        self.trace.precondition_evals += 1;
        if self.pred.eval(c)?.is_true() != want {
            return Err(Error::Precondition(what.into()));
        }
        Ok(())
    }

    /// Evaluates `candidate` and logs the step; `size_if_kept` is the
    /// circuit size if the candidate is rejected.
    fn test(
        &mut self,
        candidate: &Circuit,
        removed: Vec<ComponentId>,
        size_if_kept: usize,
    ) -> Result<bool> {
        let outcome = self.pred.eval(candidate)?;
        self.trace.evals += 1;
        let ok = outcome.is_true();
        self.trace.steps.push(TraceStep {
            step: self.trace.steps.len(),
            removed,
            outcome,
            size_after: if ok { candidate.len() } else { size_if_kept },
            elapsed_secs: self.start.elapsed().as_secs_f64(),
        });
        Ok(ok)
    }

    fn finish(mut self, circuit: Circuit) -> Discovery {
        self.trace.elapsed_secs = self.start.elapsed().as_secs_f64();
        Discovery {
            circuit,
            trace: self.trace,
        }
    }
}

/// One pass over the ordering; removes each component whose removal keeps Φ.
pub fn greedy(pred: &dyn Faithfulness, ordering: &Ordering) -> Result<Discovery> {
    let order = ordering.resolve(&pred.universe())?;
    let mut run = Run::new(pred);
    let mut c = Circuit::new(order.iter().copied());
    run.require(&c, true, "the full model must be faithful to itself")?;
    run.trace.passes = 1;
    for &i in &order {
        let cand = c.without(i);
        if run.test(&cand, vec![i], c.len())? {
            c = cand;
        } else if run.trace.first_kept.is_none() {
            run.trace.first_kept = Some(i);
        }
    }
    Ok(run.finish(c))
}

/// Repeated greedy passes until a full pass removes nothing.
pub fn exhaustive(pred: &dyn Faithfulness, ordering: &Ordering) -> Result<Discovery> {
    let order = ordering.resolve(&pred.universe())?;
    let mut run = Run::new(pred);
    let mut c = Circuit::new(order.iter().copied());
    run.require(&c, true, "the full model must be faithful to itself")?;
    let mut changed = true;
    while changed {
        changed = false;
        run.trace.passes += 1;
        for &i in &order {
            if !c.contains(i) {
                continue;
            }
            let cand = c.without(i);
            if run.test(&cand, vec![i], c.len())? {
                c = cand;
                changed = true;
            } else if run.trace.first_kept.is_none() {
                run.trace.first_kept = Some(i);
            }
        }
    }
    Ok(run.finish(c))
}

/// Binary search over how many leading components of the ordering can be
/// removed at once.
pub fn binary_search(pred: &dyn Faithfulness, ordering: &Ordering) -> Result<Discovery> {
    let order = ordering.resolve(&pred.universe())?;
    let mut run = Run::new(pred);
    let full = Circuit::new(order.iter().copied());
    run.require(&full, true, "the full model must be faithful to itself")?;
    run.require(
        &Circuit::empty(),
        false,
        "the empty circuit must not be faithful",
    )?;
    let mut c = full;
    let (mut low, mut high) = (0, order.len());
    run.trace.passes = 1;
    while high - low > 1 {
        let mid = (low + high) / 2;
        let cand = Circuit::new(order[mid..].iter().copied());
        if run.test(&cand, order[..mid].to_vec(), c.len())? {
            low = mid;
            c = cand;
        } else {
            high = mid;
        }
    }
    Ok(run.finish(c))
}

pub fn discover(
    pred: &dyn Faithfulness,
    algorithm: Algorithm,
    ordering: &Ordering,
) -> Result<Discovery> {
    match algorithm {
        Algorithm::Greedy => greedy(pred, ordering),
        Algorithm::Exhaustive => exhaustive(pred, ordering),
        Algorithm::BinarySearch => binary_search(pred, ordering),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{synthetic_universe, FnPredicate};

    fn ids(v: &[usize]) -> Vec<ComponentId> {
        v.iter().map(|&u| ComponentId::new(1, u)).collect()
    }

    #[test]
    fn reverse_topo_lex() {
        let u = vec![
            ComponentId::new(1, 1),
            ComponentId::new(2, 0),
            ComponentId::new(1, 0),
        ];
        let o = Ordering::ReverseTopoLex.resolve(&u).unwrap();
        assert_eq!(
            o,
            vec![
                ComponentId::new(2, 0),
                ComponentId::new(1, 0),
                ComponentId::new(1, 1)
            ]
        );
        assert!(Ordering::Explicit(ids(&[0, 0, 1]))
            .resolve(&ids(&[0, 1, 2]))
            .is_err());
    }

    #[test]
    fn only_full_model_faithful() {
        let p = FnPredicate::new(synthetic_universe(4), |c| c.len() == 4);
        let d = greedy(&p, &Ordering::default()).unwrap();
        assert_eq!(d.circuit.len(), 4);
        assert_eq!(d.trace.evals, 4);
        assert_eq!(d.trace.first_kept, Some(ComponentId::new(1, 0)));
    }

    #[test]
    fn unfaithful_model_is_rejected() {
        let p = FnPredicate::new(synthetic_universe(3), |_| false);
        assert!(matches!(
            greedy(&p, &Ordering::default()),
            Err(Error::Precondition(_))
        ));
        let q = FnPredicate::new(synthetic_universe(3), |_| true);
        assert!(matches!(
            binary_search(&q, &Ordering::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn nonempty_gives_singleton() {
        let p = FnPredicate::new(synthetic_universe(5), |c| !c.is_empty());
        let d = exhaustive(&p, &Ordering::default()).unwrap();
        assert_eq!(d.circuit, Circuit::new(ids(&[4])));
        assert_eq!(d.trace.passes, 2);
    }

    #[test]
    fn binary_search_finds_suffix() {
        // faithful iff the last 3 ordering elements are present
        let order = ids(&[5, 2, 0, 6, 1, 3, 4]);
        let tail: Vec<ComponentId> = order[4..].to_vec();
        let p = FnPredicate::new(synthetic_universe(7), move |c| {
            tail.iter().all(|t| c.contains(*t))
        });
        let d = binary_search(&p, &Ordering::Explicit(order.clone())).unwrap();
        assert_eq!(d.circuit, Circuit::new(order[4..].iter().copied()));
        assert!(d.trace.evals <= 3);
    }

    #[test]
    fn single_component_binary_search() {
        let p = FnPredicate::new(synthetic_universe(1), |c| c.len() == 1);
        let d = binary_search(&p, &Ordering::default()).unwrap();
        assert_eq!(d.circuit.len(), 1);
        assert!(d.trace.evals <= 1);
    }
}
