//! Complete verification of linear output specifications over boxes.
//!
//! Bounds come from interval arithmetic tightened by backward linear
//! relaxation; branch-and-bound splits unstable ReLUs until every unit that
//! can reach the objective is stable, at which point the subproblem is
//! solved exactly. A short gradient attack runs first to find cheap
//! counterexamples.

mod attack;
mod bab;
mod bounds;
mod lp;
pub mod property;
pub mod region;

use std::sync::RwLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Duration;

use crate::encode::SiameseQuery;
use crate::error::{check_dim, Result};
use crate::net::Network;

pub use attack::{pgd, AttackPoint};
pub use bounds::{bound_propagate, NodeBounds};
pub use property::{BranchSlots, Metric, Objective, OutputSpec, Property, Slot, SLACK};
pub use region::{Ball, InputBox, InputRegion};

use bab::{maximize, MaxOptions, Problem, Stop, Tracker};

/// Why a verification was inconclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownReason {
    Timeout,
    Budget,
    /// Bounds and exact evaluation disagreed beyond round-off.
    Numerical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Certified,
    Falsified { witness: Vec<f64>, violation: f64 },
    Unknown { reason: UnknownReason },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub subproblems: usize,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub status: Status,
    pub stats: Stats,
}

impl Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self.status, Status::Certified)
    }

    pub fn is_falsified(&self) -> bool {
        matches!(self.status, Status::Falsified { .. })
    }
}

/// Resource limits for one `verify` call (shared by all its boxes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub timeout_secs: Option<f64>,
    pub max_subproblems: Option<usize>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            timeout_secs: Some(45.0),
            max_subproblems: None,
        }
    }
}

impl Budget {
    pub fn unlimited() -> Self {
        Self {
            timeout_secs: None,
            max_subproblems: None,
        }
    }

    fn tracker(&self) -> Tracker {
        Tracker::new(
            self.timeout_secs
                .map(|s| Duration::from_secs_f64(s.max(0.0))),
            self.max_subproblems,
        )
    }
}

type Hook = Box<dyn Fn(&SiameseQuery, &Verdict) + Send + Sync>;

static HOOK: RwLock<Option<Hook>> = RwLock::new(None);

/// Installs (or clears) a process-wide callback invoked with every verdict
/// `verify` returns. Intended for auditing certificates in test harnesses.
pub fn set_verdict_hook(hook: Option<Hook>) {
    *HOOK.write().unwrap_or_else(|e| e.into_inner()) = hook;
}

/// Decides whether `query.spec` holds on every box of the query.
pub fn verify(query: &SiameseQuery, budget: &Budget) -> Result<Verdict> {
    let v = verify_boxes(&query.net, &query.boxes, &query.spec, budget)?;
    if let Some(h) = HOOK.read().unwrap_or_else(|e| e.into_inner()).as_ref() {
        h(query, &v);
    }
    Ok(v)
}

/// [`verify`] on a bare network, box list and output spec.
pub fn verify_boxes(
    net: &Network,
    boxes: &[InputBox],
    spec: &OutputSpec,
    budget: &Budget,
) -> Result<Verdict> {
    spec.validate(net.output_dim())?;
    if boxes.is_empty() {
        return Err(crate::error::Error::InvalidInput(
            "query has no input boxes".into(),
        ));
    }
    for b in boxes {
        check_dim("query box", net.input_dim(), b.dim())?;
    }
    let mut tracker = budget.tracker();
    let objectives = spec.objectives(net.output_dim());
    let verdict = |status: Status, t: &Tracker| Verdict {
        status,
        stats: Stats {
            subproblems: t.subproblems,
            elapsed_secs: t.elapsed().as_secs_f64(),
        },
    };
    let falsified = |x: Vec<f64>| -> Status {
        let violation = spec.violation(&net.evaluate(&x).expect("checked dim"));
        if violation > SLACK {
            Status::Falsified {
                witness: x,
                violation,
            }
        } else {
            Status::Unknown {
                reason: UnknownReason::Numerical,
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for bx in boxes {
        let mut root = None;
        for obj in &objectives {
            let limit = obj.threshold + SLACK;
            let hit = pgd(net, bx, obj, 20, 2, &mut rng);
            if hit.value > limit {
                return Ok(verdict(falsified(hit.x), &tracker));
            }
            let p = Problem::new(net, bx, obj);
            let rb = root.get_or_insert_with(|| p.root_bounds()).clone();
            let opts = MaxOptions {
                certify_below: Some(limit),
                falsify_above: Some(limit),
                tolerance: 0.0,
            };
            let r = maximize(&p, rb, Some(hit.x), &opts, &mut tracker);
            match r.stop {
                Stop::Falsified => return Ok(verdict(falsified(r.argmax), &tracker)),
                Stop::Unknown(reason) => return Ok(verdict(Status::Unknown { reason }, &tracker)),
                Stop::Certified | Stop::Converged | Stop::Exhausted => {
                    if r.upper > limit {
                        return Ok(verdict(
                            Status::Unknown {
                                reason: UnknownReason::Numerical,
                            },
                            &tracker,
                        ));
                    }
                }
            }
        }
    }
    Ok(verdict(Status::Certified, &tracker))
}

/// Exact (up to `tolerance`) maximum of `coeffs · net(x)` over `bx`, with an
/// in-box maximizer. Returns `(upper, lower, argmax)`; `upper - lower` is at
/// most `tolerance` unless the budget ran out.
pub fn max_linear(
    net: &Network,
    bx: &InputBox,
    coeffs: &[f64],
    tolerance: f64,
    budget: &Budget,
) -> Result<(f64, f64, Vec<f64>, Option<UnknownReason>)> {
    check_dim("objective", net.output_dim(), coeffs.len())?;
    check_dim("box", net.input_dim(), bx.dim())?;
    let obj = Objective {
        coeffs: coeffs.to_vec(),
        offset: 0.0,
        threshold: 0.0,
    };
    let p = Problem::new(net, bx, &obj);
    let mut tracker = budget.tracker();
    let opts = MaxOptions {
        tolerance,
        ..MaxOptions::default()
    };
    let r = maximize(&p, p.root_bounds(), None, &opts, &mut tracker);
    let reason = match r.stop {
        Stop::Unknown(reason) => Some(reason),
        _ => None,
    };
    Ok((r.upper, r.lower, r.argmax, reason))
}

/// Multi-restart gradient attack on every objective of `query`; returns an
/// input whose exact evaluation violates the spec.
pub fn attack(query: &SiameseQuery, steps: usize, restarts: usize, seed: u64) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objectives = query.spec.objectives(query.net.output_dim());
    for bx in &query.boxes {
        for obj in &objectives {
            let hit = pgd(&query.net, bx, obj, steps, restarts, &mut rng);
            let y = query.net.evaluate(&hit.x).ok()?;
            if query.spec.violation(&y) > SLACK {
                return Some(hit.x);
            }
        }
    }
    None
}
