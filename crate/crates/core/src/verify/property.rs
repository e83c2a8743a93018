//! Output metrics comparing reference logits against circuit logits, and
//! their compilation to linear objectives over an encoding's output.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::net::Network;

/// Absolute slack added to every threshold to absorb floating-point noise.
pub const SLACK: f64 = 1e-9;

/// Metric choice before it is bound to an anchor input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// `|f_G[k] - f_C[k]| <= δ` on the anchor's gold class `k`.
    LogitDiff,
    /// `f_C[t] - f_C[r] >= -α·gap`, with winner `t`, runner-up `r` and the
    /// winner–runner gap taken from the full network on the anchor.
    WinnerRunner { alpha: f64 },
    /// `max_i |f_G[i] - f_C[i]| <= δ`.
    AbsMax,
}

impl Metric {
    /// Binds the metric to an anchor.
    pub fn resolve(
        &self,
        net: &Network,
        anchor: &[f64],
        gold: usize,
        delta: f64,
    ) -> Result<Property> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "delta {delta} must be finite and >= 0"
            )));
        }
        let d = net.output_dim();
        match *self {
            Metric::LogitDiff => {
                if gold >= d {
                    return Err(Error::InvalidInput(format!(
                        "gold class {gold} out of range"
                    )));
                }
                Ok(Property::LogitDiff { gold, delta })
            }
            Metric::AbsMax => Ok(Property::AbsMax { delta }),
            Metric::WinnerRunner { alpha } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "alpha {alpha} must lie in (0, 1]"
                    )));
                }
                if d < 2 {
                    return Err(Error::InvalidInput(
                        "winner-runner needs at least two outputs".into(),
                    ));
                }
                let y = net.evaluate(anchor)?;
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
                let (target, runner) = (order[0], order[1]);
                Ok(Property::WinnerRunner {
                    target,
                    runner,
                    alpha,
                    gap: y[target] - y[runner],
                })
            }
        }
    }
}

/// A metric bound to concrete classes and tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Property {
    LogitDiff {
        gold: usize,
        delta: f64,
    },
    WinnerRunner {
        target: usize,
        runner: usize,
        alpha: f64,
        gap: f64,
    },
    AbsMax {
        delta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Reference,
    Circuit,
}

/// `Σ coeff · side[index] <= threshold`.
struct Form {
    terms: Vec<(Side, usize, f64)>,
    threshold: f64,
}

impl Property {
    fn forms(&self, d: usize) -> Vec<Form> {
        use Side::*;
        let pair = |k: usize, delta: f64| {
            [
                Form {
                    terms: vec![(Reference, k, 1.0), (Circuit, k, -1.0)],
                    threshold: delta,
                },
                Form {
                    terms: vec![(Circuit, k, 1.0), (Reference, k, -1.0)],
                    threshold: delta,
                },
            ]
        };
        match *self {
            Property::LogitDiff { gold, delta } => pair(gold, delta).into(),
            Property::AbsMax { delta } => (0..d).flat_map(|k| pair(k, delta)).collect(),
            Property::WinnerRunner {
                target,
                runner,
                alpha,
                gap,
            } => vec![Form {
                terms: vec![(Circuit, runner, 1.0), (Circuit, target, -1.0)],
                threshold: alpha * gap,
            }],
        }
    }

    /// Largest `value - threshold` over the property's constraints; the
    /// property holds iff this is `<= SLACK`.
    pub fn violation(&self, reference: &[f64], circuit: &[f64]) -> f64 {
        self.forms(reference.len())
            .iter()
            .map(|f| {
                let v: f64 = f
                    .terms
                    .iter()
                    .map(|&(s, i, c)| {
                        c * match s {
                            Side::Reference => reference[i],
                            Side::Circuit => circuit[i],
                        }
                    })
                    .sum();
                v - f.threshold
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds(&self, reference: &[f64], circuit: &[f64]) -> bool {
        self.violation(reference, circuit) <= SLACK
    }
}

/// Where a branch's logits live: a slice of the encoding output, or a
/// precomputed constant vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    Outputs { start: usize, len: usize },
    Constant { values: Vec<f64> },
}

impl Slot {
    fn len(&self) -> usize {
        match self {
            Slot::Outputs { len, .. } => *len,
            Slot::Constant { values } => values.len(),
        }
    }

    fn read(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Slot::Outputs { start, len } => y[*start..start + len].to_vec(),
            Slot::Constant { values } => values.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSlots {
    pub reference: Slot,
    pub circuit: Slot,
}

/// A property plus the slot map telling where each branch's logits are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub property: Property,
    pub slots: BranchSlots,
}

/// Requirement `coeffs · y + offset <= threshold` on an encoding output `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub coeffs: Vec<f64>,
    pub offset: f64,
    pub threshold: f64,
}

impl Objective {
    pub fn value(&self, y: &[f64]) -> f64 {
        crate::linalg::dot(&self.coeffs, y) + self.offset
    }
}

impl OutputSpec {
    /// Checks slot ranges against the encoding output width and the
    /// property's class indices against the branch width.
    pub fn validate(&self, output_dim: usize) -> Result<()> {
        let d = self.slots.reference.len();
        check_dim("branch slot widths", d, self.slots.circuit.len())?;
        for s in [&self.slots.reference, &self.slots.circuit] {
            if let Slot::Outputs { start, len } = s {
                if start + len > output_dim {
                    return Err(Error::InvalidInput(
                        "branch slot exceeds output width".into(),
                    ));
                }
            }
        }
        let in_range = match self.property {
            Property::LogitDiff { gold, delta } => gold < d && delta >= 0.0,
            Property::WinnerRunner {
                target,
                runner,
                alpha,
                ..
            } => target < d && runner < d && target != runner && alpha > 0.0 && alpha <= 1.0,
            Property::AbsMax { delta } => delta >= 0.0,
        };
        if !in_range {
            return Err(Error::InvalidInput(format!(
                "malformed output property {:?}",
                self.property
            )));
        }
        Ok(())
    }

    pub fn branch_dim(&self) -> usize {
        self.slots.reference.len()
    }

    /// Linear objectives over an encoding output of width `output_dim`.
    pub fn objectives(&self, output_dim: usize) -> Vec<Objective> {
        self.property
            .forms(self.branch_dim())
            .into_iter()
            .map(|f| {
                let mut coeffs = vec![0.0; output_dim];
                let mut offset = 0.0;
                for (side, i, c) in f.terms {
                    let slot = match side {
                        Side::Reference => &self.slots.reference,
                        Side::Circuit => &self.slots.circuit,
                    };
                    match slot {
                        Slot::Outputs { start, .. } => coeffs[start + i] += c,
                        Slot::Constant { values } => offset += c * values[i],
                    }
                }
                Objective {
                    coeffs,
                    offset,
                    threshold: f.threshold,
                }
            })
            .collect()
    }

    /// Violation of the property on an encoding output `y`.
    pub fn violation(&self, y: &[f64]) -> f64 {
        self.property
            .violation(&self.slots.reference.read(y), &self.slots.circuit.read(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siamese_slots(d: usize) -> BranchSlots {
        BranchSlots {
            reference: Slot::Outputs { start: 0, len: d },
            circuit: Slot::Outputs { start: d, len: d },
        }
    }

    #[test]
    fn logit_diff_objectives_match_direct_violation() {
        let spec = OutputSpec {
            property: Property::LogitDiff {
                gold: 1,
                delta: 0.5,
            },
            slots: siamese_slots(2),
        };
        let y = [1.0, 2.0, 0.0, 2.75];
        let direct = spec.violation(&y);
        let via = spec
            .objectives(4)
            .iter()
            .map(|o| o.value(&y) - o.threshold)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(direct, 0.25);
        assert_eq!(via, 0.25);
    }

    #[test]
    fn constant_reference_goes_to_offset() {
        let spec = OutputSpec {
            property: Property::AbsMax { delta: 0.0 },
            slots: BranchSlots {
                reference: Slot::Constant {
                    values: vec![1.0, -1.0],
                },
                circuit: Slot::Outputs { start: 0, len: 2 },
            },
        };
        let objs = spec.objectives(2);
        assert_eq!(objs.len(), 4);
        let y = [1.0, -1.0];
        assert!(objs.iter().all(|o| o.value(&y) <= o.threshold));
    }

    #[test]
    fn winner_runner_margin() {
        let p = Property::WinnerRunner {
            target: 0,
            runner: 1,
            alpha: 0.5,
            gap: 2.0,
        };
        // circuit gap -0.9 is inside the relaxed margin of 1.0
        assert!(p.holds(&[0.0, 0.0], &[0.0, 0.9]));
        assert!(!p.holds(&[0.0, 0.0], &[0.0, 1.1]));
    }
}
