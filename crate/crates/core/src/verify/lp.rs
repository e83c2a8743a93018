//! Linear programs over a box intersected with half-spaces.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::region::InputBox;

pub(crate) enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Failed,
}

/// Maximizes `c · x + c0` over `bx ∩ {a · x + b >= 0 for (a, b) in halfspaces}`.
pub(crate) fn maximize_affine(
    c: &[f64],
    c0: f64,
    bx: &InputBox,
    halfspaces: &[(Vec<f64>, f64)],
) -> LpOutcome {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = c
        .iter()
        .zip(bx.lo.iter().zip(&bx.hi))
        .map(|(ci, (l, h))| p.add_var(*ci, (*l, *h)))
        .collect();
    for (a, b) in halfspaces {
        let expr: Vec<_> = vars
            .iter()
            .copied()
            .zip(a.iter().copied())
            .filter(|(_, v)| *v != 0.0)
            .collect();
        if expr.is_empty() {
            if *b < -1e-9 {
                return LpOutcome::Infeasible;
            }
            continue;
        }
        p.add_constraint(expr.as_slice(), ComparisonOp::Ge, -b);
    }
    match p.solve() {
        Ok(sol) => {
            let mut x: Vec<f64> = vars.iter().map(|v| sol[*v]).collect();
            bx.clamp(&mut x);
            LpOutcome::Optimal {
                value: sol.objective() + c0,
                x,
            }
        }
        Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
        Err(_) => LpOutcome::Failed,
    }
}
