//! Brute-force ground truth: exact output ranges by activation-pattern
//! enumeration, minimality classification and monotonicity checks by
//! exhaustive subset enumeration. Every routine refuses inputs above its
//! size limit instead of truncating.

use std::collections::HashMap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::net::{ComponentId, Network, NodeKind};
use crate::predicate::{Faithfulness, Outcome};
use crate::verify::InputBox;

pub const MAX_UNSTABLE: usize = 12;
pub const MAX_CLASSIFY: usize = 16;
pub const MAX_MONOTONE: usize = 12;

fn limit(what: &str, actual: usize, limit: usize) -> Result<()> {
    if actual > limit {
        Err(Error::SizeLimit {
            what: what.into(),
            actual,
            limit,
        })
    } else {
        Ok(())
    }
}

/// Plain interval arithmetic, kept separate from the verifier's bounds.
fn intervals(net: &Network, bx: &InputBox) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(net.nodes().len());
    for node in net.nodes() {
        let iv = match &node.kind {
            NodeKind::Input => (bx.lo.clone(), bx.hi.clone()),
            NodeKind::Constant { value } => (value.clone(), value.clone()),
            NodeKind::Affine {
                source,
                weights,
                bias,
            } => {
                let (sl, su) = &out[*source];
                let mut lo = bias.clone();
                let mut hi = bias.clone();
                for r in 0..weights.rows() {
                    for (c, w) in weights.row(r).iter().enumerate() {
                        lo[r] += (w * sl[c]).min(w * su[c]);
                        hi[r] += (w * sl[c]).max(w * su[c]);
                    }
                }
                (lo, hi)
            }
            NodeKind::Relu { source } => {
                let (l, u) = &out[*source];
                (
                    l.iter().map(|v| v.max(0.0)).collect(),
                    u.iter().map(|v| v.max(0.0)).collect(),
                )
            }
            NodeKind::Copy { source } => out[*source].clone(),
            NodeKind::Concat { sources } => (
                sources.iter().flat_map(|s| out[*s].0.clone()).collect(),
                sources.iter().flat_map(|s| out[*s].1.clone()).collect(),
            ),
            NodeKind::Subtract { a, b } => (
                out[*a]
                    .0
                    .iter()
                    .zip(&out[*b].1)
                    .map(|(x, y)| x - y)
                    .collect(),
                out[*a]
                    .1
                    .iter()
                    .zip(&out[*b].0)
                    .map(|(x, y)| x - y)
                    .collect(),
            ),
        };
        out.push(iv);
    }
    out
}

/// Affine functions of the input, one row per unit.
#[derive(Clone)]
struct Sym {
    a: Matrix,
    b: Vec<f64>,
}

/// Solves the square system `m x = rhs` by Gaussian elimination with
/// partial pivoting; `None` if (numerically) singular.
fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for c in col..n {
                        m[r][c] -= f * m[col][c];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
        }
    }
    Some((0..n).map(|i| rhs[i] / m[i][i]).collect())
}

/// Vertices of `{x : lo <= x <= hi, a·x + b >= 0 for each (a, b)}`.
fn vertices(bx: &InputBox, halfspaces: &[(Vec<f64>, f64)]) -> Vec<Vec<f64>> {
    let n = bx.dim();
    // every constraint as g·x + h >= 0
    let mut cons: Vec<(Vec<f64>, f64)> = Vec::with_capacity(2 * n + halfspaces.len());
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        cons.push((e.clone(), -bx.lo[i]));
        e[i] = -1.0;
        cons.push((e, bx.hi[i]));
    }
    cons.extend(halfspaces.iter().cloned());
    let feasible = |x: &[f64]| {
        cons.iter().all(|(g, h)| {
            let v: f64 = g.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + h;
            let scale = 1.0 + h.abs() + g.iter().zip(x).map(|(p, q)| (p * q).abs()).sum::<f64>();
            v >= -1e-9 * scale
        })
    };
    let mut out = Vec::new();
    for pick in (0..cons.len()).combinations(n) {
        let m: Vec<Vec<f64>> = pick.iter().map(|&k| cons[k].0.clone()).collect();
        let rhs: Vec<f64> = pick.iter().map(|&k| -cons[k].1).collect();
        if let Some(mut x) = solve(m, rhs) {
            if feasible(&x) {
                bx.clamp(&mut x);
                out.push(x);
            }
        }
    }
    out
}

/// Exact `[min, max]` of every output over `bx`, by enumerating the
/// activation patterns of the ReLUs that interval arithmetic cannot fix and
/// extremizing each pattern's affine map over its polytope at the vertices.
pub fn enumerate_exact_range(net: &Network, bx: &InputBox) -> Result<Vec<(f64, f64)>> {
    check_dim("oracle box", net.input_dim(), bx.dim())?;
    let iv = intervals(net, bx);
    let mut unstable = Vec::new();
    for (i, node) in net.nodes().iter().enumerate() {
        if let NodeKind::Relu { source } = node.kind {
            for j in 0..node.width {
                if iv[source].0[j] < 0.0 && iv[source].1[j] > 0.0 {
                    unstable.push((i, j));
                }
            }
        }
    }
    limit("unstable ReLUs", unstable.len(), MAX_UNSTABLE)?;
    let n = net.input_dim();
    let d = net.output_dim();
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for pattern in 0..(1u32 << unstable.len()) {
        let active = |node: usize, unit: usize| -> Option<bool> {
            unstable
                .iter()
                .position(|&u| u == (node, unit))
                .map(|k| pattern >> k & 1 == 1)
        };
        let mut halfspaces = Vec::new();
        let mut syms: Vec<Sym> = Vec::with_capacity(net.nodes().len());
        for (i, node) in net.nodes().iter().enumerate() {
            let s = match &node.kind {
                NodeKind::Input => Sym {
                    a: Matrix::identity(n),
                    b: vec![0.0; n],
                },
                NodeKind::Constant { value } => Sym {
                    a: Matrix::zeros(value.len(), n),
                    b: value.clone(),
                },
                NodeKind::Affine {
                    source,
                    weights,
                    bias,
                } => {
                    let src = &syms[*source];
                    let a = weights.matmul(&src.a);
                    let b = weights
                        .mul_vec(&src.b)
                        .iter()
                        .zip(bias)
                        .map(|(p, q)| p + q)
                        .collect();
                    Sym { a, b }
                }
                NodeKind::Relu { source } => {
                    let src = &syms[*source];
                    let mut s = src.clone();
                    for j in 0..node.width {
                        let on = match active(i, j) {
                            Some(on) => {
                                let sign = if on { 1.0 } else { -1.0 };
                                halfspaces.push((
                                    src.a.row(j).iter().map(|v| sign * v).collect(),
                                    sign * src.b[j],
                                ));
                                on
                            }
                            None => iv[*source].0[j] >= 0.0,
                        };
                        if !on {
                            s.a.row_mut(j).iter_mut().for_each(|v| *v = 0.0);
                            s.b[j] = 0.0;
                        }
                    }
                    s
                }
                NodeKind::Copy { source } => syms[*source].clone(),
                NodeKind::Concat { sources } => {
                    let rows: Vec<Vec<f64>> =
                        sources.iter().flat_map(|s| syms[*s].a.to_rows()).collect();
                    Sym {
                        a: if rows.is_empty() {
                            Matrix::zeros(0, n)
                        } else {
                            Matrix::from_rows(rows)?
                        },
                        b: sources.iter().flat_map(|s| syms[*s].b.clone()).collect(),
                    }
                }
                NodeKind::Subtract { a, b } => {
                    let mut s = syms[*a].clone();
                    let o = &syms[*b];
                    for r in 0..s.b.len() {
                        for c in 0..n {
                            s.a.set(r, c, s.a.get(r, c) - o.a.get(r, c));
                        }
                        s.b[r] -= o.b[r];
                    }
                    s
                }
            };
            syms.push(s);
        }
        let out = &syms[net.output_node()];
        for v in vertices(bx, &halfspaces) {
            let y = out.a.mul_vec(&v);
            for k in 0..d {
                let val = y[k] + out.b[k];
                range[k].0 = range[k].0.min(val);
                range[k].1 = range[k].1.max(val);
            }
        }
    }
    Ok(range)
}

fn decide(
    pred: &dyn Faithfulness,
    c: &Circuit,
    cache: &mut HashMap<Circuit, bool>,
) -> Result<bool> {
    if let Some(v) = cache.get(c) {
        return Ok(*v);
    }
    let v = match pred.eval(c)? {
        Outcome::True => true,
        Outcome::False => false,
        Outcome::Unknown => {
            return Err(Error::Unsupported(
                "oracle needs a decisive predicate; got Unknown".into(),
            ))
        }
    };
    cache.insert(c.clone(), v);
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    pub faithful: bool,
    pub quasi: bool,
    pub local: bool,
    pub subset: bool,
    pub cardinal: bool,
    /// A member whose removal breaks faithfulness.
    pub breaking_element: Option<ComponentId>,
    /// A faithful nonempty proper subset.
    pub faithful_subset: Option<Circuit>,
    /// A faithful circuit with fewer members.
    pub smaller_circuit: Option<Circuit>,
}

/// Exact minimality flags of `circuit` under `pred`.
///
/// quasi: faithful and some single removal breaks Φ; local: faithful and
/// every single removal breaks Φ; subset: local and no nonempty proper
/// subset is faithful; cardinal: faithful and no circuit of the universe
/// with fewer members is faithful.
pub fn classify_minimality(pred: &dyn Faithfulness, circuit: &Circuit) -> Result<MinimalityReport> {
    let universe = pred.universe();
    limit("circuit size", circuit.len(), MAX_CLASSIFY)?;
    limit("universe size", universe.len(), MAX_CLASSIFY)?;
    if let Some(c) = circuit.members().iter().find(|c| !universe.contains(c)) {
        return Err(Error::InvalidInput(format!(
            "component {c} is outside the predicate universe"
        )));
    }
    let mut cache = HashMap::new();
    let faithful = decide(pred, circuit, &mut cache)?;
    let mut breaking_element = None;
    let mut all_break = true;
    for &i in circuit.members() {
        if decide(pred, &circuit.without(i), &mut cache)? {
            all_break = false;
        } else if breaking_element.is_none() {
            breaking_element = Some(i);
        }
    }
    let members: Vec<ComponentId> = circuit.members().iter().copied().collect();
    let mut faithful_subset = None;
    'outer: for k in (1..members.len()).rev() {
        for sub in members.iter().copied().combinations(k) {
            let c = Circuit::new(sub);
            if decide(pred, &c, &mut cache)? {
                faithful_subset = Some(c);
                break 'outer;
            }
        }
    }
    let mut smaller_circuit = None;
    'outer2: for k in 0..circuit.len() {
        for sub in universe.iter().copied().combinations(k) {
            let c = Circuit::new(sub);
            if decide(pred, &c, &mut cache)? {
                smaller_circuit = Some(c);
                break 'outer2;
            }
        }
    }
    let quasi = faithful && breaking_element.is_some();
    let local = faithful && all_break;
    let subset = local && faithful_subset.is_none();
    let cardinal = faithful && smaller_circuit.is_none();
    Ok(MinimalityReport {
        faithful,
        quasi,
        local,
        subset,
        cardinal,
        breaking_element,
        faithful_subset,
        smaller_circuit,
    })
}

/// Smallest faithful circuits' cardinality by brute force (`None` if no
/// circuit is faithful).
pub fn cardinal_minimum(pred: &dyn Faithfulness) -> Result<Option<(usize, Circuit)>> {
    let universe = pred.universe();
    limit("universe size", universe.len(), MAX_CLASSIFY)?;
    let mut cache = HashMap::new();
    for k in 0..=universe.len() {
        for sub in universe.iter().copied().combinations(k) {
            let c = Circuit::new(sub);
            if decide(pred, &c, &mut cache)? {
                return Ok(Some((k, c)));
            }
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub monotone: bool,
    /// `(C, C ∪ {i})` with Φ(C) true and Φ(C ∪ {i}) false.
    pub counterexample: Option<(Circuit, Circuit)>,
}

/// Exhaustive monotonicity check over all subsets of the universe; checking
/// single-element extensions suffices.
pub fn check_monotone(pred: &dyn Faithfulness) -> Result<MonotoneReport> {
    let universe = pred.universe();
    limit("universe size", universe.len(), MAX_MONOTONE)?;
    let n = universe.len();
    let subset =
        |mask: u32| Circuit::new((0..n).filter(|i| mask >> i & 1 == 1).map(|i| universe[i]));
    let mut truth = vec![false; 1 << n];
    let mut cache = HashMap::new();
    for (mask, t) in truth.iter_mut().enumerate() {
        *t = decide(pred, &subset(mask as u32), &mut cache)?;
    }
    for mask in 0..(1u32 << n) {
        if !truth[mask as usize] {
            continue;
        }
        for i in 0..n {
            let bigger = mask | 1 << i;
            if bigger != mask && !truth[bigger as usize] {
                return Ok(MonotoneReport {
                    monotone: false,
                    counterexample: Some((subset(mask), subset(bigger))),
                });
            }
        }
    }
    Ok(MonotoneReport {
        monotone: true,
        counterexample: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkBuilder;
    use crate::predicate::{synthetic_universe, FnPredicate};

    #[test]
    fn identity_via_two_relus() {
        // relu(x) - relu(-x) = x
        let mut nb = NetworkBuilder::new();
        let x = nb.input(1);
        let pre = nb.affine(
            "pre",
            x,
            Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
            vec![0.0, 0.0],
        );
        let r = nb.relu("r", pre);
        let y = nb.affine(
            "y",
            r,
            Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap(),
            vec![0.0],
        );
        let net = nb.finish(y).unwrap();
        let bx = InputBox::new(vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(enumerate_exact_range(&net, &bx).unwrap(), vec![(-1.0, 1.0)]);
    }

    #[test]
    fn exact_where_intervals_are_loose() {
        // relu(x) - relu(-x) - x = 0; intervals give [-2, 2]
        let mut nb = NetworkBuilder::new();
        let x = nb.input(1);
        let pre = nb.affine(
            "pre",
            x,
            Matrix::from_vec(3, 1, vec![1.0, -1.0, 1.0]).unwrap(),
            vec![0.0; 3],
        );
        let r = nb.relu("r", pre);
        let cat = nb.concat("cat", vec![r, x]);
        let y = nb.affine(
            "y",
            cat,
            Matrix::from_vec(1, 4, vec![1.0, -1.0, 0.0, -1.0]).unwrap(),
            vec![0.0],
        );
        let net = nb.finish(y).unwrap();
        let bx = InputBox::new(vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(intervals(&net, &bx)[y], (vec![-2.0], vec![2.0]));
        assert_eq!(enumerate_exact_range(&net, &bx).unwrap(), vec![(0.0, 0.0)]);
    }

    #[test]
    fn always_true_is_monotone() {
        let p = FnPredicate::new(synthetic_universe(4), |_| true);
        assert!(check_monotone(&p).unwrap().monotone);
    }

    #[test]
    fn refuses_large_universe() {
        let p = FnPredicate::new(synthetic_universe(13), |_| true);
        assert!(matches!(check_monotone(&p), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn singleton_predicate_classification() {
        // faithful iff the circuit contains element 0
        let u = synthetic_universe(3);
        let p = FnPredicate::new(u.clone(), |c| c.contains(ComponentId::new(1, 0)));
        let r = classify_minimality(&p, &Circuit::new([u[0]])).unwrap();
        assert!(r.faithful && r.quasi && r.local && r.subset && r.cardinal);
        let r = classify_minimality(&p, &Circuit::new([u[0], u[1]])).unwrap();
        assert!(r.quasi && !r.local && !r.subset && !r.cardinal);
    }
}
