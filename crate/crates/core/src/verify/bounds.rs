//! Interval and backward linear-relaxation bounds over a box.
//!
//! Intermediate bounds start from interval arithmetic and are tightened at
//! every ReLU pre-activation node by a backward linear-relaxation pass. An
//! unstable ReLU with pre-activation bounds `[l, u]` is bounded above by its
//! chord `u (z - l) / (u - l)` and below by `z` when `u >= -l`, else by `0`.

use crate::linalg::Matrix;
use crate::net::{Network, NodeId, NodeKind};

use super::region::InputBox;

/// Element-wise bounds for every node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl NodeBounds {
    pub fn node(&self, id: NodeId) -> (&[f64], &[f64]) {
        (&self.lower[id], &self.upper[id])
    }

    pub fn contains(&self, acts: &crate::net::Activations, tol: f64) -> bool {
        (0..self.lower.len()).all(|i| {
            acts.node(i)
                .iter()
                .zip(self.lower[i].iter().zip(&self.upper[i]))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
        })
    }
}

/// Sign constraints from branching, keyed by pre-activation node and unit:
/// `+1` forces `z >= 0`, `-1` forces `z <= 0`, `0` is free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Splits {
    pub(crate) phase: Vec<Vec<i8>>,
    pub(crate) count: usize,
}

impl Splits {
    pub(crate) fn none(net: &Network) -> Self {
        Self {
            phase: net.nodes().iter().map(|n| vec![0; n.width]).collect(),
            count: 0,
        }
    }

    pub(crate) fn with(&self, node: NodeId, unit: usize, phase: i8) -> Self {
        let mut s = self.clone();
        debug_assert_eq!(s.phase[node][unit], 0);
        s.phase[node][unit] = phase;
        s.count += 1;
        s
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (NodeId, usize, i8)> + '_ {
        self.phase.iter().enumerate().flat_map(|(n, p)| {
            p.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0)
                .map(move |(u, v)| (n, u, *v))
        })
    }
}

/// Nodes whose output feeds a ReLU.
pub(crate) fn preactivation_nodes(net: &Network) -> Vec<bool> {
    let mut pre = vec![false; net.nodes().len()];
    for n in net.nodes() {
        if let NodeKind::Relu { source } = n.kind {
            pre[source] = true;
        }
    }
    pre
}

/// A linear function `coeffs · x + bias` of the network input, one per row.
pub(crate) struct LinearForm {
    pub(crate) coeffs: Matrix,
    pub(crate) bias: Vec<f64>,
}

impl LinearForm {
    /// Upper bounds over `bx` for every row.
    pub(crate) fn upper_over(&self, bx: &InputBox) -> Vec<f64> {
        (0..self.coeffs.rows())
            .map(|r| {
                self.coeffs
                    .row(r)
                    .iter()
                    .zip(bx.lo.iter().zip(&bx.hi))
                    .map(|(c, (l, h))| if *c >= 0.0 { c * h } else { c * l })
                    .sum::<f64>()
                    + self.bias[r]
            })
            .collect()
    }

    /// Box vertex maximizing row `r`.
    pub(crate) fn argmax_vertex(&self, r: usize, bx: &InputBox) -> Vec<f64> {
        self.coeffs
            .row(r)
            .iter()
            .zip(bx.lo.iter().zip(&bx.hi))
            .map(|(c, (l, h))| {
                if *c > 0.0 {
                    *h
                } else if *c < 0.0 {
                    *l
                } else {
                    0.5 * (l + h)
                }
            })
            .collect()
    }
}

fn accumulate(slot: &mut Option<Matrix>, add: Matrix) {
    match slot {
        Some(m) => m.add_assign(&add),
        None => *slot = Some(add),
    }
}

/// Backward pass producing a linear upper bound of `coeffs · value(target)`
/// as a function of the network input, valid wherever every ReLU
/// pre-activation lies inside `bounds`.
pub(crate) fn backward_upper(
    net: &Network,
    bounds: &NodeBounds,
    target: NodeId,
    coeffs: Matrix,
) -> LinearForm {
    let k = coeffs.rows();
    let nodes = net.nodes();
    let mut lam: Vec<Option<Matrix>> = vec![None; target + 1];
    lam[target] = Some(coeffs);
    let mut bias = vec![0.0; k];
    let input = net.input_node();
    let mut input_coeffs = Matrix::zeros(k, net.input_dim());
    for i in (0..=target).rev() {
        let Some(l) = lam[i].take() else { continue };
        match &nodes[i].kind {
            NodeKind::Input => {
                debug_assert_eq!(i, input);
                input_coeffs = l;
            }
            NodeKind::Constant { value } => {
                for (r, b) in bias.iter_mut().enumerate() {
                    *b += crate::linalg::dot(l.row(r), value);
                }
            }
            NodeKind::Affine {
                source,
                weights,
                bias: b,
            } => {
                for (r, acc) in bias.iter_mut().enumerate() {
                    *acc += crate::linalg::dot(l.row(r), b);
                }
                accumulate(&mut lam[*source], l.matmul(weights));
            }
            NodeKind::Relu { source } => {
                let (pl, pu) = bounds.node(*source);
                let mut out = Matrix::zeros(k, l.cols());
                for r in 0..k {
                    for j in 0..l.cols() {
                        let c = l.get(r, j);
                        if c == 0.0 {
                            continue;
                        }
                        let (lo, hi) = (pl[j], pu[j]);
                        if lo >= 0.0 {
                            out.set(r, j, c);
                        } else if hi <= 0.0 {
                            // inactive: contributes nothing
                        } else if c > 0.0 {
                            let s = hi / (hi - lo);
                            out.set(r, j, c * s);
                            bias[r] += c * (-s * lo);
                        } else if hi >= -lo {
                            out.set(r, j, c);
                        }
                    }
                }
                accumulate(&mut lam[*source], out);
            }
            NodeKind::Copy { source } => accumulate(&mut lam[*source], l),
            NodeKind::Concat { sources } => {
                let mut off = 0;
                for &s in sources {
                    let w = nodes[s].width;
                    let mut part = Matrix::zeros(k, w);
                    for r in 0..k {
                        part.row_mut(r).copy_from_slice(&l.row(r)[off..off + w]);
                    }
                    accumulate(&mut lam[s], part);
                    off += w;
                }
            }
            NodeKind::Subtract { a, b } => {
                let mut neg = l.clone();
                for r in 0..k {
                    for v in neg.row_mut(r) {
                        *v = -*v;
                    }
                }
                accumulate(&mut lam[*a], l);
                accumulate(&mut lam[*b], neg);
            }
        }
    }
    LinearForm {
        coeffs: input_coeffs,
        bias,
    }
}

fn interval_step(
    net: &Network,
    i: NodeId,
    lower: &[Vec<f64>],
    upper: &[Vec<f64>],
    bx: &InputBox,
) -> (Vec<f64>, Vec<f64>) {
    match &net.node(i).kind {
        NodeKind::Input => (bx.lo.clone(), bx.hi.clone()),
        NodeKind::Constant { value } => (value.clone(), value.clone()),
        NodeKind::Affine {
            source,
            weights,
            bias,
        } => {
            let (sl, su) = (&lower[*source], &upper[*source]);
            let mut lo = bias.clone();
            let mut hi = bias.clone();
            for r in 0..weights.rows() {
                for (c, w) in weights.row(r).iter().enumerate() {
                    if *w >= 0.0 {
                        lo[r] += w * sl[c];
                        hi[r] += w * su[c];
                    } else {
                        lo[r] += w * su[c];
                        hi[r] += w * sl[c];
                    }
                }
            }
            (lo, hi)
        }
        NodeKind::Relu { source } => (
            lower[*source].iter().map(|v| v.max(0.0)).collect(),
            upper[*source].iter().map(|v| v.max(0.0)).collect(),
        ),
        NodeKind::Copy { source } => (lower[*source].clone(), upper[*source].clone()),
        NodeKind::Concat { sources } => (
            sources
                .iter()
                .flat_map(|&s| lower[s].iter().copied())
                .collect(),
            sources
                .iter()
                .flat_map(|&s| upper[s].iter().copied())
                .collect(),
        ),
        NodeKind::Subtract { a, b } => (
            lower[*a]
                .iter()
                .zip(&upper[*b])
                .map(|(x, y)| x - y)
                .collect(),
            upper[*a]
                .iter()
                .zip(&lower[*b])
                .map(|(x, y)| x - y)
                .collect(),
        ),
    }
}

/// Bounds for every node over `bx` restricted by `splits`, intersected with
/// `parent` when given. `tighten[i]` requests a backward pass at node `i`.
/// Returns `None` when the split constraints are infeasible on the box.
pub(crate) fn compute_bounds(
    net: &Network,
    bx: &InputBox,
    splits: &Splits,
    parent: Option<&NodeBounds>,
    tighten: &[bool],
) -> Option<NodeBounds> {
    let n = net.nodes().len();
    let mut b = NodeBounds {
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (mut lo, mut hi) = interval_step(net, i, &b.lower, &b.upper, bx);
        if tighten[i]
            && !matches!(
                net.node(i).kind,
                NodeKind::Input | NodeKind::Constant { .. }
            )
        {
            let w = net.node(i).width;
            let up = backward_upper(net, &b, i, Matrix::identity(w)).upper_over(bx);
            let mut neg = Matrix::identity(w);
            for r in 0..w {
                neg.set(r, r, -1.0);
            }
            let down = backward_upper(net, &b, i, neg).upper_over(bx);
            for j in 0..w {
                hi[j] = hi[j].min(up[j]);
                lo[j] = lo[j].max(-down[j]);
            }
        }
        if let Some(p) = parent {
            for j in 0..lo.len() {
                lo[j] = lo[j].max(p.lower[i][j]);
                hi[j] = hi[j].min(p.upper[i][j]);
            }
        }
        for (j, &ph) in splits.phase[i].iter().enumerate() {
            match ph {
                1 => lo[j] = lo[j].max(0.0),
                -1 => hi[j] = hi[j].min(0.0),
                _ => {}
            }
        }
        for j in 0..lo.len() {
            if lo[j] > hi[j] {
                let scale = 1.0 + lo[j].abs().max(hi[j].abs());
                if lo[j] - hi[j] > 1e-9 * scale {
                    return None;
                }
                let m = 0.5 * (lo[j] + hi[j]);
                lo[j] = m;
                hi[j] = m;
            }
        }
        b.lower.push(lo);
        b.upper.push(hi);
    }
    Some(b)
}

/// Sound element-wise bounds for every node of `net` over `bx`: interval
/// arithmetic tightened by a backward linear-relaxation pass at each node.
pub fn bound_propagate(net: &Network, bx: &InputBox) -> crate::error::Result<NodeBounds> {
    crate::error::check_dim("bound propagation box", net.input_dim(), bx.dim())?;
    let tighten = vec![true; net.nodes().len()];
    Ok(compute_bounds(net, bx, &Splits::none(net), None, &tighten)
        .expect("unsplit box is feasible"))
}
