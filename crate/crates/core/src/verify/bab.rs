//! Best-first branch-and-bound maximization of a linear output objective.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use web_time::{Duration, Instant};

use crate::linalg::Matrix;
use crate::net::{Network, NodeId, NodeKind};

use super::bounds::{backward_upper, compute_bounds, preactivation_nodes, NodeBounds, Splits};
use super::lp::{maximize_affine, LpOutcome};
use super::property::Objective;
use super::region::InputBox;
use super::UnknownReason;

/// Shared resource accounting for one verification call.
#[derive(Debug)]
pub(crate) struct Tracker {
    start: Instant,
    deadline: Option<Instant>,
    max_subproblems: Option<usize>,
    pub(crate) subproblems: usize,
}

impl Tracker {
    pub(crate) fn new(timeout: Option<Duration>, max_subproblems: Option<usize>) -> Self {
        let start = Instant::now();
        Self {
            start,
            deadline: timeout.map(|t| start + t),
            max_subproblems,
            subproblems: 0,
        }
    }

    pub(crate) fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    fn charge(&mut self) -> Option<UnknownReason> {
        if self.max_subproblems.is_some_and(|m| self.subproblems >= m) {
            return Some(UnknownReason::Budget);
        }
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return Some(UnknownReason::Timeout);
        }
        self.subproblems += 1;
        None
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct MaxOptions {
    /// Stop as soon as the global upper bound is `<=` this.
    pub(crate) certify_below: Option<f64>,
    /// Stop as soon as an exact value `>` this is found.
    pub(crate) falsify_above: Option<f64>,
    /// Stop when `upper - lower <= tolerance`.
    pub(crate) tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stop {
    Certified,
    Falsified,
    Converged,
    /// The search tree was fully explored; `upper == lower` up to round-off.
    Exhausted,
    Unknown(UnknownReason),
}

#[derive(Clone, Debug)]
pub(crate) struct MaxResult {
    pub(crate) upper: f64,
    pub(crate) lower: f64,
    pub(crate) argmax: Vec<f64>,
    pub(crate) stop: Stop,
}

/// Which units can influence `coeffs · output` through nonzero weights.
pub(crate) fn relevance(net: &Network, coeffs: &[f64]) -> Vec<Vec<bool>> {
    let nodes = net.nodes();
    let mut rel: Vec<Vec<bool>> = nodes.iter().map(|n| vec![false; n.width]).collect();
    for (j, c) in coeffs.iter().enumerate() {
        rel[net.output_node()][j] = *c != 0.0;
    }
    for i in (0..nodes.len()).rev() {
        if !rel[i].iter().any(|r| *r) {
            continue;
        }
        let live: Vec<usize> = (0..nodes[i].width).filter(|j| rel[i][*j]).collect();
        match &nodes[i].kind {
            NodeKind::Input | NodeKind::Constant { .. } => {}
            NodeKind::Affine {
                source, weights, ..
            } => {
                for &j in &live {
                    for (c, w) in weights.row(j).iter().enumerate() {
                        if *w != 0.0 {
                            rel[*source][c] = true;
                        }
                    }
                }
            }
            NodeKind::Relu { source } | NodeKind::Copy { source } => {
                for &j in &live {
                    rel[*source][j] = true;
                }
            }
            NodeKind::Concat { sources } => {
                let mut off = 0;
                for &s in sources {
                    for k in 0..nodes[s].width {
                        if rel[i][off + k] {
                            rel[s][k] = true;
                        }
                    }
                    off += nodes[s].width;
                }
            }
            NodeKind::Subtract { a, b } => {
                for &j in &live {
                    rel[*a][j] = true;
                    rel[*b][j] = true;
                }
            }
        }
    }
    rel
}

struct Sub {
    upper: f64,
    seq: usize,
    splits: Splits,
    bounds: NodeBounds,
}

impl PartialEq for Sub {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Sub {}
impl PartialOrd for Sub {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Sub {
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper
            .total_cmp(&other.upper)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Problem-wide constants for one maximization.
pub(crate) struct Problem<'a> {
    pub(crate) net: &'a Network,
    pub(crate) bx: &'a InputBox,
    pub(crate) obj: &'a Objective,
    preact: Vec<bool>,
    relevant: Vec<Vec<bool>>,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(net: &'a Network, bx: &'a InputBox, obj: &'a Objective) -> Self {
        let preact = preactivation_nodes(net);
        let relevant = relevance(net, &obj.coeffs);
        Self {
            net,
            bx,
            obj,
            preact,
            relevant,
        }
    }

    pub(crate) fn root_bounds(&self) -> NodeBounds {
        compute_bounds(
            self.net,
            self.bx,
            &Splits::none(self.net),
            None,
            &self.preact,
        )
        .expect("unsplit box is feasible")
    }

    fn exact(&self, x: &[f64]) -> f64 {
        self.obj
            .value(&self.net.evaluate(x).expect("box matches input dim"))
    }

    /// Linear upper bound of the objective, its value over the box and the
    /// maximizing vertex.
    fn upper(&self, bounds: &NodeBounds) -> (f64, Vec<f64>, super::bounds::LinearForm) {
        let c = Matrix::from_vec(1, self.obj.coeffs.len(), self.obj.coeffs.clone()).expect("row");
        let form = backward_upper(self.net, bounds, self.net.output_node(), c);
        let crown = form.upper_over(self.bx)[0];
        let (lo, hi) = bounds.node(self.net.output_node());
        let interval: f64 = self
            .obj
            .coeffs
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(c, (l, h))| if *c >= 0.0 { c * h } else { c * l })
            .sum();
        let vertex = form.argmax_vertex(0, self.bx);
        (crown.min(interval) + self.obj.offset, vertex, form)
    }

    /// Relevant unstable unit with the widest pre-activation interval.
    fn branch_unit(&self, bounds: &NodeBounds) -> Option<(NodeId, usize)> {
        let mut best: Option<(f64, NodeId, usize)> = None;
        for (i, pre) in self.preact.iter().enumerate() {
            if !*pre {
                continue;
            }
            for j in 0..bounds.lower[i].len() {
                let (l, u) = (bounds.lower[i][j], bounds.upper[i][j]);
                if !(self.relevant[i][j] && l < 0.0 && u > 0.0) {
                    continue;
                }
                if best.is_none_or(|(w, _, _)| u - l > w) {
                    best = Some((u - l, i, j));
                }
            }
        }
        best.map(|(_, i, j)| (i, j))
    }

    /// Exact maximum over a subproblem with no relevant unstable unit.
    fn solve_leaf(
        &self,
        splits: &Splits,
        bounds: &NodeBounds,
        form: &super::bounds::LinearForm,
    ) -> LeafOutcome {
        if splits.count == 0 {
            let x = form.argmax_vertex(0, self.bx);
            return LeafOutcome::Point(x);
        }
        let halfspaces: Vec<(Vec<f64>, f64)> = splits
            .iter()
            .map(|(node, unit, phase)| {
                let w = self.net.node(node).width;
                let mut e = Matrix::zeros(1, w);
                e.set(0, unit, phase as f64);
                let f = backward_upper(self.net, bounds, node, e);
                (f.coeffs.row(0).to_vec(), f.bias[0])
            })
            .collect();
        match maximize_affine(
            form.coeffs.row(0),
            form.bias[0] + self.obj.offset,
            self.bx,
            &halfspaces,
        ) {
            LpOutcome::Optimal { value, x } => LeafOutcome::Lp { value, x },
            LpOutcome::Infeasible => LeafOutcome::Empty,
            LpOutcome::Failed => LeafOutcome::Failed,
        }
    }
}

enum LeafOutcome {
    Point(Vec<f64>),
    Lp { value: f64, x: Vec<f64> },
    Empty,
    Failed,
}

/// Best-first branch and bound. `seed` is a known in-box point (e.g. an
/// attack result) used as the initial incumbent.
pub(crate) fn maximize(
    p: &Problem<'_>,
    root: NodeBounds,
    seed: Option<Vec<f64>>,
    opts: &MaxOptions,
    tracker: &mut Tracker,
) -> MaxResult {
    let mut best_x = seed.unwrap_or_else(|| p.bx.center());
    let mut best = p.exact(&best_x);
    let offer = |x: Vec<f64>, best: &mut f64, best_x: &mut Vec<f64>| {
        let v = p.exact(&x);
        if v > *best {
            *best = v;
            *best_x = x;
        }
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut numerical = false;
    let (u, vertex, _) = p.upper(&root);
    offer(vertex, &mut best, &mut best_x);
    heap.push(Sub {
        upper: u,
        seq,
        splits: Splits::none(p.net),
        bounds: root,
    });

    let finish = |upper: f64, lower: f64, argmax: Vec<f64>, stop: Stop| MaxResult {
        upper,
        lower,
        argmax,
        stop,
    };
    loop {
        let global_upper = heap.peek().map_or(best, |s: &Sub| s.upper.max(best));
        if opts.falsify_above.is_some_and(|t| best > t) {
            return finish(global_upper, best, best_x, Stop::Falsified);
        }
        if opts.certify_below.is_some_and(|t| global_upper <= t) {
            return finish(global_upper, best, best_x, Stop::Certified);
        }
        let Some(sub) = heap.pop() else {
            let stop = if numerical {
                Stop::Unknown(UnknownReason::Numerical)
            } else {
                Stop::Exhausted
            };
            return finish(best, best, best_x, stop);
        };
        if sub.upper <= best + opts.tolerance {
            // nothing left that can beat the incumbent by more than the tolerance
            if numerical {
                return finish(
                    sub.upper.max(best),
                    best,
                    best_x,
                    Stop::Unknown(UnknownReason::Numerical),
                );
            }
            return finish(sub.upper.max(best), best, best_x, Stop::Converged);
        }
        if let Some(reason) = tracker.charge() {
            return finish(global_upper, best, best_x, Stop::Unknown(reason));
        }
        match p.branch_unit(&sub.bounds) {
            None => {
                let (_, _, form) = p.upper(&sub.bounds);
                match p.solve_leaf(&sub.splits, &sub.bounds, &form) {
                    LeafOutcome::Point(x) => offer(x, &mut best, &mut best_x),
                    LeafOutcome::Lp { value, x } => {
                        offer(x, &mut best, &mut best_x);
                        // LP optimum must be attained by the exact network
                        if value > best + 1e-7 * (1.0 + value.abs()) {
                            numerical = true;
                        }
                    }
                    LeafOutcome::Empty => {}
                    LeafOutcome::Failed => numerical = true,
                }
            }
            Some((node, unit)) => {
                for phase in [1i8, -1] {
                    let splits = sub.splits.with(node, unit, phase);
                    let Some(bounds) =
                        compute_bounds(p.net, p.bx, &splits, Some(&sub.bounds), &p.preact)
                    else {
                        continue;
                    };
                    let (u, vertex, _) = p.upper(&bounds);
                    let u = u.min(sub.upper);
                    if p.bx.contains(&vertex) {
                        offer(vertex, &mut best, &mut best_x);
                    }
                    if opts.certify_below.is_some_and(|t| u <= t) || u <= best {
                        continue;
                    }
                    seq += 1;
                    heap.push(Sub {
                        upper: u,
                        seq,
                        splits,
                        bounds,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::random_mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_maximum_of_abs() {
        // |x| = relu(x) + relu(-x) over [-1, 0.5]: max 1 at x = -1
        let mut nb = crate::net::NetworkBuilder::new();
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
            Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
            vec![0.0],
        );
        let net = nb.finish(y).unwrap();
        let bx = InputBox::new(vec![-1.0], vec![0.5]).unwrap();
        let obj = Objective {
            coeffs: vec![-1.0],
            offset: 0.0,
            threshold: 0.0,
        };
        // maximize -|x|: 0 at x = 0
        let p = Problem::new(&net, &bx, &obj);
        let mut t = Tracker::new(None, None);
        let r = maximize(&p, p.root_bounds(), None, &MaxOptions::default(), &mut t);
        assert!(r.upper.abs() < 1e-12 && r.lower.abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn converged_max_matches_dense_sampling() {
        let net = random_mlp(&[2, 8, 1], 4).unwrap();
        let bx = InputBox::ball(&[0.2, -0.1], 0.6).unwrap();
        let obj = Objective {
            coeffs: vec![1.0],
            offset: 0.0,
            threshold: 0.0,
        };
        let p = Problem::new(&net, &bx, &obj);
        let mut t = Tracker::new(None, None);
        let r = maximize(&p, p.root_bounds(), None, &MaxOptions::default(), &mut t);
        assert!((r.upper - r.lower).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let x = bx.sample(&mut rng);
            assert!(net.evaluate(&x).unwrap()[0] <= r.upper + 1e-9);
        }
    }
}
