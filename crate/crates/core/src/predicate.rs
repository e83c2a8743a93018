//! Faithfulness predicates Φ(C, G).

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{masked_forward_with, Circuit, PatchingScheme};
use crate::encode::{
    build_input_siamese, build_patching_siamese, build_tripled_siamese, SiameseQuery, TripledSpec,
};
use crate::error::{check_dim, Error, Result};
use crate::net::{ComponentId, Network};
use crate::verify::{verify, Budget, InputRegion, Metric, Property, Status, Verdict};

/// Three-valued predicate outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    True,
    False,
    Unknown,
}

impl Outcome {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Outcome::True
        } else {
            Outcome::False
        }
    }

    pub fn from_verdict(v: &Verdict) -> Self {
        match v.status {
            Status::Certified => Outcome::True,
            Status::Falsified { .. } => Outcome::False,
            Status::Unknown { .. } => Outcome::Unknown,
        }
    }

    /// Discovery reads Unknown as False.
    pub fn is_true(self) -> bool {
        self == Outcome::True
    }
}

/// Anything that decides faithfulness of circuits over a fixed universe.
pub trait Faithfulness: Sync {
    /// Components circuits are drawn from, ascending.
    fn universe(&self) -> Vec<ComponentId>;

    fn eval(&self, circuit: &Circuit) -> Result<Outcome>;
}

/// A predicate given by a closure over member sets.
pub struct FnPredicate<F> {
    universe: Vec<ComponentId>,
    f: F,
}

impl<F: Fn(&Circuit) -> bool + Sync> FnPredicate<F> {
    pub fn new(universe: Vec<ComponentId>, f: F) -> Self {
        let mut universe = universe;
        universe.sort();
        universe.dedup();
        Self { universe, f }
    }
}

impl<F: Fn(&Circuit) -> bool + Sync> Faithfulness for FnPredicate<F> {
    fn universe(&self) -> Vec<ComponentId> {
        self.universe.clone()
    }

    fn eval(&self, circuit: &Circuit) -> Result<Outcome> {
        Ok(Outcome::from_bool((self.f)(circuit)))
    }
}

/// The abstract universe `{(1,0), …, (1,n-1)}` used by synthetic predicates.
pub fn synthetic_universe(n: usize) -> Vec<ComponentId> {
    (0..n).map(|i| ComponentId::new(1, i)).collect()
}

/// Predicate descriptor, independent of the network it is bound to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateKind {
    /// Metric checked at each batch point with masked inference.
    Sampling {
        batch: Vec<Vec<f64>>,
        golds: Vec<usize>,
        metric: Metric,
        delta: f64,
        patch: PatchingScheme,
    },
    /// Metric certified on every ball around the anchors, constant patch.
    InputRobust {
        anchors: Vec<Vec<f64>>,
        golds: Vec<usize>,
        eps: f64,
        #[serde(default)]
        clamp: Option<(Vec<f64>, Vec<f64>)>,
        metric: Metric,
        delta: f64,
        patch: PatchingScheme,
    },
    /// Metric certified at every reference input for all complement
    /// activations reachable from the patching domain.
    PatchingRobust {
        x_refs: Vec<Vec<f64>>,
        golds: Vec<usize>,
        patch_region: InputRegion,
        metric: Metric,
        delta: f64,
    },
    /// Input and patching robustness at once, one tripled query per anchor.
    Combined {
        anchors: Vec<Vec<f64>>,
        golds: Vec<usize>,
        eps_in: f64,
        eps_patch: f64,
        #[serde(default)]
        clamp: Option<(Vec<f64>, Vec<f64>)>,
        metric: Metric,
        delta: f64,
        box_patching: bool,
    },
    /// True iff the circuit contains one of the witness sets.
    SyntheticMonotone {
        universe: usize,
        witnesses: Vec<BTreeSet<usize>>,
    },
    /// Pseudo-random set function, true on the full universe and false on
    /// the empty set.
    SyntheticNonMonotone { universe: usize, seed: u64 },
}

/// A predicate bound to its network (synthetic kinds have none).
#[derive(Clone, Debug)]
pub struct Predicate {
    net: Option<Arc<Network>>,
    kind: PredicateKind,
    budget: Budget,
}

fn check_points(net: &Network, points: &[Vec<f64>], golds: &[usize]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "predicate needs at least one point".into(),
        ));
    }
    check_dim("gold labels", points.len(), golds.len())?;
    for p in points {
        check_dim("predicate point", net.input_dim(), p.len())?;
    }
    if let Some(g) = golds.iter().find(|g| **g >= net.output_dim()) {
        return Err(Error::InvalidInput(format!("gold class {g} out of range")));
    }
    Ok(())
}

impl Predicate {
    pub fn new(net: Option<Arc<Network>>, kind: PredicateKind, budget: Budget) -> Result<Self> {
        match (&kind, &net) {
            (
                PredicateKind::SyntheticMonotone {
                    universe,
                    witnesses,
                },
                _,
            ) => {
                if witnesses.iter().flatten().any(|i| i >= universe) {
                    return Err(Error::InvalidInput("witness outside the universe".into()));
                }
            }
            (PredicateKind::SyntheticNonMonotone { universe, .. }, _) => {
                if *universe > 63 {
                    return Err(Error::SizeLimit {
                        what: "synthetic universe".into(),
                        actual: *universe,
                        limit: 63,
                    });
                }
            }
            (_, None) => {
                return Err(Error::InvalidInput(
                    "this predicate kind needs a network".into(),
                ))
            }
            (k, Some(net)) => {
                let (points, golds) = match k {
                    PredicateKind::Sampling { batch, golds, .. } => (batch, golds),
                    PredicateKind::InputRobust { anchors, golds, .. } => (anchors, golds),
                    PredicateKind::PatchingRobust { x_refs, golds, .. } => (x_refs, golds),
                    PredicateKind::Combined { anchors, golds, .. } => (anchors, golds),
                    _ => unreachable!(),
                };
                check_points(net, points, golds)?;
            }
        }
        Ok(Self { net, kind, budget })
    }

    pub fn sampling(
        net: Arc<Network>,
        batch: Vec<Vec<f64>>,
        golds: Vec<usize>,
        metric: Metric,
        delta: f64,
        patch: PatchingScheme,
    ) -> Result<Self> {
        Self::new(
            Some(net),
            PredicateKind::Sampling {
                batch,
                golds,
                metric,
                delta,
                patch,
            },
            Budget::default(),
        )
    }

    /// Monotone predicate whose faithful circuits are the supersets of
    /// `witnesses`.
    pub fn synthetic_monotone(universe: usize, witnesses: Vec<BTreeSet<usize>>) -> Result<Self> {
        Self::new(
            None,
            PredicateKind::SyntheticMonotone {
                universe,
                witnesses,
            },
            Budget::default(),
        )
    }

    /// Seeded random monotone predicate: one to three nonempty witness sets.
    pub fn random_monotone(universe: usize, seed: u64) -> Result<Self> {
        if universe == 0 {
            return Err(Error::InvalidInput(
                "synthetic universe must be nonempty".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=3);
        let witnesses = (0..k)
            .map(|_| {
                let size = rng.gen_range(1..=universe.div_ceil(2));
                rand::seq::index::sample(&mut rng, universe, size)
                    .into_iter()
                    .collect()
            })
            .collect();
        Self::synthetic_monotone(universe, witnesses)
    }

    pub fn synthetic_non_monotone(universe: usize, seed: u64) -> Result<Self> {
        Self::new(
            None,
            PredicateKind::SyntheticNonMonotone { universe, seed },
            Budget::default(),
        )
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    pub fn kind(&self) -> &PredicateKind {
        &self.kind
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn network(&self) -> Option<&Arc<Network>> {
        self.net.as_ref()
    }

    /// Members as synthetic indices.
    fn indices(circuit: &Circuit) -> BTreeSet<usize> {
        circuit.members().iter().map(|c| c.unit).collect()
    }

    fn net(&self) -> &Network {
        self.net.as_deref().expect("checked at construction")
    }

    fn resolve(&self, metric: &Metric, point: &[f64], gold: usize, delta: f64) -> Result<Property> {
        metric.resolve(self.net(), point, gold, delta)
    }

    /// The verification queries a robust predicate decides `circuit` by,
    /// one per anchor (or reference input).
    pub fn queries(&self, circuit: &Circuit) -> Result<Vec<SiameseQuery>> {
        match &self.kind {
            PredicateKind::InputRobust {
                anchors,
                golds,
                eps,
                clamp,
                metric,
                delta,
                patch,
            } => anchors
                .iter()
                .zip(golds)
                .map(|(a, g)| {
                    let mut region = InputRegion::ball(a.clone(), *eps);
                    if let Some((lo, hi)) = clamp {
                        region = region.with_clamp(lo.clone(), hi.clone());
                    }
                    build_input_siamese(
                        self.net(),
                        circuit,
                        patch,
                        &region,
                        &self.resolve(metric, a, *g, *delta)?,
                    )
                })
                .collect(),
            PredicateKind::PatchingRobust {
                x_refs,
                golds,
                patch_region,
                metric,
                delta,
            } => x_refs
                .iter()
                .zip(golds)
                .map(|(x, g)| {
                    build_patching_siamese(
                        self.net(),
                        circuit,
                        x,
                        patch_region,
                        &self.resolve(metric, x, *g, *delta)?,
                    )
                })
                .collect(),
            PredicateKind::Combined {
                anchors,
                golds,
                eps_in,
                eps_patch,
                clamp,
                metric,
                delta,
                box_patching,
            } => anchors
                .iter()
                .zip(golds)
                .map(|(a, g)| {
                    let spec = TripledSpec {
                        anchor: a,
                        eps_in: *eps_in,
                        eps_patch: *eps_patch,
                        clamp: clamp.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice())),
                        box_patching: *box_patching,
                    };
                    build_tripled_siamese(
                        self.net(),
                        circuit,
                        &spec,
                        &self.resolve(metric, a, *g, *delta)?,
                    )
                })
                .collect(),
            _ => Err(Error::Unsupported(
                "only robust predicates are decided by verification queries".into(),
            )),
        }
    }

    fn conjoin(&self, queries: impl Iterator<Item = Result<SiameseQuery>>) -> Result<Outcome> {
        let mut unknown = false;
        for q in queries {
            match Outcome::from_verdict(&verify(&q?, &self.budget)?) {
                Outcome::False => return Ok(Outcome::False),
                Outcome::Unknown => unknown = true,
                Outcome::True => {}
            }
        }
        Ok(if unknown {
            Outcome::Unknown
        } else {
            Outcome::True
        })
    }
}

impl Faithfulness for Predicate {
    fn universe(&self) -> Vec<ComponentId> {
        match &self.kind {
            PredicateKind::SyntheticMonotone { universe, .. }
            | PredicateKind::SyntheticNonMonotone { universe, .. } => synthetic_universe(*universe),
            _ => self.net().component_ids(),
        }
    }

    fn eval(&self, circuit: &Circuit) -> Result<Outcome> {
        match &self.kind {
            PredicateKind::SyntheticMonotone { witnesses, .. } => {
                let m = Self::indices(circuit);
                Ok(Outcome::from_bool(
                    witnesses.iter().any(|w| w.is_subset(&m)),
                ))
            }
            PredicateKind::SyntheticNonMonotone { universe, seed } => {
                let m = Self::indices(circuit);
                if m.len() == *universe {
                    return Ok(Outcome::True);
                }
                if m.is_empty() {
                    return Ok(Outcome::False);
                }
                let mask: u64 = m.iter().map(|i| 1u64 << i).sum();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ mask.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                Ok(Outcome::from_bool(rng.gen_bool(0.5)))
            }
            PredicateKind::Sampling {
                batch,
                golds,
                metric,
                delta,
                patch,
            } => {
                let net = self.net();
                circuit.check_against(net)?;
                let values = patch.resolve(net, &circuit.complement(net))?;
                for (x, g) in batch.iter().zip(golds) {
                    let prop = self.resolve(metric, x, *g, *delta)?;
                    let reference = net.evaluate(x)?;
                    let patched = masked_forward_with(net, &values, x)?;
                    if !prop.holds(&reference, &patched) {
                        return Ok(Outcome::False);
                    }
                }
                Ok(Outcome::True)
            }
            _ => self.conjoin(self.queries(circuit)?.into_iter().map(Ok)),
        }
    }
}

/// Whether monotonicity of a predicate is guaranteed by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneCertificate {
    Guaranteed,
    Unknown,
}

/// `true` iff no component's value depends (through nonzero weights) on
/// another component's value.
pub fn components_independent(net: &Network) -> bool {
    use crate::net::NodeKind;
    let nodes = net.nodes();
    let is_comp: BTreeSet<(usize, usize)> =
        net.components().iter().map(|c| (c.node, c.unit)).collect();
    net.components().iter().all(|c| {
        let mut reach: Vec<Vec<bool>> = nodes.iter().map(|n| vec![false; n.width]).collect();
        reach[c.node][c.unit] = true;
        for i in (0..=c.node).rev() {
            let live: Vec<usize> = (0..nodes[i].width).filter(|j| reach[i][*j]).collect();
            if live.is_empty() {
                continue;
            }
            if i != c.node && live.iter().any(|j| is_comp.contains(&(i, *j))) {
                return false;
            }
            match &nodes[i].kind {
                NodeKind::Input | NodeKind::Constant { .. } => {}
                NodeKind::Affine {
                    source, weights, ..
                } => {
                    for &j in &live {
                        for (k, w) in weights.row(j).iter().enumerate() {
                            if *w != 0.0 {
                                reach[*source][k] = true;
                            }
                        }
                    }
                }
                NodeKind::Relu { source } | NodeKind::Copy { source } => {
                    for &j in &live {
                        reach[*source][j] = true;
                    }
                }
                NodeKind::Concat { sources } => {
                    let mut off = 0;
                    for &s in sources {
                        for k in 0..nodes[s].width {
                            if reach[i][off + k] {
                                reach[s][k] = true;
                            }
                        }
                        off += nodes[s].width;
                    }
                }
                NodeKind::Subtract { a, b } => {
                    for &j in &live {
                        reach[*a][j] = true;
                        reach[*b][j] = true;
                    }
                }
            }
        }
        true
    })
}

/// Monotonicity is guaranteed for synthetic monotone predicates and for the
/// box-patching combined predicate when the input domain lies inside the
/// patching domain and components do not feed each other (so every kept
/// component's own value on the input domain lies inside its patch box).
pub fn is_monotone_certificate(pred: &Predicate) -> MonotoneCertificate {
    match &pred.kind {
        PredicateKind::SyntheticMonotone { .. } => MonotoneCertificate::Guaranteed,
        PredicateKind::Combined {
            eps_in,
            eps_patch,
            box_patching: true,
            ..
        } if eps_in <= eps_patch && components_independent(pred.net()) => {
            MonotoneCertificate::Guaranteed
        }
        _ => MonotoneCertificate::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{random_mlp, xor_gate, xor_toy};

    fn boolean_inputs() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ]
    }

    #[test]
    fn xor_pair_is_unfaithful() {
        let p = Predicate::sampling(
            Arc::new(xor_toy()),
            boolean_inputs(),
            vec![0; 4],
            Metric::AbsMax,
            0.0,
            PatchingScheme::Zero,
        )
        .unwrap();
        assert_eq!(
            p.eval(&Circuit::new([xor_gate(1), xor_gate(2)])).unwrap(),
            Outcome::False
        );
        assert_eq!(p.eval(&Circuit::new([xor_gate(1)])).unwrap(), Outcome::True);
    }

    #[test]
    fn synthetic_monotone_containment() {
        let p = Predicate::synthetic_monotone(5, vec![[1, 3].into(), [4].into()]).unwrap();
        let c = |v: &[usize]| Circuit::new(v.iter().map(|i| ComponentId::new(1, *i)));
        assert_eq!(p.eval(&c(&[1, 2, 3])).unwrap(), Outcome::True);
        assert_eq!(p.eval(&c(&[1, 2])).unwrap(), Outcome::False);
        assert_eq!(p.eval(&c(&[4])).unwrap(), Outcome::True);
    }

    #[test]
    fn certificates() {
        let net = Arc::new(random_mlp(&[2, 4, 2], 0).unwrap());
        let kind = |eps_in, box_patching| PredicateKind::Combined {
            anchors: vec![vec![0.0, 0.0]],
            golds: vec![0],
            eps_in,
            eps_patch: 0.1,
            clamp: None,
            metric: Metric::LogitDiff,
            delta: 0.5,
            box_patching,
        };
        let p = |k| Predicate::new(Some(net.clone()), k, Budget::default()).unwrap();
        assert_eq!(
            is_monotone_certificate(&p(kind(0.05, true))),
            MonotoneCertificate::Guaranteed
        );
        assert_eq!(
            is_monotone_certificate(&p(kind(0.2, true))),
            MonotoneCertificate::Unknown
        );
        assert_eq!(
            is_monotone_certificate(&p(kind(0.05, false))),
            MonotoneCertificate::Unknown
        );
        assert!(!components_independent(
            &random_mlp(&[2, 3, 3, 2], 0).unwrap()
        ));
    }
}
