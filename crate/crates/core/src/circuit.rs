//! Circuits, patching schemes and masked inference.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::net::{ComponentId, Network, Overrides};

/// A set of components of one network.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Circuit {
    members: BTreeSet<ComponentId>,
}

impl Circuit {
    pub fn new(members: impl IntoIterator<Item = ComponentId>) -> Self {
        Self {
            members: members.into_iter().collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Every component of `net`.
    pub fn full(net: &Network) -> Self {
        Self::new(net.component_ids())
    }

    pub fn members(&self) -> &BTreeSet<ComponentId> {
        &self.members
    }

    pub fn contains(&self, id: ComponentId) -> bool {
        self.members.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn without(&self, id: ComponentId) -> Self {
        let mut c = self.clone();
        c.members.remove(&id);
        c
    }

    pub fn with(&self, id: ComponentId) -> Self {
        let mut c = self.clone();
        c.members.insert(id);
        c
    }

    pub fn difference(&self, other: &Circuit) -> Self {
        Self::new(self.members.difference(&other.members).copied())
    }

    pub fn is_subset(&self, other: &Circuit) -> bool {
        self.members.is_subset(&other.members)
    }

    /// Components of `universe` not in this circuit, in ascending order.
    pub fn complement_in(&self, universe: &[ComponentId]) -> Vec<ComponentId> {
        universe
            .iter()
            .copied()
            .filter(|c| !self.contains(*c))
            .collect()
    }

    pub fn complement(&self, net: &Network) -> Vec<ComponentId> {
        self.complement_in(&net.component_ids())
    }

    /// Checks `members ⊆ components(net)`.
    pub fn check_against(&self, net: &Network) -> Result<()> {
        match self.members.iter().find(|id| net.component(**id).is_none()) {
            Some(id) => Err(Error::InvalidInput(format!(
                "component {id} is not in the network"
            ))),
            None => Ok(()),
        }
    }
}

impl FromIterator<ComponentId> for Circuit {
    fn from_iter<T: IntoIterator<Item = ComponentId>>(iter: T) -> Self {
        Self::new(iter)
    }
}

/// How complement components are overwritten during circuit inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatchingScheme {
    Zero,
    /// Per-component constants, typically empirical means.
    Mean {
        values: BTreeMap<ComponentId, f64>,
    },
    /// Activations the full network produces on input `z`.
    FromInput {
        z: Vec<f64>,
    },
    /// Activations copied from another branch inside an encoding; only
    /// meaningful to the encoders.
    Transplant,
}

impl PatchingScheme {
    /// Concrete patch values for `complement`.
    pub fn resolve(
        &self,
        net: &Network,
        complement: &[ComponentId],
    ) -> Result<Vec<(ComponentId, f64)>> {
        match self {
            PatchingScheme::Zero => Ok(complement.iter().map(|&c| (c, 0.0)).collect()),
            PatchingScheme::Mean { values } => complement
                .iter()
                .map(|&c| {
                    values.get(&c).map(|v| (c, *v)).ok_or_else(|| {
                        Error::InvalidInput(format!("mean patch has no value for {c}"))
                    })
                })
                .collect(),
            PatchingScheme::FromInput { z } => {
                check_dim("patching input", net.input_dim(), z.len())?;
                let (_, acts) = net.forward(z)?;
                Ok(complement
                    .iter()
                    .map(|&c| {
                        (
                            c,
                            acts.component(net.component(c).expect("checked component")),
                        )
                    })
                    .collect())
            }
            PatchingScheme::Transplant => Err(Error::Unsupported(
                "transplant patching only exists inside siamese encodings".into(),
            )),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, PatchingScheme::Zero | PatchingScheme::Mean { .. })
    }
}

/// `f_C(x | C̄ = α)`: forward pass where every complement component's output
/// is overwritten by its patch value before downstream use.
pub fn masked_forward(
    net: &Network,
    circuit: &Circuit,
    patch: &PatchingScheme,
    x: &[f64],
) -> Result<Vec<f64>> {
    circuit.check_against(net)?;
    let complement = circuit.complement(net);
    let values = patch.resolve(net, &complement)?;
    masked_forward_with(net, &values, x)
}

/// Masked inference with already-resolved patch values.
pub fn masked_forward_with(
    net: &Network,
    values: &[(ComponentId, f64)],
    x: &[f64],
) -> Result<Vec<f64>> {
    let mut ov = Overrides::new(net.nodes().len());
    for &(id, v) in values {
        let c = net
            .component(id)
            .ok_or_else(|| Error::InvalidInput(format!("component {id} is not in the network")))?;
        ov.set(c.node, c.unit, v);
    }
    Ok(net.forward_with(x, Some(&ov))?.0)
}

/// Mean post-activation output of every component over `samples`.
pub fn mean_patch_values(
    net: &Network,
    samples: &[Vec<f64>],
) -> Result<BTreeMap<ComponentId, f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "mean patching needs at least one sample".into(),
        ));
    }
    let mut sums: BTreeMap<ComponentId, f64> =
        net.component_ids().into_iter().map(|c| (c, 0.0)).collect();
    for x in samples {
        let (_, acts) = net.forward(x)?;
        for c in net.components() {
            *sums.get_mut(&c.id).expect("present") += acts.component(c);
        }
    }
    let n = samples.len() as f64;
    Ok(sums.into_iter().map(|(c, s)| (c, s / n)).collect())
}

/// On-disk circuit record: network fingerprint, sorted members and the
/// patching scheme used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitFile {
    pub network: String,
    pub members: Vec<ComponentId>,
    pub patching: PatchingScheme,
}

impl CircuitFile {
    pub fn new(net: &Network, circuit: &Circuit, patching: PatchingScheme) -> Self {
        Self {
            network: net.fingerprint(),
            members: circuit.members().iter().copied().collect(),
            patching,
        }
    }

    pub fn circuit(&self) -> Circuit {
        Circuit::new(self.members.iter().copied())
    }

    /// Loads the circuit, refusing if it was recorded for another network.
    pub fn circuit_for(&self, net: &Network) -> Result<Circuit> {
        if self.network != net.fingerprint() {
            return Err(Error::InvalidInput(
                "circuit file belongs to a different network".into(),
            ));
        }
        let c = self.circuit();
        c.check_against(net)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{counterexample, counterexample_ids, random_mlp, xor_gate, xor_toy};
    use crate::net::NetworkBuilder;

    #[test]
    fn full_circuit_matches_forward_bit_exact() {
        let net = random_mlp(&[2, 8, 2], 3).unwrap();
        let full = Circuit::full(&net);
        for x in [[0.1, -0.2], [1.5, 0.3], [-2.0, 2.0]] {
            let a = masked_forward(&net, &full, &PatchingScheme::Zero, &x).unwrap();
            assert_eq!(a, net.evaluate(&x).unwrap());
        }
    }

    #[test]
    fn xor_single_gate_zero_patch() {
        let net = xor_toy();
        let c = Circuit::new([xor_gate(1)]);
        assert_eq!(
            masked_forward(&net, &c, &PatchingScheme::Zero, &[1.0, 0.0]).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn counterexample_pair_removal_keeps_identity() {
        let net = counterexample(1).unwrap();
        let (p, q, v3, v4) = counterexample_ids(1);
        let c = Circuit::full(&net).without(p[0]).without(q[0]);
        assert_eq!(c, Circuit::new([v3, v4]));
        assert_eq!(
            masked_forward(&net, &c, &PatchingScheme::Zero, &[0.7]).unwrap(),
            vec![0.7]
        );
    }

    #[test]
    fn transplant_rejected_here() {
        let net = xor_toy();
        let err = masked_forward(
            &net,
            &Circuit::empty(),
            &PatchingScheme::Transplant,
            &[0.0, 0.0],
        );
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn own_activation_transplant_is_noop() {
        let net = random_mlp(&[2, 8, 2], 11).unwrap();
        let x = vec![0.3, -0.4];
        let c = Circuit::new(net.component_ids().into_iter().step_by(3));
        let patched =
            masked_forward(&net, &c, &PatchingScheme::FromInput { z: x.clone() }, &x).unwrap();
        assert_eq!(patched, net.evaluate(&x).unwrap());
    }

    #[test]
    fn mean_of_relu_samples() {
        let mut nb = NetworkBuilder::new();
        let x = nb.input(1);
        let r = nb.relu("r", x);
        nb.component(ComponentId::new(1, 0), "r", r, 0);
        let net = nb.finish(r).unwrap();
        let means = mean_patch_values(&net, &[vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(means[&ComponentId::new(1, 0)], 0.5);
    }

    #[test]
    fn mean_of_single_sample_is_its_activation() {
        let net = random_mlp(&[2, 4, 2], 5).unwrap();
        let x = vec![0.2, 0.9];
        let means = mean_patch_values(&net, &[x.clone()]).unwrap();
        let (_, acts) = net.forward(&x).unwrap();
        for c in net.components() {
            assert_eq!(means[&c.id], acts.component(c));
        }
    }

    #[test]
    fn mean_needs_samples() {
        let net = xor_toy();
        assert!(mean_patch_values(&net, &[]).is_err());
    }

    #[test]
    fn mean_patch_missing_value_errors() {
        let net = xor_toy();
        let p = PatchingScheme::Mean {
            values: BTreeMap::new(),
        };
        assert!(masked_forward(&net, &Circuit::empty(), &p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn circuit_file_checks_network() {
        let a = xor_toy();
        let b = counterexample(1).unwrap();
        let f = CircuitFile::new(&a, &Circuit::new([xor_gate(1)]), PatchingScheme::Zero);
        assert!(f.circuit_for(&a).is_ok());
        assert!(f.circuit_for(&b).is_err());
    }
}
