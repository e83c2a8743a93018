//! Siamese encodings: the full network and a patched circuit stacked into
//! one network whose output the verifier can compare.
//!
//! Patching is expressed with plain affine nodes: a patched node `h` with
//! keep-mask `k` becomes `diag(k)·h + diag(1-k)·r`, where `r` is a constant,
//! a copy of another branch's node, or a slice of extra input dimensions.
//! Nodes upstream of every patch are shared between branches that read the
//! same input, so identical computations are bounded (and split) only once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, PatchingScheme};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::net::{ComponentId, Network, NetworkBuilder, NodeId, NodeKind};
use crate::verify::{
    bound_propagate, BranchSlots, InputBox, InputRegion, OutputSpec, Property, Slot,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    InputSiamese,
    PatchingSiamese,
    Tripled,
    /// Tripled variant whose patch values range over a box of extra inputs.
    TripledBox,
}

/// A named contiguous segment of the encoding's input vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wiring {
    pub kind: EncodingKind,
    pub inputs: Vec<Segment>,
    /// For tripled encodings: whether the input domain lies inside the
    /// patching domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs_within_patch_domain: Option<bool>,
}

/// An encoding network plus what to verify on it.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseQuery {
    pub net: Network,
    /// Encoding-input boxes; the spec must hold on each.
    pub boxes: Vec<InputBox>,
    pub spec: OutputSpec,
    pub wiring: Wiring,
}

#[derive(Serialize, Deserialize)]
struct QueryDoc {
    net: serde_json::Value,
    boxes: Vec<InputBox>,
    spec: OutputSpec,
    wiring: Wiring,
}

impl SiameseQuery {
    pub fn to_json(&self) -> Result<String> {
        let doc = QueryDoc {
            net: serde_json::from_str(&self.net.to_json())?,
            boxes: self.boxes.clone(),
            spec: self.spec.clone(),
            wiring: self.wiring.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: QueryDoc = serde_json::from_str(text)?;
        let net = Network::from_json(&doc.net.to_string())?;
        doc.spec.validate(net.output_dim())?;
        for b in &doc.boxes {
            check_dim("query box", net.input_dim(), b.dim())?;
        }
        Ok(Self {
            net,
            boxes: doc.boxes,
            spec: doc.spec,
            wiring: doc.wiring,
        })
    }
}

/// Replacement values for the patched units of one node.
enum Replace {
    Constant(Vec<f64>),
    /// A node of the encoding with the same width.
    Node(NodeId),
}

/// Patched units grouped by node.
fn patched_units(
    net: &Network,
    complement: &[ComponentId],
) -> BTreeMap<NodeId, Vec<(usize, ComponentId)>> {
    let mut by_node: BTreeMap<NodeId, Vec<(usize, ComponentId)>> = BTreeMap::new();
    for &c in complement {
        let comp = net.component(c).expect("checked component");
        by_node.entry(comp.node).or_default().push((comp.unit, c));
    }
    by_node
}

/// Copies every node of `net` into `nb`, reading `input` in place of the
/// network input. Nodes in `patch` are followed by a mask node. When `share`
/// is given (a mapping of an earlier copy on the same input), nodes with no
/// patched ancestor reuse it.
fn copy_branch(
    nb: &mut NetworkBuilder,
    net: &Network,
    tag: &str,
    input: NodeId,
    patch: &BTreeMap<NodeId, Vec<usize>>,
    mut replace: impl FnMut(&mut NetworkBuilder, NodeId) -> Replace,
    share: Option<&[NodeId]>,
) -> Vec<NodeId> {
    let nodes = net.nodes();
    let mut map = vec![usize::MAX; nodes.len()];
    let mut dirty = vec![false; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        let srcs = node.kind.sources();
        dirty[i] = srcs.iter().any(|&s| dirty[s]);
        let id = if let (Some(shared), false) = (share, dirty[i]) {
            shared[i]
        } else {
            let kind = match &node.kind {
                NodeKind::Input => None,
                k => Some(remap(k, &map)),
            };
            match kind {
                None => input,
                Some(kind) => nb.add_node(&format!("{tag}.{}", node.name), kind, node.width),
            }
        };
        map[i] = id;
        if let Some(units) = patch.get(&i) {
            let w = node.width;
            let mut keep = vec![1.0; w];
            for &u in units {
                keep[u] = 0.0;
            }
            let masked = match replace(nb, i) {
                Replace::Constant(alpha) => {
                    let mut m = Matrix::zeros(w, w);
                    let mut bias = vec![0.0; w];
                    for j in 0..w {
                        m.set(j, j, keep[j]);
                        if keep[j] == 0.0 {
                            bias[j] = alpha[j];
                        }
                    }
                    nb.affine(&format!("{tag}.{}.patch", node.name), id, m, bias)
                }
                Replace::Node(r) => {
                    let cat = nb.concat(&format!("{tag}.{}.patch_in", node.name), vec![id, r]);
                    let mut m = Matrix::zeros(w, 2 * w);
                    for j in 0..w {
                        m.set(j, j, keep[j]);
                        m.set(j, w + j, 1.0 - keep[j]);
                    }
                    nb.affine(&format!("{tag}.{}.patch", node.name), cat, m, vec![0.0; w])
                }
            };
            map[i] = masked;
            dirty[i] = true;
        }
    }
    map
}

fn remap(kind: &NodeKind, map: &[NodeId]) -> NodeKind {
    match kind.clone() {
        NodeKind::Input => NodeKind::Input,
        NodeKind::Affine {
            source,
            weights,
            bias,
        } => NodeKind::Affine {
            source: map[source],
            weights,
            bias,
        },
        NodeKind::Relu { source } => NodeKind::Relu {
            source: map[source],
        },
        NodeKind::Copy { source } => NodeKind::Copy {
            source: map[source],
        },
        NodeKind::Constant { value } => NodeKind::Constant { value },
        NodeKind::Concat { sources } => NodeKind::Concat {
            sources: sources.iter().map(|s| map[*s]).collect(),
        },
        NodeKind::Subtract { a, b } => NodeKind::Subtract {
            a: map[a],
            b: map[b],
        },
    }
}

fn units_only(
    by_node: &BTreeMap<NodeId, Vec<(usize, ComponentId)>>,
) -> BTreeMap<NodeId, Vec<usize>> {
    by_node
        .iter()
        .map(|(n, v)| (*n, v.iter().map(|(u, _)| *u).collect()))
        .collect()
}

fn siamese_slots(d: usize) -> BranchSlots {
    BranchSlots {
        reference: Slot::Outputs { start: 0, len: d },
        circuit: Slot::Outputs { start: d, len: d },
    }
}

fn check_property(net: &Network, property: &Property) -> Result<()> {
    OutputSpec {
        property: property.clone(),
        slots: siamese_slots(net.output_dim()),
    }
    .validate(2 * net.output_dim())
}

/// Shared input; branch 1 = `net`, branch 2 = `circuit` with the complement
/// fixed to constants. Output is `(f_G(x), f_C(x))`.
pub fn build_input_siamese(
    net: &Network,
    circuit: &Circuit,
    patch: &PatchingScheme,
    region: &InputRegion,
    property: &Property,
) -> Result<SiameseQuery> {
    if !patch.is_constant() {
        return Err(Error::InvalidInput(
            "input-robust encoding needs a constant patch (zero or mean)".into(),
        ));
    }
    circuit.check_against(net)?;
    check_property(net, property)?;
    let boxes = region.boxes()?;
    check_dim("input region", net.input_dim(), region.dim())?;
    let complement = circuit.complement(net);
    let values: BTreeMap<ComponentId, f64> = patch.resolve(net, &complement)?.into_iter().collect();
    let by_node = patched_units(net, &complement);

    let mut nb = NetworkBuilder::new();
    let x = nb.input(net.input_dim());
    let g = copy_branch(
        &mut nb,
        net,
        "G",
        x,
        &BTreeMap::new(),
        |_, _| unreachable!(),
        None,
    );
    let c = copy_branch(
        &mut nb,
        net,
        "C",
        x,
        &units_only(&by_node),
        |_, node| {
            let mut alpha = vec![0.0; net.node(node).width];
            for (u, id) in &by_node[&node] {
                alpha[*u] = values[id];
            }
            Replace::Constant(alpha)
        },
        Some(&g),
    );
    let out = nb.concat("out", vec![g[net.output_node()], c[net.output_node()]]);
    let d = net.output_dim();
    Ok(SiameseQuery {
        net: nb.finish(out)?,
        boxes,
        spec: OutputSpec {
            property: property.clone(),
            slots: siamese_slots(d),
        },
        wiring: Wiring {
            kind: EncodingKind::InputSiamese,
            inputs: vec![Segment {
                name: "x".into(),
                start: 0,
                len: net.input_dim(),
            }],
            inputs_within_patch_domain: None,
        },
    })
}

/// Branch A = `net` on free `z`; branch B = `circuit` on the fixed input
/// `x_ref` with every complement component copied from branch A. Output is
/// branch B's logits, compared against the constant `f_G(x_ref)`.
pub fn build_patching_siamese(
    net: &Network,
    circuit: &Circuit,
    x_ref: &[f64],
    patch_region: &InputRegion,
    property: &Property,
) -> Result<SiameseQuery> {
    check_dim("reference input", net.input_dim(), x_ref.len())?;
    check_dim("patch region", net.input_dim(), patch_region.dim())?;
    circuit.check_against(net)?;
    check_property(net, property)?;
    let boxes = patch_region.boxes()?;
    let reference = net.evaluate(x_ref)?;
    let complement = circuit.complement(net);
    let by_node = patched_units(net, &complement);

    let mut nb = NetworkBuilder::new();
    let z = nb.input(net.input_dim());
    let a = copy_branch(
        &mut nb,
        net,
        "A",
        z,
        &BTreeMap::new(),
        |_, _| unreachable!(),
        None,
    );
    let xr = nb.constant("x_ref", x_ref.to_vec());
    let b = copy_branch(
        &mut nb,
        net,
        "B",
        xr,
        &units_only(&by_node),
        |nb, node| Replace::Node(nb.copy(&format!("B.transplant{node}"), a[node])),
        None,
    );
    let out = nb.copy("out", b[net.output_node()]);
    let d = net.output_dim();
    Ok(SiameseQuery {
        net: nb.finish(out)?,
        boxes,
        spec: OutputSpec {
            property: property.clone(),
            slots: BranchSlots {
                reference: Slot::Constant { values: reference },
                circuit: Slot::Outputs { start: 0, len: d },
            },
        },
        wiring: Wiring {
            kind: EncodingKind::PatchingSiamese,
            inputs: vec![Segment {
                name: "z".into(),
                start: 0,
                len: net.input_dim(),
            }],
            inputs_within_patch_domain: None,
        },
    })
}

/// Parameters of a tripled encoding around one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct TripledSpec<'a> {
    pub anchor: &'a [f64],
    pub eps_in: f64,
    pub eps_patch: f64,
    /// Optional per-dimension input clamp applied to both domains.
    pub clamp: Option<(&'a [f64], &'a [f64])>,
    /// Replace transplanted activations by a box of their bound ranges.
    pub box_patching: bool,
}

fn clamped_ball(anchor: &[f64], eps: f64, clamp: Option<(&[f64], &[f64])>) -> Result<InputBox> {
    let mut r = InputRegion::ball(anchor.to_vec(), eps);
    if let Some((lo, hi)) = clamp {
        r = r.with_clamp(lo.to_vec(), hi.to_vec());
    }
    Ok(r.boxes()?.remove(0))
}

/// Input `(z′, z)`: branch 1 = `net` on `z′`, branch 2 = `net` on `z`,
/// branch 3 = `circuit` on `z` with the complement copied from branch 1.
/// Output is `(f_G(z), f_C(z | C̄ = H_C̄(z′)))`.
///
/// With `box_patching`, branch 1 is dropped and the complement values are
/// extra inputs ranging over sound bounds of their activations on the
/// patching domain; the input is then `(z, p)`.
pub fn build_tripled_siamese(
    net: &Network,
    circuit: &Circuit,
    spec: &TripledSpec<'_>,
    property: &Property,
) -> Result<SiameseQuery> {
    let n = net.input_dim();
    check_dim("anchor", n, spec.anchor.len())?;
    circuit.check_against(net)?;
    check_property(net, property)?;
    let zin = clamped_ball(spec.anchor, spec.eps_in, spec.clamp)?;
    let zpatch = clamped_ball(spec.anchor, spec.eps_patch, spec.clamp)?;
    let within = spec.eps_in <= spec.eps_patch;
    let complement = circuit.complement(net);
    let by_node = patched_units(net, &complement);
    let units = units_only(&by_node);
    let d = net.output_dim();

    let mut nb = NetworkBuilder::new();
    let (query_box, inputs, g, c) = if spec.box_patching {
        let k = complement.len();
        let input = nb.input(n + k);
        let z = nb.slice("z", input, 0..n);
        let g = copy_branch(
            &mut nb,
            net,
            "G",
            z,
            &BTreeMap::new(),
            |_, _| unreachable!(),
            None,
        );
        // patch input p_i sits at position n + (index of component in complement)
        let pos: BTreeMap<ComponentId, usize> = complement
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, n + i))
            .collect();
        let c = copy_branch(
            &mut nb,
            net,
            "C",
            z,
            &units,
            |nb, node| {
                let w = net.node(node).width;
                let mut m = Matrix::zeros(w, n + k);
                for (u, id) in &by_node[&node] {
                    m.set(*u, pos[id], 1.0);
                }
                Replace::Node(nb.affine(&format!("p{node}"), input, m, vec![0.0; w]))
            },
            Some(&g),
        );
        let bounds = bound_propagate(net, &zpatch)?;
        let (mut plo, mut phi) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for id in &complement {
            let comp = net.component(*id).expect("checked");
            let (l, u) = bounds.node(comp.node);
            plo.push(l[comp.unit]);
            phi.push(u[comp.unit]);
        }
        let bx = zin.product(&InputBox::new(plo, phi)?);
        let inputs = vec![
            Segment {
                name: "z".into(),
                start: 0,
                len: n,
            },
            Segment {
                name: "p".into(),
                start: n,
                len: k,
            },
        ];
        (bx, inputs, g, c)
    } else {
        let input = nb.input(2 * n);
        let zp = nb.slice("z_patch", input, 0..n);
        let z = nb.slice("z", input, n..2 * n);
        let src = copy_branch(
            &mut nb,
            net,
            "P",
            zp,
            &BTreeMap::new(),
            |_, _| unreachable!(),
            None,
        );
        let g = copy_branch(
            &mut nb,
            net,
            "G",
            z,
            &BTreeMap::new(),
            |_, _| unreachable!(),
            None,
        );
        let c = copy_branch(
            &mut nb,
            net,
            "C",
            z,
            &units,
            |nb, node| Replace::Node(nb.copy(&format!("C.transplant{node}"), src[node])),
            Some(&g),
        );
        let inputs = vec![
            Segment {
                name: "z_patch".into(),
                start: 0,
                len: n,
            },
            Segment {
                name: "z".into(),
                start: n,
                len: n,
            },
        ];
        (zpatch.product(&zin), inputs, g, c)
    };
    let out = nb.concat("out", vec![g[net.output_node()], c[net.output_node()]]);
    Ok(SiameseQuery {
        net: nb.finish(out)?,
        boxes: vec![query_box],
        spec: OutputSpec {
            property: property.clone(),
            slots: siamese_slots(d),
        },
        wiring: Wiring {
            kind: if spec.box_patching {
                EncodingKind::TripledBox
            } else {
                EncodingKind::Tripled
            },
            inputs,
            inputs_within_patch_domain: Some(within),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::masked_forward;
    use crate::models::{random_mlp, xor_gate, xor_toy};

    fn ld(delta: f64) -> Property {
        Property::LogitDiff { gold: 0, delta }
    }

    #[test]
    fn full_circuit_halves_identical() {
        let net = random_mlp(&[2, 6, 2], 1).unwrap();
        let q = build_input_siamese(
            &net,
            &Circuit::full(&net),
            &PatchingScheme::Zero,
            &InputRegion::ball(vec![0.0, 0.0], 0.1),
            &ld(0.0),
        )
        .unwrap();
        let y = q.net.evaluate(&[0.3, -0.7]).unwrap();
        assert_eq!(y[..2], y[2..]);
    }

    #[test]
    fn xor_siamese_both_branches_compute_x2() {
        let net = xor_toy();
        let q = build_input_siamese(
            &net,
            &Circuit::new([xor_gate(1)]),
            &PatchingScheme::Zero,
            &InputRegion::ball(vec![0.5, 0.5], 0.5),
            &ld(0.0),
        )
        .unwrap();
        assert_eq!(q.net.evaluate(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn input_siamese_rejects_transplant() {
        let net = xor_toy();
        let r = build_input_siamese(
            &net,
            &Circuit::empty(),
            &PatchingScheme::FromInput { z: vec![0.0, 0.0] },
            &InputRegion::ball(vec![0.5, 0.5], 0.5),
            &ld(0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn patching_point_region_is_noop() {
        let net = random_mlp(&[2, 8, 2], 9).unwrap();
        let x = vec![0.4, 0.1];
        let c = Circuit::new(net.component_ids().into_iter().step_by(2));
        let q = build_patching_siamese(&net, &c, &x, &InputRegion::ball(x.clone(), 0.0), &ld(0.0))
            .unwrap();
        assert_eq!(q.net.evaluate(&x).unwrap(), net.evaluate(&x).unwrap());
        assert_eq!(
            q.net.evaluate(&x).unwrap(),
            masked_forward(&net, &c, &PatchingScheme::FromInput { z: x.clone() }, &x).unwrap()
        );
    }

    #[test]
    fn query_round_trips_through_json() {
        let net = random_mlp(&[2, 4, 2], 2).unwrap();
        let q = build_tripled_siamese(
            &net,
            &Circuit::new(net.component_ids().into_iter().take(2)),
            &TripledSpec {
                anchor: &[0.1, 0.2],
                eps_in: 0.05,
                eps_patch: 0.1,
                clamp: None,
                box_patching: false,
            },
            &ld(0.5),
        )
        .unwrap();
        let back = SiameseQuery::from_json(&q.to_json().unwrap()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn shared_prefix_keeps_node_count_small() {
        let net = random_mlp(&[2, 8, 2], 3).unwrap();
        let c = Circuit::new(net.component_ids().into_iter().take(3));
        let q = build_input_siamese(
            &net,
            &c,
            &PatchingScheme::Zero,
            &InputRegion::ball(vec![0.0, 0.0], 0.1),
            &ld(0.0),
        )
        .unwrap();
        assert!(q.net.nodes().len() <= 2 * net.nodes().len() + 2);
    }
}
