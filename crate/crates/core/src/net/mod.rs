//! Feedforward piecewise-linear networks represented as computation DAGs.
//!
//! A [`Network`] is an ordered list of nodes in which every node only reads
//! from nodes that precede it, so the storage order is a topological order.
//! Components (the units a circuit is made of) are individual output slots of
//! nodes: one hidden neuron of an MLP, or the output unit of a hand-built gate.

mod format;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;

pub use format::FORMAT_VERSION;

pub type NodeId = usize;

/// Identifier of a circuit component. Ordered by `(layer, unit)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub layer: usize,
    pub unit: usize,
}

impl ComponentId {
    pub const fn new(layer: usize, unit: usize) -> Self {
        Self { layer, unit }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.layer, self.unit)
    }
}

impl std::str::FromStr for ComponentId {
    type Err = Error;

    /// Accepts `L1.2` or `1.2`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix('L').unwrap_or(t);
        let bad =
            || Error::InvalidInput(format!("bad component id {s:?} (expected L<layer>.<unit>)"));
        let (l, u) = t.split_once('.').ok_or_else(bad)?;
        Ok(Self::new(
            l.parse().map_err(|_| bad())?,
            u.parse().map_err(|_| bad())?,
        ))
    }
}

/// A named component bound to one output slot of a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: ComponentId,
    pub name: String,
    pub node: NodeId,
    pub unit: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Input,
    Affine {
        source: NodeId,
        weights: Matrix,
        bias: Vec<f64>,
    },
    Relu {
        source: NodeId,
    },
    Copy {
        source: NodeId,
    },
    /// Outputs a stored vector regardless of the graph input.
    Constant {
        value: Vec<f64>,
    },
    Concat {
        sources: Vec<NodeId>,
    },
    Subtract {
        a: NodeId,
        b: NodeId,
    },
}

impl NodeKind {
    pub fn sources(&self) -> Vec<NodeId> {
        match self {
            NodeKind::Input | NodeKind::Constant { .. } => Vec::new(),
            NodeKind::Affine { source, .. }
            | NodeKind::Relu { source }
            | NodeKind::Copy { source } => vec![*source],
            NodeKind::Concat { sources } => sources.clone(),
            NodeKind::Subtract { a, b } => vec![*a, *b],
        }
    }

    pub(crate) fn tag(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Affine { .. } => "affine",
            NodeKind::Relu { .. } => "relu",
            NodeKind::Copy { .. } => "copy",
            NodeKind::Constant { .. } => "constant",
            NodeKind::Concat { .. } => "concat",
            NodeKind::Subtract { .. } => "subtract",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub width: usize,
}

/// Per-node outputs recorded during one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn node(&self, id: NodeId) -> &[f64] {
        &self.values[id]
    }

    pub fn component(&self, c: &Component) -> f64 {
        self.values[c.node][c.unit]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Values written over selected node output slots right after the node is
/// computed, before any consumer reads them.
#[derive(Clone, Debug, Default)]
pub(crate) struct Overrides {
    per_node: Vec<Vec<(usize, f64)>>,
}

impl Overrides {
    pub(crate) fn new(num_nodes: usize) -> Self {
        Self {
            per_node: vec![Vec::new(); num_nodes],
        }
    }

    pub(crate) fn set(&mut self, node: NodeId, unit: usize, value: f64) {
        self.per_node[node].push((unit, value));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    input: NodeId,
    output: NodeId,
    components: Vec<Component>,
}

impl Network {
    /// Validates and assembles a network.
    pub fn new(nodes: Vec<Node>, output: NodeId, components: Vec<Component>) -> Result<Self> {
        let mut input = None;
        for (i, node) in nodes.iter().enumerate() {
            let bad =
                |msg: String| Error::InvalidNetwork(format!("node {i} ('{}'): {msg}", node.name));
            for s in node.kind.sources() {
                if s >= i {
                    return Err(bad(format!("source {s} does not precede it")));
                }
            }
            let src_width = |s: NodeId| nodes[s].width;
            let expected = match &node.kind {
                NodeKind::Input => {
                    if input.replace(i).is_some() {
                        return Err(bad("more than one input node".into()));
                    }
                    node.width
                }
                NodeKind::Affine {
                    source,
                    weights,
                    bias,
                } => {
                    if weights.cols() != src_width(*source) {
                        return Err(bad(format!(
                            "weight matrix has {} columns, source width is {}",
                            weights.cols(),
                            src_width(*source)
                        )));
                    }
                    if bias.len() != weights.rows() {
                        return Err(bad(format!(
                            "bias has {} entries, weight matrix has {} rows",
                            bias.len(),
                            weights.rows()
                        )));
                    }
                    if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
                        return Err(bad("non-finite parameter".into()));
                    }
                    weights.rows()
                }
                NodeKind::Relu { source } | NodeKind::Copy { source } => src_width(*source),
                NodeKind::Constant { value } => {
                    if value.iter().any(|v| !v.is_finite()) {
                        return Err(bad("non-finite constant".into()));
                    }
                    value.len()
                }
                NodeKind::Concat { sources } => sources.iter().map(|&s| src_width(s)).sum(),
                NodeKind::Subtract { a, b } => {
                    if src_width(*a) != src_width(*b) {
                        return Err(bad("subtract operands differ in width".into()));
                    }
                    src_width(*a)
                }
            };
            if expected != node.width {
                return Err(bad(format!(
                    "declared width {} but computes {expected}",
                    node.width
                )));
            }
            if node.width == 0 {
                return Err(bad("zero width".into()));
            }
        }
        let input = input.ok_or_else(|| Error::InvalidNetwork("no input node".into()))?;
        if output >= nodes.len() {
            return Err(Error::InvalidNetwork(format!(
                "output node {output} out of range"
            )));
        }
        let mut ids = std::collections::BTreeSet::new();
        let mut slots = std::collections::BTreeSet::new();
        for c in &components {
            if c.node >= nodes.len() || c.unit >= nodes[c.node].width {
                return Err(Error::InvalidNetwork(format!(
                    "component {} ('{}') refers to a missing slot",
                    c.id, c.name
                )));
            }
            if !ids.insert(c.id) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate component id {}",
                    c.id
                )));
            }
            if !slots.insert((c.node, c.unit)) {
                return Err(Error::InvalidNetwork(format!(
                    "component {} shares its slot with another component",
                    c.id
                )));
            }
        }
        Ok(Self {
            nodes,
            input,
            output,
            components,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn input_node(&self) -> NodeId {
        self.input
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.nodes[self.input].width
    }

    pub fn output_dim(&self) -> usize {
        self.nodes[self.output].width
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, id: ComponentId) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    /// All component ids in ascending `(layer, unit)` order.
    pub fn component_ids(&self) -> Vec<ComponentId> {
        let mut ids: Vec<_> = self.components.iter().map(|c| c.id).collect();
        ids.sort();
        ids
    }

    /// Producer → consumer adjacency lists.
    pub fn edges(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for s in n.kind.sources() {
                out[s].push(i);
            }
        }
        out
    }

    pub fn relu_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Relu { .. }))
            .map(|n| n.width)
            .sum()
    }

    /// Exact forward evaluation returning the output and every node's value.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Activations)> {
        self.forward_with(x, None)
    }

    /// Output only.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    pub(crate) fn forward_with(
        &self,
        x: &[f64],
        overrides: Option<&Overrides>,
    ) -> Result<(Vec<f64>, Activations)> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let mut v = match &node.kind {
                NodeKind::Input => x.to_vec(),
                NodeKind::Affine {
                    source,
                    weights,
                    bias,
                } => {
                    let mut y = weights.mul_vec(&values[*source]);
                    for (o, b) in y.iter_mut().zip(bias) {
                        *o += b;
                    }
                    y
                }
                NodeKind::Relu { source } => values[*source]
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect(),
                NodeKind::Copy { source } => values[*source].clone(),
                NodeKind::Constant { value } => value.clone(),
                NodeKind::Concat { sources } => sources
                    .iter()
                    .flat_map(|&s| values[s].iter().copied())
                    .collect(),
                NodeKind::Subtract { a, b } => values[*a]
                    .iter()
                    .zip(&values[*b])
                    .map(|(p, q)| p - q)
                    .collect(),
            };
            if let Some(ov) = overrides {
                for &(unit, value) in &ov.per_node[i] {
                    v[unit] = value;
                }
            }
            values.push(v);
        }
        let out = values[self.output].clone();
        Ok((out, Activations { values }))
    }

    /// Gradient of `output_weights · f(x)` with respect to `x` by reverse-mode
    /// accumulation. The ReLU subgradient at zero is taken as zero.
    pub fn gradient(&self, x: &[f64], output_weights: &[f64]) -> Result<Vec<f64>> {
        check_dim(
            "gradient output weights",
            self.output_dim(),
            output_weights.len(),
        )?;
        let (_, acts) = self.forward(x)?;
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.width]).collect();
        grads[self.output].copy_from_slice(output_weights);
        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|v| *v == 0.0) {
                grads[i] = g;
                continue;
            }
            match &self.nodes[i].kind {
                NodeKind::Input | NodeKind::Constant { .. } => {}
                NodeKind::Affine {
                    source, weights, ..
                } => {
                    let gs = &mut grads[*source];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            for (o, w) in gs.iter_mut().zip(weights.row(r)) {
                                *o += gr * w;
                            }
                        }
                    }
                }
                NodeKind::Relu { source } => {
                    let pre = acts.node(*source);
                    for (j, &gj) in g.iter().enumerate() {
                        if pre[j] > 0.0 {
                            grads[*source][j] += gj;
                        }
                    }
                }
                NodeKind::Copy { source } => {
                    for (o, v) in grads[*source].iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                NodeKind::Concat { sources } => {
                    let mut off = 0;
                    for &s in sources {
                        let w = self.nodes[s].width;
                        for (o, v) in grads[s].iter_mut().zip(&g[off..off + w]) {
                            *o += v;
                        }
                        off += w;
                    }
                }
                NodeKind::Subtract { a, b } => {
                    for (o, v) in grads[*a].iter_mut().zip(&g) {
                        *o += v;
                    }
                    for (o, v) in grads[*b].iter_mut().zip(&g) {
                        *o -= v;
                    }
                }
            }
            grads[i] = g;
        }
        Ok(grads.swap_remove(self.input))
    }

    /// A copy of this network with one extra affine node `coeffs · y + bias`
    /// on top of the output, which becomes the new (scalar) output.
    pub fn with_linear_head(&self, coeffs: &[f64], bias: f64) -> Result<Network> {
        check_dim("linear head", self.output_dim(), coeffs.len())?;
        let mut nodes = self.nodes.clone();
        nodes.push(Node {
            name: unique_name(&nodes, "head"),
            kind: NodeKind::Affine {
                source: self.output,
                weights: Matrix::from_vec(1, coeffs.len(), coeffs.to_vec())?,
                bias: vec![bias],
            },
            width: 1,
        });
        let out = nodes.len() - 1;
        Network::new(nodes, out, self.components.clone())
    }

    /// Hex SHA-256 of the canonical serialized form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn unique_name(nodes: &[Node], base: &str) -> String {
    let mut name = base.to_string();
    let mut k = 1;
    while nodes.iter().any(|n| n.name == name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

/// Incremental construction of a [`Network`].
#[derive(Debug, Default)]
pub struct NetworkBuilder {
    nodes: Vec<Node>,
    components: Vec<Component>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn width(&self, id: NodeId) -> usize {
        self.nodes[id].width
    }

    fn push(&mut self, name: Option<&str>, kind: NodeKind, width: usize) -> NodeId {
        let base = name.map_or_else(|| format!("n{}", self.nodes.len()), str::to_string);
        let name = unique_name(&self.nodes, &base);
        self.nodes.push(Node { name, kind, width });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, width: usize) -> NodeId {
        self.push(Some("input"), NodeKind::Input, width)
    }

    pub fn affine(
        &mut self,
        name: &str,
        source: NodeId,
        weights: Matrix,
        bias: Vec<f64>,
    ) -> NodeId {
        let w = weights.rows();
        self.push(
            Some(name),
            NodeKind::Affine {
                source,
                weights,
                bias,
            },
            w,
        )
    }

    pub fn relu(&mut self, name: &str, source: NodeId) -> NodeId {
        let w = self.width(source);
        self.push(Some(name), NodeKind::Relu { source }, w)
    }

    pub fn copy(&mut self, name: &str, source: NodeId) -> NodeId {
        let w = self.width(source);
        self.push(Some(name), NodeKind::Copy { source }, w)
    }

    pub fn constant(&mut self, name: &str, value: Vec<f64>) -> NodeId {
        let w = value.len();
        self.push(Some(name), NodeKind::Constant { value }, w)
    }

    pub fn concat(&mut self, name: &str, sources: Vec<NodeId>) -> NodeId {
        let w = sources.iter().map(|&s| self.width(s)).sum();
        self.push(Some(name), NodeKind::Concat { sources }, w)
    }

    pub fn subtract(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        let w = self.width(a);
        self.push(Some(name), NodeKind::Subtract { a, b }, w)
    }

    /// Affine node that copies `range` of `source` (a selection matrix).
    pub fn slice(&mut self, name: &str, source: NodeId, range: std::ops::Range<usize>) -> NodeId {
        let cols = self.width(source);
        let mut w = Matrix::zeros(range.len(), cols);
        for (r, c) in range.clone().enumerate() {
            w.set(r, c, 1.0);
        }
        self.affine(name, source, w, vec![0.0; range.len()])
    }

    pub fn add_node(&mut self, name: &str, kind: NodeKind, width: usize) -> NodeId {
        self.push(Some(name), kind, width)
    }

    pub fn component(&mut self, id: ComponentId, name: &str, node: NodeId, unit: usize) {
        self.components.push(Component {
            id,
            name: name.to_string(),
            node,
            unit,
        });
    }

    pub fn finish(self, output: NodeId) -> Result<Network> {
        Network::new(self.nodes, output, self.components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64, b: f64) -> (Matrix, Vec<f64>) {
        (Matrix::from_vec(1, 1, vec![w]).unwrap(), vec![b])
    }

    fn affine_net(w: f64, b: f64) -> Network {
        let mut nb = NetworkBuilder::new();
        let x = nb.input(1);
        let (m, bias) = scalar(w, b);
        let y = nb.affine("y", x, m, bias);
        nb.finish(y).unwrap()
    }

    fn relu_net() -> Network {
        let mut nb = NetworkBuilder::new();
        let x = nb.input(1);
        let r = nb.relu("r", x);
        nb.component(ComponentId::new(1, 0), "r0", r, 0);
        nb.finish(r).unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = affine_net(1.0, 0.0);
        assert_eq!(net.evaluate(&[3.5]).unwrap(), vec![3.5]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let net = affine_net(1.0, 0.0);
        assert!(matches!(
            net.evaluate(&[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn affine_gradient_is_slope() {
        let net = affine_net(2.0, 1.0);
        for x in [-3.0, 0.0, 7.5] {
            assert_eq!(net.gradient(&[x], &[1.0]).unwrap(), vec![2.0]);
        }
    }

    #[test]
    fn relu_gradient_stable_cases() {
        let net = relu_net();
        assert_eq!(net.gradient(&[-1.0], &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(net.gradient(&[1.0], &[1.0]).unwrap(), vec![1.0]);
        // subgradient at the kink
        assert_eq!(net.gradient(&[0.0], &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn activations_recorded_for_every_node() {
        let net = relu_net();
        let (out, acts) = net.forward(&[-2.0]).unwrap();
        assert_eq!(out, vec![0.0]);
        assert_eq!(acts.len(), 2);
        assert_eq!(acts.node(0), &[-2.0]);
    }

    #[test]
    fn rejects_forward_reference() {
        let nodes = vec![
            Node {
                name: "x".into(),
                kind: NodeKind::Input,
                width: 1,
            },
            Node {
                name: "r".into(),
                kind: NodeKind::Relu { source: 1 },
                width: 1,
            },
        ];
        assert!(Network::new(nodes, 1, vec![]).is_err());
    }

    #[test]
    fn rejects_bad_weight_shape() {
        let nodes = vec![
            Node {
                name: "x".into(),
                kind: NodeKind::Input,
                width: 2,
            },
            Node {
                name: "a".into(),
                kind: NodeKind::Affine {
                    source: 0,
                    weights: Matrix::zeros(1, 3),
                    bias: vec![0.0],
                },
                width: 1,
            },
        ];
        let err = Network::new(nodes, 1, vec![]).unwrap_err().to_string();
        assert!(err.contains("'a'"), "{err}");
    }

    #[test]
    fn rejects_duplicate_components() {
        let mut nb = NetworkBuilder::new();
        let x = nb.input(2);
        let r = nb.relu("r", x);
        nb.component(ComponentId::new(1, 0), "a", r, 0);
        nb.component(ComponentId::new(1, 0), "b", r, 1);
        assert!(nb.finish(r).is_err());
    }

    #[test]
    fn concat_subtract_copy() {
        let mut nb = NetworkBuilder::new();
        let x = nb.input(2);
        let c = nb.constant("c", vec![1.0, 1.0]);
        let d = nb.subtract("d", x, c);
        let cp = nb.copy("cp", d);
        let cat = nb.concat("cat", vec![cp, x]);
        let net = nb.finish(cat).unwrap();
        assert_eq!(net.evaluate(&[3.0, 4.0]).unwrap(), vec![2.0, 3.0, 3.0, 4.0]);
        let g = net.gradient(&[3.0, 4.0], &[1.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(g, vec![3.0, 0.0]);
    }

    #[test]
    fn linear_head_appends_scalar_output() {
        let mut nb = NetworkBuilder::new();
        let x = nb.input(2);
        let net = nb.finish(x).unwrap();
        let h = net.with_linear_head(&[1.0, -1.0], 0.5).unwrap();
        assert_eq!(h.evaluate(&[2.0, 1.0]).unwrap(), vec![1.5]);
    }
}
