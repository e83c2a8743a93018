//! Versioned JSON document format for networks.
//!
//! ```json
//! {
//!   "version": 1,
//!   "input_dim": 2,
//!   "output": "out",
//!   "nodes": [
//!     {"id": "input", "kind": "input", "width": 2},
//!     {"id": "h1", "kind": "affine", "sources": ["input"],
//!      "weights": [[1.0, -1.0]], "bias": [0.0]},
//!     {"id": "r1", "kind": "relu", "sources": ["h1"]}
//!   ],
//!   "components": [{"layer": 1, "unit": 0, "name": "h1.0", "node": "r1", "index": 0}]
//! }
//! ```
//!
//! Weight matrices are row-major with one row per output unit. Numbers are
//! written with shortest round-trip precision, so re-serialization is
//! byte-identical.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Component, ComponentId, Network, Node, NodeId, NodeKind};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    version: u32,
    input_dim: usize,
    output: String,
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    components: Vec<ComponentDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    layer: usize,
    unit: usize,
    name: String,
    node: String,
    index: usize,
}

impl Network {
    pub fn to_json(&self) -> String {
        let name = |id: NodeId| self.nodes[id].name.clone();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut doc = NodeDoc {
                    id: n.name.clone(),
                    kind: n.kind.tag().to_string(),
                    sources: n.kind.sources().into_iter().map(name).collect(),
                    width: None,
                    weights: None,
                    bias: None,
                    value: None,
                };
                match &n.kind {
                    NodeKind::Input => doc.width = Some(n.width),
                    NodeKind::Affine { weights, bias, .. } => {
                        doc.weights = Some(weights.to_rows());
                        doc.bias = Some(bias.clone());
                    }
                    NodeKind::Constant { value } => doc.value = Some(value.clone()),
                    _ => {}
                }
                doc
            })
            .collect();
        let doc = NetworkDoc {
            version: FORMAT_VERSION,
            input_dim: self.input_dim(),
            output: name(self.output),
            nodes,
            components: self
                .components
                .iter()
                .map(|c| ComponentDoc {
                    layer: c.id.layer,
                    unit: c.id.unit,
                    name: c.name.clone(),
                    node: name(c.node),
                    index: c.unit,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("network document serializes")
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if doc.version != FORMAT_VERSION {
            return Err(Error::Parse {
                path: "version".into(),
                message: format!(
                    "unsupported version {} (expected {FORMAT_VERSION})",
                    doc.version
                ),
            });
        }
        let mut index: HashMap<String, NodeId> = HashMap::new();
        let mut nodes: Vec<Node> = Vec::with_capacity(doc.nodes.len());
        for (i, nd) in doc.nodes.into_iter().enumerate() {
            let path = format!("nodes[{i}] ('{}')", nd.id);
            let perr = |message: String| Error::Parse {
                path: path.clone(),
                message,
            };
            let mut srcs = Vec::with_capacity(nd.sources.len());
            for s in &nd.sources {
                let id = *index
                    .get(s)
                    .ok_or_else(|| perr(format!("unknown or later source '{s}'")))?;
                srcs.push(id);
            }
            let want_sources = |n: usize| -> Result<()> {
                if srcs.len() == n {
                    Ok(())
                } else {
                    Err(perr(format!(
                        "expected {n} source(s), found {}",
                        srcs.len()
                    )))
                }
            };
            let width_of = |s: NodeId| nodes[s].width;
            let (kind, width) = match nd.kind.as_str() {
                "input" => {
                    want_sources(0)?;
                    let w = nd
                        .width
                        .ok_or_else(|| perr("input node needs a width".into()))?;
                    (NodeKind::Input, w)
                }
                "affine" => {
                    want_sources(1)?;
                    let rows = nd
                        .weights
                        .ok_or_else(|| perr("affine node needs weights".into()))?;
                    let weights = Matrix::from_rows(rows).map_err(|e| perr(e.to_string()))?;
                    let bias = nd
                        .bias
                        .ok_or_else(|| perr("affine node needs a bias".into()))?;
                    if weights.cols() != width_of(srcs[0]) {
                        return Err(perr(format!(
                            "weight matrix shape {}x{} does not match source width {}",
                            weights.rows(),
                            weights.cols(),
                            width_of(srcs[0])
                        )));
                    }
                    if bias.len() != weights.rows() {
                        return Err(perr(format!(
                            "bias length {} does not match {} weight rows",
                            bias.len(),
                            weights.rows()
                        )));
                    }
                    let w = weights.rows();
                    (
                        NodeKind::Affine {
                            source: srcs[0],
                            weights,
                            bias,
                        },
                        w,
                    )
                }
                "relu" => {
                    want_sources(1)?;
                    (NodeKind::Relu { source: srcs[0] }, width_of(srcs[0]))
                }
                "copy" => {
                    want_sources(1)?;
                    (NodeKind::Copy { source: srcs[0] }, width_of(srcs[0]))
                }
                "constant" => {
                    want_sources(0)?;
                    let value = nd
                        .value
                        .ok_or_else(|| perr("constant node needs a value".into()))?;
                    let w = value.len();
                    (NodeKind::Constant { value }, w)
                }
                "concat" => {
                    let w = srcs.iter().map(|&s| width_of(s)).sum();
                    (
                        NodeKind::Concat {
                            sources: srcs.clone(),
                        },
                        w,
                    )
                }
                "subtract" => {
                    want_sources(2)?;
                    (
                        NodeKind::Subtract {
                            a: srcs[0],
                            b: srcs[1],
                        },
                        width_of(srcs[0]),
                    )
                }
                other => return Err(perr(format!("unknown node kind '{other}'"))),
            };
            if index.insert(nd.id.clone(), i).is_some() {
                return Err(perr("duplicate node id".into()));
            }
            nodes.push(Node {
                name: nd.id,
                kind,
                width,
            });
        }
        let output = *index.get(&doc.output).ok_or_else(|| Error::Parse {
            path: "output".into(),
            message: format!("unknown node '{}'", doc.output),
        })?;
        let mut components = Vec::with_capacity(doc.components.len());
        for (i, c) in doc.components.into_iter().enumerate() {
            let node = *index.get(&c.node).ok_or_else(|| Error::Parse {
                path: format!("components[{i}]"),
                message: format!("unknown node '{}'", c.node),
            })?;
            components.push(Component {
                id: ComponentId::new(c.layer, c.unit),
                name: c.name,
                node,
                unit: c.index,
            });
        }
        let net = Network::new(nodes, output, components).map_err(|e| Error::Parse {
            path: "network".into(),
            message: e.to_string(),
        })?;
        if net.input_dim() != doc.input_dim {
            return Err(Error::Parse {
                path: "input_dim".into(),
                message: format!(
                    "declared {} but input node has width {}",
                    doc.input_dim,
                    net.input_dim()
                ),
            });
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "input_dim": 2,
        "output": "y",
        "nodes": [
            {"id": "x", "kind": "input", "width": 2},
            {"id": "y", "kind": "affine", "sources": ["x"], "weights": [[1.0, 2.0]], "bias": [0.5]}
        ]
    }"#;

    #[test]
    fn parses_minimal_document() {
        let net = Network::from_json(MINIMAL).unwrap();
        assert_eq!(net.nodes().len(), 2);
        assert_eq!(net.evaluate(&[1.0, 1.0]).unwrap(), vec![3.5]);
    }

    #[test]
    fn corrupted_weight_shape_names_node() {
        let bad = MINIMAL.replace("[[1.0, 2.0]]", "[[1.0, 2.0, 3.0]]");
        let err = Network::from_json(&bad).unwrap_err();
        match err {
            Error::Parse { path, .. } => assert!(path.contains("'y'"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        let bad = MINIMAL.replace("\"affine\"", "\"conv\"");
        assert!(Network::from_json(&bad).is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let bad = MINIMAL.replace("\"version\": 1", "\"version\": 7");
        assert!(Network::from_json(&bad).is_err());
    }
}
