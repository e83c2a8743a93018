//! Network builders: dense ReLU MLPs, the XOR toy network and the
//! pair-cancellation counterexample family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{ComponentId, Network, NetworkBuilder};

/// One dense layer: `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Builds a ReLU MLP. Every hidden neuron becomes a component with id
/// `(hidden layer index starting at 1, unit)`; the last layer is linear.
pub fn mlp(layers: &[Dense]) -> Result<Network> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidInput("an MLP needs at least one layer".into()))?;
    let mut nb = NetworkBuilder::new();
    let mut cur = nb.input(first.weights.cols());
    for (l, layer) in layers.iter().enumerate() {
        let pre = nb.affine(
            &format!("fc{}", l + 1),
            cur,
            layer.weights.clone(),
            layer.bias.clone(),
        );
        if l + 1 == layers.len() {
            cur = pre;
        } else {
            let act = nb.relu(&format!("relu{}", l + 1), pre);
            for j in 0..layer.weights.rows() {
                nb.component(
                    ComponentId::new(l + 1, j),
                    &format!("h{}.{}", l + 1, j),
                    act,
                    j,
                );
            }
            cur = act;
        }
    }
    nb.finish(cur)
}

/// Seeded random MLP with `dims = [input, hidden..., output]`.
pub fn random_mlp(dims: &[usize], seed: u64) -> Result<Network> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidInput(format!("bad MLP dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<Dense> = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-1.0..1.0) * scale)
                .collect();
            let bias = (0..fan_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Dense {
                weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                bias,
            }
        })
        .collect();
    mlp(&layers)
}

/// The Boolean toy network: six gate components `v1..v6` aggregated by XOR.
///
/// `v1 = x2`, `v2 = v3 = x1`, `v4 = v5 = x1 ⊕ x2`, `v6 = x2 ⊕ x2`, with every
/// XOR realized as `ReLU(a - b) + ReLU(b - a)`. On `{0,1}^2` the network
/// computes `x2`. The gates are components `(1, 0..6)`.
pub fn xor_toy() -> Network {
    let mut nb = NetworkBuilder::new();
    let x = nb.input(2);
    let pre = nb.affine(
        "gate_pre",
        x,
        Matrix::from_rows(vec![
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            // v6 = x2 ⊕ x2: both halves see x2 - x2 = 0
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .expect("static"),
        vec![0.0; 6],
    );
    let act = nb.relu("gate_relu", pre);
    let cat = nb.concat("gate_in", vec![x, act]);
    // columns: x1, x2, r0..r5
    let gates = nb.affine(
        "gates",
        cat,
        Matrix::from_rows(vec![
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0],
        ])
        .expect("static"),
        vec![0.0; 6],
    );
    for i in 0..6 {
        nb.component(ComponentId::new(1, i), &format!("v{}", i + 1), gates, i);
    }
    let mut acc = nb.slice("xor_acc1", gates, 0..1);
    for k in 1..6 {
        let cat = nb.concat(&format!("xor_in{}", k + 1), vec![acc, gates]);
        let mut w = Matrix::zeros(2, 7);
        w.set(0, 0, 1.0);
        w.set(0, 1 + k, -1.0);
        w.set(1, 0, -1.0);
        w.set(1, 1 + k, 1.0);
        let pre = nb.affine(&format!("xor_pre{}", k + 1), cat, w, vec![0.0, 0.0]);
        let r = nb.relu(&format!("xor_relu{}", k + 1), pre);
        acc = nb.affine(
            &format!("xor_acc{}", k + 1),
            r,
            Matrix::from_vec(1, 2, vec![1.0, 1.0]).expect("static"),
            vec![0.0],
        );
    }
    nb.finish(acc).expect("xor toy network is well formed")
}

/// Component ids of the XOR toy gates `v1..v6` (index 0 is `v1`).
pub fn xor_gate(i: usize) -> ComponentId {
    assert!((1..=6).contains(&i), "gate index out of range");
    ComponentId::new(1, i - 1)
}

/// Pair-cancellation family with `m >= 1` pairs:
/// `f(x) = v3(x) + Σ (p_i(x) - q_i(x))` with `p_i = q_i = ReLU(x)`,
/// `v3(x) = x` and output unit `v4`. `f(x) = x` for all `x`.
///
/// Components: `p_i = (1, i-1)`, `q_i = (1, m+i-1)`, `v3 = (1, 2m)`,
/// `v4 = (2, 0)`. For `m = 1` they are named `v1, v2, v3, v4`.
pub fn counterexample(m: usize) -> Result<Network> {
    if m == 0 {
        return Err(Error::InvalidInput("counterexample needs m >= 1".into()));
    }
    let mut nb = NetworkBuilder::new();
    let x = nb.input(1);
    let pre = nb.affine(
        "pq_pre",
        x,
        Matrix::from_vec(2 * m, 1, vec![1.0; 2 * m])?,
        vec![0.0; 2 * m],
    );
    let pq = nb.relu("pq", pre);
    let v3 = nb.affine("v3", x, Matrix::identity(1), vec![0.0]);
    let cat = nb.concat("v4_in", vec![pq, v3]);
    // p_i and q_i sit in adjacent units so each pair cancels exactly in
    // floating point before v3 is added
    let mut w: Vec<f64> = (0..m).flat_map(|_| [1.0, -1.0]).collect();
    w.push(1.0);
    let v4 = nb.affine("v4", cat, Matrix::from_vec(1, 2 * m + 1, w)?, vec![0.0]);
    for i in 0..m {
        let (p, q) = if m == 1 {
            ("v1".to_string(), "v2".to_string())
        } else {
            (format!("p{}", i + 1), format!("q{}", i + 1))
        };
        nb.component(ComponentId::new(1, i), &p, pq, 2 * i);
        nb.component(ComponentId::new(1, m + i), &q, pq, 2 * i + 1);
    }
    nb.component(ComponentId::new(1, 2 * m), "v3", v3, 0);
    nb.component(ComponentId::new(2, 0), "v4", v4, 0);
    nb.finish(v4)
}

/// Named handles into [`counterexample`]: `(p_i, q_i, v3, v4)`.
pub fn counterexample_ids(
    m: usize,
) -> (Vec<ComponentId>, Vec<ComponentId>, ComponentId, ComponentId) {
    (
        (0..m).map(|i| ComponentId::new(1, i)).collect(),
        (0..m).map(|i| ComponentId::new(1, m + i)).collect(),
        ComponentId::new(1, 2 * m),
        ComponentId::new(2, 0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_toy_computes_x2() {
        let net = xor_toy();
        assert_eq!(net.components().len(), 6);
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            assert_eq!(net.evaluate(&[a, b]).unwrap(), vec![b]);
        }
    }

    #[test]
    fn counterexample_is_identity() {
        for m in 1..=3 {
            let net = counterexample(m).unwrap();
            assert_eq!(net.components().len(), 2 * m + 2);
            for i in 0..=10 {
                let x = i as f64 / 10.0;
                assert_eq!(net.evaluate(&[x]).unwrap(), vec![x]);
            }
        }
    }

    #[test]
    fn counterexample_m1_names() {
        let net = counterexample(1).unwrap();
        let names: Vec<_> = net.components().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["v1", "v2", "v3", "v4"]);
    }

    #[test]
    fn random_mlp_is_deterministic() {
        let a = random_mlp(&[2, 16, 2], 7).unwrap();
        let b = random_mlp(&[2, 16, 2], 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.components().len(), 16);
    }
}
