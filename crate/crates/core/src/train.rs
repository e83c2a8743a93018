//! Synthetic two-moons data and a tiny full-batch trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{mlp, Dense};
use crate::net::Network;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Points of one class, in order.
    pub fn class(&self, c: usize) -> Vec<Vec<f64>> {
        self.x
            .iter()
            .zip(&self.y)
            .filter(|(_, y)| **y == c)
            .map(|(x, _)| x.clone())
            .collect()
    }
}

/// Two interleaved half circles, alternating labels, with uniform jitter of
/// amplitude `noise`.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Dataset::default();
    for i in 0..n {
        let t = rng.gen_range(0.0..std::f64::consts::PI);
        let label = i % 2;
        let (a, b) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        d.x.push(vec![
            a + rng.gen_range(-noise..=noise),
            b + rng.gen_range(-noise..=noise),
        ]);
        d.y.push(label);
    }
    d
}

pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (x, y) in data.x.iter().zip(&data.y) {
        if argmax(&net.evaluate(x)?) == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dims: Vec<usize>,
    pub data_seed: u64,
    pub init_seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 16, 2],
            data_seed: 0,
            init_seed: 0,
            epochs: 500,
            learning_rate: 0.02,
            n_train: 400,
            n_test: 400,
            noise: 0.15,
        }
    }
}

impl TrainConfig {
    /// Train and held-out sets; the held-out set uses a derived seed.
    pub fn data(&self) -> (Dataset, Dataset) {
        (
            two_moons(self.n_train, self.noise, self.data_seed),
            two_moons(self.n_test, self.noise, self.data_seed.wrapping_add(0x5eed)),
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub net: Network,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
    rows: usize,
    cols: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, t: i32) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        for i in 0..p.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - B1.powi(t));
            let vh = self.v[i] / (1.0 - B2.powi(t));
            p[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
}

/// Full-batch Adam on mean softmax cross-entropy.
pub fn train(cfg: &TrainConfig) -> Result<Trained> {
    let dims = &cfg.dims;
    if dims.len() < 2 || dims.contains(&0) || dims[0] != 2 {
        return Err(Error::InvalidInput(format!(
            "bad trainer dims {dims:?} (input must be 2-D)"
        )));
    }
    if *dims.last().expect("len checked") < 2 {
        return Err(Error::InvalidInput(
            "need at least two output classes".into(),
        ));
    }
    let (train_set, test_set) = cfg.data();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut layers: Vec<Layer> = dims
        .windows(2)
        .map(|w| {
            let scale = (2.0 / w[0] as f64).sqrt();
            Layer {
                w: (0..w[0] * w[1])
                    .map(|_| rng.gen_range(-1.0..1.0) * scale)
                    .collect(),
                b: vec![0.0; w[1]],
                rows: w[1],
                cols: w[0],
            }
        })
        .collect();
    let mut opt: Vec<(Adam, Adam)> = layers
        .iter()
        .map(|l| (Adam::new(l.w.len()), Adam::new(l.b.len())))
        .collect();
    let n = train_set.len() as f64;
    let mut loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut gw: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        loss = 0.0;
        for (x, &y) in train_set.x.iter().zip(&train_set.y) {
            // forward, keeping post-activations
            let mut acts = vec![x.clone()];
            for (k, l) in layers.iter().enumerate() {
                let a = acts.last().expect("nonempty");
                let mut z: Vec<f64> = (0..l.rows)
                    .map(|r| l.b[r] + (0..l.cols).map(|c| l.w[r * l.cols + c] * a[c]).sum::<f64>())
                    .collect();
                if k + 1 < layers.len() {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(z);
            }
            let logits = acts.last().expect("nonempty");
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss += -(exps[y] / sum).ln() / n;
            let mut delta: Vec<f64> = exps
                .iter()
                .enumerate()
                .map(|(i, e)| (e / sum - f64::from(u8::from(i == y))) / n)
                .collect();
            for k in (0..layers.len()).rev() {
                let l = &layers[k];
                let a = &acts[k];
                for r in 0..l.rows {
                    gb[k][r] += delta[r];
                    for c in 0..l.cols {
                        gw[k][r * l.cols + c] += delta[r] * a[c];
                    }
                }
                if k > 0 {
                    delta = (0..l.cols)
                        .map(|c| {
                            if a[c] > 0.0 {
                                (0..l.rows).map(|r| l.w[r * l.cols + c] * delta[r]).sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let t = i32::try_from(epoch + 1).unwrap_or(i32::MAX);
        for ((l, (ow, ob)), (gw, gb)) in layers
            .iter_mut()
            .zip(opt.iter_mut())
            .zip(gw.iter().zip(&gb))
        {
            ow.step(&mut l.w, gw, cfg.learning_rate, t);
            ob.step(&mut l.b, gb, cfg.learning_rate, t);
        }
        if layers
            .iter()
            .any(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged { epoch });
        }
    }
    let dense: Vec<Dense> = layers
        .into_iter()
        .map(|l| Dense {
            weights: Matrix::from_vec(l.rows, l.cols, l.w).expect("sized"),
            bias: l.b,
        })
        .collect();
    let net = mlp(&dense)?;
    Ok(Trained {
        train_accuracy: accuracy(&net, &train_set)?,
        test_accuracy: accuracy(&net, &test_set)?,
        final_loss: loss,
        net,
    })
}

/// [`train`] with default hyper-parameters.
pub fn train_tiny(dims: &[usize], data_seed: u64, epochs: usize) -> Result<Trained> {
    train(&TrainConfig {
        dims: dims.to_vec(),
        data_seed,
        init_seed: data_seed,
        epochs,
        ..TrainConfig::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_two_moons() {
        let t = train_tiny(&[2, 16, 2], 7, 500).unwrap();
        assert!(t.test_accuracy >= 0.9, "accuracy {}", t.test_accuracy);
    }

    #[test]
    fn untrained_is_near_chance() {
        let t = train_tiny(&[2, 16, 2], 7, 0).unwrap();
        assert!(t.final_loss.is_nan());
        assert!(t.test_accuracy < 0.9);
    }

    #[test]
    fn deterministic() {
        let a = train_tiny(&[2, 8, 2], 3, 50).unwrap();
        let b = train_tiny(&[2, 8, 2], 3, 50).unwrap();
        assert_eq!(a.net.to_json(), b.net.to_json());
    }

    #[test]
    fn huge_rate_diverges() {
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&cfg), Err(Error::Diverged { .. })));
    }
}
