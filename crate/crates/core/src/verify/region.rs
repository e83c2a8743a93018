use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidInput("box bounds differ in length".into()));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h))
        {
            return Err(Error::InvalidInput(
                "box bounds must be finite with lo <= hi".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    /// The L∞ ball of `radius` around `center`.
    pub fn ball(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "radius {radius} must be finite and >= 0"
            )));
        }
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn point(x: &[f64]) -> Self {
        Self {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
            .collect()
    }

    /// Cartesian product `self × other` (coordinates of `self` first).
    pub fn product(&self, other: &InputBox) -> InputBox {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        InputBox { lo, hi }
    }

    /// Intersection with `[lo, hi]` per dimension; `None` if empty.
    pub fn intersect(&self, lo: &[f64], hi: &[f64]) -> Option<InputBox> {
        let l: Vec<f64> = self.lo.iter().zip(lo).map(|(a, b)| a.max(*b)).collect();
        let h: Vec<f64> = self.hi.iter().zip(hi).map(|(a, b)| a.min(*b)).collect();
        if l.iter().zip(&h).any(|(a, b)| a > b) {
            None
        } else {
            Some(InputBox { lo: l, hi: h })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Union of L∞ balls, optionally intersected with per-dimension clamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRegion {
    pub balls: Vec<Ball>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<(Vec<f64>, Vec<f64>)>,
}

impl InputRegion {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Self {
            balls: vec![Ball { center, radius }],
            clamp: None,
        }
    }

    pub fn union(centers: impl IntoIterator<Item = Vec<f64>>, radius: f64) -> Self {
        Self {
            balls: centers
                .into_iter()
                .map(|center| Ball { center, radius })
                .collect(),
            clamp: None,
        }
    }

    pub fn with_clamp(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.clamp = Some((lo, hi));
        self
    }

    /// One box per ball, clamped. Errors if the region is empty or malformed.
    pub fn boxes(&self) -> Result<Vec<InputBox>> {
        if self.balls.is_empty() {
            return Err(Error::InvalidInput("input region has no balls".into()));
        }
        let dim = self.balls[0].center.len();
        let mut out = Vec::with_capacity(self.balls.len());
        for b in &self.balls {
            if b.center.len() != dim {
                return Err(Error::InvalidInput("balls differ in dimension".into()));
            }
            let bx = InputBox::ball(&b.center, b.radius)?;
            let bx = match &self.clamp {
                Some((lo, hi)) => {
                    if lo.len() != dim || hi.len() != dim {
                        return Err(Error::InvalidInput("clamp dimension mismatch".into()));
                    }
                    bx.intersect(lo, hi)
                        .ok_or_else(|| Error::InvalidInput("ball lies outside the clamp".into()))?
                }
                None => bx,
            };
            out.push(bx);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.balls.first().map_or(0, |b| b.center.len())
    }
}
