//! Projected sign-gradient ascent on a linear objective over a box.

use rand::Rng;

use crate::net::Network;

use super::property::Objective;
use super::region::InputBox;

/// Best point found and its exact objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackPoint {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Maximizes `obj.value(net(x))` over `bx` with `restarts` runs of `steps`
/// projected sign-gradient steps. Restart 0 starts from the box center, the
/// others from uniform samples. Values are exact forward evaluations.
pub fn pgd(
    net: &Network,
    bx: &InputBox,
    obj: &Objective,
    steps: usize,
    restarts: usize,
    rng: &mut impl Rng,
) -> AttackPoint {
    let eval = |x: &[f64]| obj.value(&net.evaluate(x).expect("box matches input dim"));
    let step: Vec<f64> = bx
        .lo
        .iter()
        .zip(&bx.hi)
        .map(|(l, h)| 2.5 * 0.5 * (h - l) / steps.max(1) as f64)
        .collect();
    let c = bx.center();
    let mut best = AttackPoint {
        value: eval(&c),
        x: c,
    };
    for r in 0..restarts.max(1) {
        let mut x = if r == 0 { bx.center() } else { bx.sample(rng) };
        let mut v = eval(&x);
        for _ in 0..steps {
            if v > best.value {
                best = AttackPoint {
                    x: x.clone(),
                    value: v,
                };
            }
            let g = net
                .gradient(&x, &obj.coeffs)
                .expect("box matches input dim");
            if g.iter().all(|v| *v == 0.0) {
                break;
            }
            for ((xi, gi), s) in x.iter_mut().zip(&g).zip(&step) {
                if *gi > 0.0 {
                    *xi += s;
                } else if *gi < 0.0 {
                    *xi -= s;
                }
            }
            bx.clamp(&mut x);
            v = eval(&x);
        }
        if v > best.value {
            best = AttackPoint { x, value: v };
        }
    }
    best
}
