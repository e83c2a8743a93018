//! wasm-bindgen front end for the static demo page in `www/`.
//!
//! Every export returns a JSON string; errors come back as thrown strings.
//! The `*_json` functions hold the logic so it can be tested natively.

use std::sync::Arc;

use certcirc::discover::{discover, Algorithm, Ordering};
use certcirc::models::{counterexample, counterexample_ids, random_mlp, xor_gate, xor_toy};
use certcirc::oracle::{classify_minimality, enumerate_exact_range};
use certcirc::predicate::{Predicate, PredicateKind};
use certcirc::verify::{
    verify_boxes, BranchSlots, Budget, InputBox, Metric, OutputSpec, Property, Slot, Status,
};
use certcirc::{Circuit, PatchingScheme};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type Res = Result<Value, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn xor_predicate() -> Predicate {
    let pts = vec![vec![0., 0.], vec![0., 1.], vec![1., 0.], vec![1., 1.]];
    Predicate::sampling(
        Arc::new(xor_toy()),
        pts,
        vec![0; 4],
        Metric::AbsMax,
        0.0,
        PatchingScheme::Zero,
    )
    .expect("fixed predicate")
}

/// Gates `v1..v6` selected by bit `i-1` of `mask`.
fn xor_circuit(mask: u32) -> Circuit {
    Circuit::new((1..=6).filter(|i| mask >> (i - 1) & 1 == 1).map(xor_gate))
}

fn names(c: &Circuit) -> Vec<String> {
    c.members()
        .iter()
        .map(|m| format!("v{}", m.unit + 1))
        .collect()
}

pub fn classify_xor_json(mask: u32) -> Res {
    let c = xor_circuit(mask);
    let r = classify_minimality(&xor_predicate(), &c).map_err(err)?;
    Ok(json!({
        "circuit": names(&c),
        "faithful": r.faithful,
        "quasi": r.quasi,
        "local": r.local,
        "subset": r.subset,
        "cardinal": r.cardinal,
        "smaller": r.smaller_circuit.as_ref().map(names),
        "faithful_subset": r.faithful_subset.as_ref().map(names),
    }))
}

fn algorithm(name: &str) -> Result<Algorithm, String> {
    match name {
        "greedy" => Ok(Algorithm::Greedy),
        "exhaustive" => Ok(Algorithm::Exhaustive),
        "binary_search" => Ok(Algorithm::BinarySearch),
        other => Err(format!("unknown algorithm {other:?}")),
    }
}

/// Discovery on the XOR toy (`model = "xor"`) or the pair-cancellation
/// family with `m` pairs (`model = "counterexample"`).
pub fn discover_json(model: &str, m: u32, alg: &str) -> Res {
    let alg = algorithm(alg)?;
    let (pred, ordering) = match model {
        "xor" => (xor_predicate(), Ordering::default()),
        "counterexample" => {
            let m = m.max(1) as usize;
            let net = Arc::new(counterexample(m).map_err(err)?);
            let kind = PredicateKind::InputRobust {
                anchors: vec![vec![0.5]],
                golds: vec![0],
                eps: 0.5,
                clamp: None,
                metric: Metric::AbsMax,
                delta: 0.0,
                patch: PatchingScheme::Zero,
            };
            let pred = Predicate::new(Some(net), kind, Budget::default()).map_err(err)?;
            // order (p…, v3, q…, v4)
            let (ps, qs, v3, v4) = counterexample_ids(m);
            let mut order = ps;
            order.push(v3);
            order.extend(qs);
            order.push(v4);
            (pred, Ordering::Explicit(order))
        }
        other => return Err(format!("unknown model {other:?}")),
    };
    let d = discover(&pred, alg, &ordering).map_err(err)?;
    let r = classify_minimality(&pred, &d.circuit).map_err(err)?;
    let label =
        |c: &Circuit| -> Vec<String> { c.members().iter().map(ToString::to_string).collect() };
    Ok(json!({
        "circuit": if model == "xor" { names(&d.circuit) } else { label(&d.circuit) },
        "size": d.circuit.len(),
        "evals": d.trace.evals,
        "steps": d.trace.steps.iter().map(|s| json!({
            "removed": s.removed.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "kept": s.outcome.is_true(),
            "size": s.size_after,
        })).collect::<Vec<_>>(),
        "local": r.local,
        "subset": r.subset,
        "cardinal": r.cardinal,
    }))
}

/// Certifies `max_i |f(x)_i - f(c)_i| <= delta` over the box of half-width
/// `radius` around `c` for a seeded 2-8-2 MLP, next to the exact range.
pub fn certify_json(seed: u32, cx: f64, cy: f64, radius: f64, delta: f64) -> Res {
    let net = random_mlp(&[2, 8, 2], u64::from(seed)).map_err(err)?;
    let c = [cx, cy];
    let bx = InputBox::ball(&c, radius).map_err(err)?;
    let reference = net.evaluate(&c).map_err(err)?;
    let spec = OutputSpec {
        property: Property::AbsMax { delta },
        slots: BranchSlots {
            reference: Slot::Constant {
                values: reference.clone(),
            },
            circuit: Slot::Outputs { start: 0, len: 2 },
        },
    };
    let budget = Budget {
        timeout_secs: Some(5.0),
        max_subproblems: None,
    };
    let v = verify_boxes(&net, &[bx.clone()], &spec, &budget).map_err(err)?;
    let exact = enumerate_exact_range(&net, &bx).map_err(err)?;
    let (status, witness) = match v.status {
        Status::Certified => ("certified", None),
        Status::Falsified { witness, .. } => ("falsified", Some(witness)),
        Status::Unknown { .. } => ("unknown", None),
    };
    Ok(json!({
        "status": status,
        "witness": witness,
        "reference": reference,
        "exact_range": exact,
        "subproblems": v.stats.subproblems,
    }))
}

fn to_js(r: Res) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn classify_xor(mask: u32) -> Result<String, JsValue> {
    to_js(classify_xor_json(mask))
}

#[wasm_bindgen]
pub fn discover_circuit(model: &str, m: u32, algorithm: &str) -> Result<String, JsValue> {
    to_js(discover_json(model, m, algorithm))
}

#[wasm_bindgen]
pub fn certify(seed: u32, cx: f64, cy: f64, radius: f64, delta: f64) -> Result<String, JsValue> {
    to_js(certify_json(seed, cx, cy, radius, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_single_gate_is_cardinal() {
        let r = classify_xor_json(0b1).unwrap();
        assert_eq!(r["cardinal"], true);
        let r = classify_xor_json(0b11111).unwrap();
        assert_eq!(r["local"], true);
        assert_eq!(r["subset"], false);
    }

    #[test]
    fn counterexample_keeps_everything() {
        for alg in ["greedy", "exhaustive", "binary_search"] {
            let r = discover_json("counterexample", 2, alg).unwrap();
            assert_eq!(r["size"], 6, "{alg}");
        }
        assert!(discover_json("counterexample", 1, "annealing").is_err());
    }

    #[test]
    fn certify_agrees_with_range() {
        let r = certify_json(1, 0.0, 0.0, 0.3, 100.0).unwrap();
        assert_eq!(r["status"], "certified");
        let r = certify_json(1, 0.0, 0.0, 0.3, 0.0).unwrap();
        assert_ne!(r["status"], "certified");
    }

    #[test]
    fn bad_box_is_an_error() {
        assert!(certify_json(1, 0.0, 0.0, -1.0, 1.0).is_err());
    }
}
