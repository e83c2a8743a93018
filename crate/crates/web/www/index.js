// Glue for index.html; expects the wasm-bindgen output in ./pkg
// (see the README for the build command).
import init, { classify_xor, discover_circuit, certify } from "./pkg/certcirc_web.js";

const $ = (id) => document.getElementById(id);

function call(f, ...args) {
  try {
    return JSON.parse(f(...args));
  } catch (e) {
    return { error: String(e) };
  }
}

function show(id, value) {
  $(id).textContent = JSON.stringify(value, null, 2);
}

function setupGates() {
  const box = $("gates");
  for (let i = 1; i <= 6; i++) {
    const label = document.createElement("label");
    const cb = document.createElement("input");
    cb.type = "checkbox";
    cb.dataset.bit = i - 1;
    cb.checked = i === 1;
    cb.addEventListener("change", classify);
    label.append(cb, ` v${i}`);
    box.append(label);
  }
}

function classify() {
  let mask = 0;
  for (const cb of document.querySelectorAll("#gates input")) {
    if (cb.checked) mask |= 1 << Number(cb.dataset.bit);
  }
  const r = call(classify_xor, mask);
  $("flags").innerHTML = ["faithful", "quasi", "local", "subset", "cardinal"]
    .map((k) => `<span class="${r[k] ? "on" : ""}">${k}</span>`)
    .join("");
  show("classify-out", r);
}

function runDiscover() {
  const r = call(discover_circuit, $("model").value, Number($("pairs").value), $("algorithm").value);
  show("discover-out", r);
}

function runCertify() {
  const r = call(
    certify,
    Number($("seed").value),
    Number($("cx").value),
    Number($("cy").value),
    Number($("radius").value),
    Number($("delta").value),
  );
  const s = $("certify-status");
  s.textContent = r.error ? r.error : r.status;
  s.className = r.status ? `status-${r.status}` : "";
  show("certify-out", r);
}

await init();
setupGates();
classify();
$("run-discover").addEventListener("click", runDiscover);
$("run-certify").addEventListener("click", runCertify);
