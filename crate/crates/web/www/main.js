import init, { normalizeRelation, fusionLayout, sampleImage, sampleFeatures } from "./pkg/mvhash_web.js";

const VIEWS = ["rgb", "hsv", "lbp", "hog"];
const COLORS = { basic: "#555", constant: "#bbb", view: ["#d0473a", "#3a8fd0", "#3aa95a", "#b07a2a"] };

const $ = (id) => document.getElementById(id);

function numberInput(value, step, onInput) {
  const el = document.createElement("input");
  el.type = "number";
  el.step = step;
  el.value = value;
  el.addEventListener("input", onInput);
  return el;
}

// 1. normalisation
const rawInputs = [3, 0, -1, 1].map((v, i) => {
  const label = document.createElement("label");
  label.textContent = VIEWS[i] + " ";
  const input = numberInput(v, "0.1", updateRelation);
  label.appendChild(input);
  $("raw-inputs").appendChild(label);
  return input;
});
let normalized = [];

function updateRelation() {
  $("norm-error").textContent = "";
  $("norm-bars").innerHTML = "";
  try {
    normalized = Array.from(normalizeRelation(Float64Array.from(rawInputs.map((i) => Number(i.value)))));
  } catch (e) {
    $("norm-error").textContent = e.message ?? String(e);
    return;
  }
  normalized.forEach((v, i) => {
    const bar = document.createElement("div");
    bar.style.width = Math.max(2, v * 100) + "%";
    bar.textContent = `${VIEWS[i]} ${v.toFixed(3)}`;
    $("norm-bars").appendChild(bar);
  });
}

// 2. fusion layout
const sliders = [0.8, 0.63, 0.75, 1.0].map((v, i) => {
  const label = document.createElement("label");
  label.textContent = `E ${VIEWS[i]} `;
  const s = document.createElement("input");
  s.type = "range";
  s.min = 0;
  s.max = 1;
  s.step = 0.01;
  s.value = v;
  const out = document.createElement("span");
  out.textContent = v.toFixed(2);
  s.addEventListener("input", () => { out.textContent = Number(s.value).toFixed(2); updateLayout(); });
  label.append(s, out);
  $("weight-sliders").appendChild(label);
  return { s, out };
});

function updateLayout() {
  $("layout-error").textContent = "";
  const canvas = $("layout-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let result;
  try {
    const v = $("vector").value.split(",").map((x) => parseInt(x.trim(), 10));
    if (v.some((x) => !Number.isInteger(x) || x < 0)) throw new Error("v must be a comma separated list of counts");
    result = JSON.parse(fusionLayout(
      $("method").value,
      Float64Array.from(sliders.map(({ s }) => Number(s.value))),
      Number($("q-basic").value), Number($("q-view").value),
      Uint32Array.from(v),
      Number($("budget").value), Number($("pool-k").value), Number($("pool-w").value),
      1, Number($("image-id").value)));
  } catch (e) {
    $("layout-error").textContent = e.message ?? String(e);
    $("layout-summary").textContent = "";
    return;
  }
  const n = result.elements.length;
  const perRow = Math.min(n, 240);
  const rows = Math.ceil(n / perRow);
  const cell = canvas.width / perRow;
  canvas.height = Math.max(20, rows * 18);
  result.elements.forEach((e, i) => {
    ctx.fillStyle = e.kind === "view" ? COLORS.view[e.view] : COLORS[e.kind];
    ctx.fillRect((i % perRow) * cell, Math.floor(i / perRow) * 18, Math.max(1, cell - 0.5), 16);
  });
  const rank = result.rank.map((m) => VIEWS[m]).join(" > ");
  $("layout-summary").textContent = `expanded length ${result.length}; views ranked by E: ${rank}`;
}

function legend() {
  const items = [["basic", COLORS.basic], ...VIEWS.map((v, i) => [v, COLORS.view[i]]), ["view-code constant", COLORS.constant]];
  for (const [name, color] of items) {
    const span = document.createElement("span");
    span.style.background = color;
    span.textContent = name;
    $("layout-legend").appendChild(span);
  }
}

// 3. image views
function drawBars(canvas, values, color) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const max = Math.max(...values, 1e-12);
  const w = canvas.width / values.length;
  ctx.fillStyle = color;
  values.forEach((v, i) => {
    const h = (v / max) * (canvas.height - 2);
    ctx.fillRect(i * w, canvas.height - h, Math.max(1, w - 0.5), h);
  });
}

function updateSample() {
  $("sample-error").textContent = "";
  const label = Number($("class").value);
  const id = Number($("sample-id").value);
  let pixels, feats;
  try {
    pixels = sampleImage(label, id, 1);
    feats = JSON.parse(sampleFeatures(label, id, 1));
  } catch (e) {
    $("sample-error").textContent = e.message ?? String(e);
    return;
  }
  const ctx = $("image-canvas").getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(pixels), 32, 32), 0, 0);
  const plots = $("view-plots");
  plots.innerHTML = "";
  feats.views.forEach((view, i) => {
    const fig = document.createElement("figure");
    const c = document.createElement("canvas");
    c.width = 440;
    c.height = 70;
    const cap = document.createElement("figcaption");
    cap.textContent = `${view.name}: ${view.values.length} dims`;
    fig.append(c, cap);
    plots.appendChild(fig);
    drawBars(c, view.values, COLORS.view[i]);
  });
}

async function main() {
  await init();
  for (let i = 0; i < 10; i++) {
    const o = document.createElement("option");
    o.value = i;
    o.textContent = `class ${i}`;
    $("class").appendChild(o);
  }
  legend();
  for (const id of ["method", "q-basic", "q-view", "vector", "budget", "pool-k", "pool-w", "image-id"]) {
    $(id).addEventListener("input", updateLayout);
  }
  $("use-weights").addEventListener("click", () => {
    normalized.forEach((v, i) => { sliders[i].s.value = v; sliders[i].out.textContent = v.toFixed(2); });
    updateLayout();
  });
  $("class").addEventListener("input", updateSample);
  $("sample-id").addEventListener("input", updateSample);
  $("next-sample").addEventListener("click", () => { $("sample-id").value = Number($("sample-id").value) + 10; updateSample(); });
  updateRelation();
  updateLayout();
  updateSample();
}

main();
