import init, { split_strain, shape_functions, shape_nodes, TensionDemo } from "./pkg/fracturekit_web.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => v.toExponential(4);

function updateSplit() {
  const exx = +$("exx").value, eyy = +$("eyy").value, exy = +$("exy").value;
  for (const k of ["exx", "eyy", "exy"]) $(k + "-v").textContent = fmt(+$(k).value);
  const v = split_strain(exx, eyy, exy, $("split").value);
  $("split-table").innerHTML = `
    <tr><th></th><th>tensile</th><th>compressive</th></tr>
    <tr><th>energy</th><td>${fmt(v[0])}</td><td>${fmt(v[1])}</td></tr>
    <tr><th>σ<sub>xx</sub></th><td>${fmt(v[2])}</td><td>${fmt(v[5])}</td></tr>
    <tr><th>σ<sub>yy</sub></th><td>${fmt(v[3])}</td><td>${fmt(v[6])}</td></tr>
    <tr><th>σ<sub>xy</sub></th><td>${fmt(v[4])}</td><td>${fmt(v[7])}</td></tr>
    <tr><th>principal strains</th><td>${fmt(v[8])}</td><td>${fmt(v[9])}</td></tr>`;
}

function drawShapes() {
  const p = +$("degree").value, n = 201;
  const values = shape_functions(p, n);
  const nodes = shape_nodes(p);
  const c = $("shape"), g = c.getContext("2d");
  const pad = 24, w = c.width - 2 * pad, h = c.height - 2 * pad;
  const X = (x) => pad + x * w, Y = (y) => pad + (1.2 - y) / 1.6 * h;
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#bbb";
  g.beginPath(); g.moveTo(X(0), Y(0)); g.lineTo(X(1), Y(0)); g.stroke();
  for (let j = 0; j <= p; j++) {
    g.strokeStyle = `hsl(${(360 * j) / (p + 1)}, 65%, 45%)`;
    g.beginPath();
    for (let k = 0; k < n; k++) {
      const x = k / (n - 1), y = values[j * n + k];
      k ? g.lineTo(X(x), Y(y)) : g.moveTo(X(x), Y(y));
    }
    g.stroke();
  }
  g.fillStyle = "#000";
  for (const x of nodes) { g.beginPath(); g.arc(X(x), Y(0), 3, 0, 2 * Math.PI); g.fill(); }
}

let demo = null, running = false;

function resetDemo() {
  running = false;
  if (demo) demo.free();
  demo = new TensionDemo(+$("t-level").value, +$("t-degree").value, "miehe", +$("t-eps").value, +$("t-du").value);
  drawField();
  drawCurve();
  $("t-info").textContent = "";
}

function phaseColor(phi) {
  const t = Math.min(1, Math.max(0, phi));
  return `rgb(${Math.round(200 * (1 - t) + 40)}, ${Math.round(60 + 140 * t)}, ${Math.round(90 + 160 * t)})`;
}

function drawField() {
  const c = $("field"), g = c.getContext("2d");
  const xy = demo.coordinates(), phi = demo.phase(), u = demo.displacement(), quads = demo.quads();
  const n = phi.length;
  let umax = 1e-30;
  for (let i = 0; i < 2 * n; i++) umax = Math.max(umax, Math.abs(u[i]));
  const scale = 0.05 / umax;
  const P = (i) => [8 + (xy[2 * i] + scale * u[i]) * (c.width - 16), c.height - 8 - (xy[2 * i + 1] + scale * u[n + i]) * (c.height - 16)];
  g.clearRect(0, 0, c.width, c.height);
  for (let q = 0; q < quads.length; q += 4) {
    const ids = [quads[q], quads[q + 1], quads[q + 2], quads[q + 3]];
    const mean = ids.reduce((s, i) => s + phi[i], 0) / 4;
    g.fillStyle = phaseColor(mean);
    g.beginPath();
    ids.forEach((i, k) => { const [x, y] = P(i); k ? g.lineTo(x, y) : g.moveTo(x, y); });
    g.closePath();
    g.fill();
  }
}

function drawCurve() {
  const c = $("curve"), g = c.getContext("2d");
  const loads = demo.loads(), applied = demo.applied();
  g.clearRect(0, 0, c.width, c.height);
  const pad = 36, w = c.width - 2 * pad, h = c.height - 2 * pad;
  g.strokeStyle = "#888";
  g.strokeRect(pad, pad, w, h);
  g.fillStyle = "#333";
  g.fillText("applied displacement (mm)", pad + w / 2 - 60, c.height - 8);
  g.fillText("load (kN)", 4, pad - 10);
  if (!loads.length) return;
  const xmax = applied[applied.length - 1], ymax = Math.max(...loads, 1e-30);
  g.fillText(fmt(xmax), pad + w - 50, pad + h + 14);
  g.fillText(fmt(ymax), pad + 2, pad + 12);
  g.strokeStyle = "#b33";
  g.beginPath();
  loads.forEach((l, i) => {
    const x = pad + (applied[i] / xmax) * w, y = pad + h - (Math.max(l, 0) / ymax) * h;
    i ? g.lineTo(x, y) : g.moveTo(x, y);
  });
  g.stroke();
}

function loop() {
  if (!running) return;
  try {
    const load = demo.step();
    $("t-info").textContent = `step ${demo.steps_done()}, load ${fmt(load)} kN`;
  } catch (e) {
    running = false;
    $("t-info").textContent = `stopped: ${e}`;
  }
  drawField();
  drawCurve();
  requestAnimationFrame(loop);
}

async function main() {
  await init();
  $("status").textContent = "Ready.";
  for (const id of ["exx", "eyy", "exy", "split"]) $(id).addEventListener("input", updateSplit);
  $("degree").addEventListener("change", drawShapes);
  $("t-start").addEventListener("click", () => { if (!running) { running = true; loop(); } });
  $("t-stop").addEventListener("click", () => { running = false; });
  $("t-reset").addEventListener("click", resetDemo);
  for (const id of ["t-level", "t-degree", "t-eps", "t-du"]) $(id).addEventListener("change", resetDemo);
  updateSplit();
  drawShapes();
  resetDemo();
}

main().catch((e) => { $("status").textContent = `Failed to start: ${e}`; });
