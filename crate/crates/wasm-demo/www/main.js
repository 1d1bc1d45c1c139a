import init, { Demo, simulateCell } from "./pkg/pes_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => (Number.isFinite(v) ? v.toPrecision(4) : "n/a");
let demo = null;
let seed = 1;

function plot(canvas, xs, series) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const all = series.flatMap((s) => Array.from(s.values));
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const x0 = xs[0];
  const x1 = xs[xs.length - 1];
  const px = (x) => 10 + ((x - x0) / (x1 - x0 || 1)) * (width - 20);
  const py = (y) => height - 10 - ((y - lo) / (hi - lo || 1)) * (height - 20);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width ?? 1;
    ctx.beginPath();
    s.values.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
  }
}

function sigma() {
  return 10 ** Number($("sigma").value);
}

function redraw() {
  demo?.free();
  demo = new Demo(Number($("n").value), Number($("sx").value), seed);
  update();
}

function update() {
  const s = sigma();
  const c = Number($("c").value);
  $("n-out").value = $("n").value;
  $("sx-out").value = $("sx").value;
  $("sigma-out").value = s.toPrecision(3);
  $("c-out").value = c.toFixed(2);

  const t = demo.indices();
  const yhat = demo.predictions();
  const smoothed = demo.smooth(s, c);
  plot($("series"), t, [
    { values: demo.labels(), color: "#999" },
    { values: yhat, color: "#d62728" },
    { values: smoothed, color: "#1f77b4", width: 2 },
  ]);
  $("mse0").value = fmt(demo.mse(yhat));
  $("mse1").value = fmt(demo.mse(smoothed));

  const steps = 51;
  const curve = demo.curve(s, steps);
  const cs = Array.from({ length: steps }, (_, i) => i / (steps - 1));
  plot($("curve"), cs, [{ values: curve, color: "#1f77b4", width: 2 }]);
  const [gamma, beta, cstar, bound] = demo.theory(s);
  $("gamma").value = fmt(gamma);
  $("beta").value = fmt(beta);
  $("cstar").value = fmt(cstar);
  $("bound").value = fmt(bound);
}

function simulate() {
  const r = simulateCell(Number($("n").value), Number($("sx").value), 0.1, Number($("trials").value), seed);
  ["s0", "s1", "s2", "p0", "p1"].forEach((id, i) => ($(id).textContent = fmt(r[i])));
}

await init();
for (const id of ["sigma", "c"]) $(id).addEventListener("input", update);
for (const id of ["n", "sx"]) $(id).addEventListener("change", redraw);
$("redraw").addEventListener("click", () => {
  seed += 1;
  redraw();
});
$("run").addEventListener("click", simulate);
redraw();
