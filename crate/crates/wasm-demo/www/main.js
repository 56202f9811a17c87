import init, { bound_curves, kernel_profile, ClassifierDemo } from "./pkg/vigp_wasm_demo.js";

const $ = (id) => document.getElementById(id);

function plotLines(canvas, xs, series, yRange) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 36;
  ctx.clearRect(0, 0, w, h);
  const [x0, x1] = [xs[0], xs[xs.length - 1]];
  const [y0, y1] = yRange;
  const sx = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);

  ctx.strokeStyle = "#bbb";
  ctx.lineWidth = 1;
  ctx.beginPath();
  if (y0 < 0 && y1 > 0) { ctx.moveTo(pad, sy(0)); ctx.lineTo(w - pad, sy(0)); }
  if (x0 < 0 && x1 > 0) { ctx.moveTo(sx(0), pad); ctx.lineTo(sx(0), h - pad); }
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  ctx.fillText(x0.toFixed(1), pad, h - pad + 14);
  ctx.fillText(x1.toFixed(1), w - pad - 20, h - pad + 14);
  ctx.fillText(y1.toFixed(1), 2, pad + 4);
  ctx.fillText(y0.toFixed(1), 2, h - pad);

  ctx.save();
  ctx.beginPath();
  ctx.rect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.clip();
  for (const { ys, color } of series) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
    ctx.stroke();
  }
  ctx.restore();
}

function column(flat, width, k) {
  const out = [];
  for (let i = k; i < flat.length; i += width) out.push(flat[i]);
  return out;
}

function drawBounds() {
  const xi = parseFloat($("xi").value);
  $("xi-out").textContent = xi.toFixed(1);
  const rows = bound_curves(xi, -10, 10, 401);
  const ts = column(rows, 4, 0);
  plotLines($("bounds"), ts, [
    { ys: column(rows, 4, 1), color: "#222" },
    { ys: column(rows, 4, 2), color: "#1565c0" },
    { ys: column(rows, 4, 3), color: "#e65100" },
  ], [-10.5, 1]);
}

function drawKernel() {
  const family = $("family").value;
  const v = parseFloat($("variance").value);
  const l = parseFloat($("lengthscale").value);
  const nu = parseFloat($("nu").value);
  $("variance-out").textContent = v.toFixed(1);
  $("lengthscale-out").textContent = l.toFixed(1);
  $("nu-out").textContent = nu.toFixed(1);
  $("nu").disabled = family !== "matern";
  const rows = kernel_profile(family, v, l, nu, 5, 301);
  plotLines($("kernel"), column(rows, 2, 0), [{ ys: column(rows, 2, 1), color: "#2e7d32" }], [0, 3.1]);
}

const BOX = [-4, 4];
const GRID = 60;

function drawField(demo) {
  const canvas = $("field");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const toPx = (x) => ((x - BOX[0]) / (BOX[1] - BOX[0])) * w;
  const toPy = (y) => h - ((y - BOX[0]) / (BOX[1] - BOX[0])) * h;
  const probs = demo.probabilityGrid(GRID, GRID, BOX[0], BOX[1], BOX[0], BOX[1]);
  const cw = w / (GRID - 1);
  const ch = h / (GRID - 1);
  for (let j = 0; j < GRID; j++) {
    for (let i = 0; i < GRID; i++) {
      const p = probs[j * GRID + i];
      const r = Math.round(255 * (1 - p) + 60 * p);
      const b = Math.round(60 * (1 - p) + 255 * p);
      ctx.fillStyle = `rgb(${r},${Math.round(120 + 60 * (1 - Math.abs(2 * p - 1)))},${b})`;
      const x = BOX[0] + (i / (GRID - 1)) * (BOX[1] - BOX[0]);
      const y = BOX[0] + (j / (GRID - 1)) * (BOX[1] - BOX[0]);
      ctx.fillRect(toPx(x) - cw / 2, toPy(y) - ch / 2, cw + 1, ch + 1);
    }
  }
  const pts = demo.points();
  for (let k = 0; k < pts.length; k += 3) {
    ctx.beginPath();
    ctx.arc(toPx(pts[k]), toPy(pts[k + 1]), 3.5, 0, 2 * Math.PI);
    ctx.fillStyle = pts[k + 2] > 0 ? "#0d47a1" : "#b71c1c";
    ctx.fill();
    ctx.strokeStyle = "#fff";
    ctx.stroke();
  }
  const z = demo.inducing();
  ctx.strokeStyle = "#000";
  ctx.lineWidth = 2;
  for (let k = 0; k < z.length; k += 2) {
    const [x, y] = [toPx(z[k]), toPy(z[k + 1])];
    ctx.beginPath();
    ctx.moveTo(x - 6, y - 6); ctx.lineTo(x + 6, y + 6);
    ctx.moveTo(x + 6, y - 6); ctx.lineTo(x - 6, y + 6);
    ctx.stroke();
  }
  ctx.lineWidth = 1;
}

function fitClassifier() {
  const out = $("fit-out");
  out.classList.remove("err");
  let demo;
  try {
    demo = new ClassifierDemo($("layout").value, parseInt($("seed").value, 10), 60, 0.6);
    const t0 = performance.now();
    const [acc, elbo, iters] = demo.fit(
      $("strategy").value,
      parseInt($("m").value, 10),
      parseInt($("iters").value, 10),
      parseFloat($("init-l").value),
    );
    const ms = performance.now() - t0;
    out.textContent = `training accuracy ${acc.toFixed(3)}, bound ${elbo.toFixed(2)}, ${iters} iterations, ${ms.toFixed(0)} ms`;
    drawField(demo);
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
  } finally {
    demo?.free();
  }
}

await init();
$("status").remove();
for (const id of ["xi"]) $(id).addEventListener("input", drawBounds);
for (const id of ["family", "variance", "lengthscale", "nu"]) $(id).addEventListener("input", drawKernel);
$("fit").addEventListener("click", fitClassifier);
drawBounds();
drawKernel();
fitClassifier();
