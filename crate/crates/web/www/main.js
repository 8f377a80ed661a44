import init, { gap_regions, gap_at, solve_benchmark } from "./pkg/ocpec_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = [[245, 245, 245], [230, 162, 60], [76, 159, 112], [74, 120, 194]];
const GRID = 200;
let current = null;

function params() {
  return { c: +$("c").value, s: +$("s").value, bl: +$("bl").value, bu: +$("bu").value };
}

function drawRegions() {
  const p = params();
  for (const id of ["c", "s", "bl", "bu"]) document.querySelector(`output[for=${id}]`).textContent = p[id];
  current = JSON.parse(gap_regions(p.c, p.s, p.bl, p.bu, GRID));
  const canvas = $("regions");
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(GRID, GRID);
  for (let j = 0; j < GRID; j++) {
    for (let i = 0; i < GRID; i++) {
      // η grows upwards
      const src = j * GRID + i;
      const dst = ((GRID - 1 - j) * GRID + i) * 4;
      const [r, g, b] = COLORS[current.codes[src]];
      img.data.set([r, g, b, 255], dst);
    }
  }
  const off = new OffscreenCanvas(GRID, GRID);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  // box edges and the |η| ≤ √(2cs) strip
  const toX = (l) => ((l - current.lo) / (current.hi - current.lo)) * canvas.width;
  const toY = (e) => canvas.height - ((e - current.lo) / (current.hi - current.lo)) * canvas.height;
  ctx.strokeStyle = "#333";
  ctx.setLineDash([4, 3]);
  for (const l of [p.bl, p.bu]) {
    ctx.beginPath(); ctx.moveTo(toX(l), 0); ctx.lineTo(toX(l), canvas.height); ctx.stroke();
  }
  for (const e of [current.strip, -current.strip]) {
    ctx.beginPath(); ctx.moveTo(0, toY(e)); ctx.lineTo(canvas.width, toY(e)); ctx.stroke();
  }
  ctx.setLineDash([]);
  const members = current.codes.filter((c) => c > 0).length;
  $("regions-info").textContent =
    `${members} of ${GRID * GRID} samples feasible, √(2cs) = ${current.strip.toFixed(4)}, ` +
    `${current.disagreements} disagreements between region inequalities and φ ≤ s`;
}

function hover(ev) {
  if (!current) return;
  const canvas = $("regions");
  const r = canvas.getBoundingClientRect();
  const span = current.hi - current.lo;
  const lambda = current.lo + ((ev.clientX - r.left) / r.width) * span;
  const eta = current.hi - ((ev.clientY - r.top) / r.height) * span;
  const p = params();
  const g = JSON.parse(gap_at(lambda, eta, p.c, p.bl, p.bu));
  const f = (v) => v.toFixed(5).padStart(10);
  $("readout").textContent =
    `λ          ${f(lambda)}\nη          ${f(eta)}\nφ          ${f(g.phi)}` +
    `\nω̂          ${f(g.omega_hat)}\n∂φ/∂λ      ${f(g.grad_lambda)}\n∂φ/∂η      ${f(g.grad_eta)}` +
    `\nΦ (η as F) ${f(g.natural_residual)}\nλ ∈ K      ${g.in_set}\nφ ≤ s      ${g.in_set && g.phi <= p.s}`;
}

function plotTrajectory(res) {
  const canvas = $("traj");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const series = [["x1", "#c0392b"], ["x2", "#2c7fb8"], ["u", "#27ae60"], ["lambda", "#8e44ad"]];
  const pad = 36;
  const w = canvas.width - 2 * pad;
  const h = canvas.height - 2 * pad;
  const all = series.flatMap(([k]) => res[k]);
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const tmax = res.t[res.t.length - 1];
  const X = (t) => pad + (t / tmax) * w;
  const Y = (v) => pad + h - ((v - lo) / (hi - lo || 1)) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#555";
  ctx.fillText(hi.toFixed(2), 2, pad + 4);
  ctx.fillText(lo.toFixed(2), 2, pad + h);
  ctx.fillText("t", pad + w - 4, pad + h + 16);
  if (lo < 0 && hi > 0) {
    ctx.beginPath(); ctx.moveTo(pad, Y(0)); ctx.lineTo(pad + w, Y(0)); ctx.stroke();
  }
  series.forEach(([k, color], idx) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    res[k].forEach((v, n) => (n ? ctx.lineTo(X(res.t[n]), Y(v)) : ctx.moveTo(X(res.t[n]), Y(v))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(k === "lambda" ? "λ" : k, pad + 10 + 40 * idx, pad - 10);
  });
}

function solve() {
  $("solve").disabled = true;
  $("summary").textContent = "Solving…";
  // let the browser paint before the synchronous solve
  setTimeout(() => {
    try {
      const res = JSON.parse(solve_benchmark(+$("n").value, +$("bs").value, +$("bc").value, +$("mu").value));
      $("summary").textContent =
        `status      ${res.status}\niterations  ${res.iterations}\ncost        ${res.cost.toExponential(4)}` +
        `\nmax Φ       ${res.max_natural_residual.toExponential(3)}` +
        `\ntime        ${res.time_ms.toFixed(0)} ms (ω̂ ${res.omega_ms.toFixed(1)} ms)`;
      const rows = res.log.map((r) =>
        `<tr><td>${r.k}</td><td>${r.cost.toExponential(3)}</td><td>${r.violation.toExponential(2)}</td>` +
        `<td>${r.alpha.toFixed(3)}</td><td>${r.step.toExponential(2)}</td></tr>`);
      $("log").innerHTML = "<tr><th>k</th><th>cost</th><th>violation</th><th>α</th><th>‖Δz‖∞</th></tr>" + rows.join("");
      plotTrajectory(res);
    } catch (e) {
      $("summary").textContent = `error: ${e.message ?? e}`;
    } finally {
      $("solve").disabled = false;
    }
  }, 20);
}

async function main() {
  try {
    await init();
  } catch (e) {
    $("status").textContent = `Could not load the WebAssembly module: ${e}`;
    $("status").className = "error";
    return;
  }
  $("status").textContent = "";
  for (const id of ["c", "s", "bl", "bu"]) $(id).addEventListener("input", drawRegions);
  $("regions").addEventListener("mousemove", hover);
  $("solve").addEventListener("click", solve);
  $("solve").disabled = false;
  drawRegions();
}

main();
