// Built by `wasm-pack build crates/web --target web --out-dir www/pkg`.
import init, { targetNames, extent, density, runAis, referenceLogZ, Trainer } from "./pkg/ais_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("plot");
const ctx = canvas.getContext("2d");
const GRID = 120;

let training = null;

function backdrop(target) {
  const logp = density(target, GRID);
  let top = -Infinity;
  for (const v of logp) top = Math.max(top, v);
  const img = ctx.createImageData(GRID, GRID);
  for (let i = 0; i < logp.length; i++) {
    // Shade by density relative to the peak; cut off 8 nats down.
    const s = Math.max(0, 1 + (logp[i] - top) / 8);
    const g = Math.round(255 - 110 * s);
    img.data.set([g, g, g, 255], 4 * i);
  }
  const off = new OffscreenCanvas(GRID, GRID);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function color(rel) {
  // rel = log w - max log w; cold at or below a tenth of the max.
  const t = Math.min(1, Math.max(0, 1 - rel / Math.log(0.1)));
  const c = [20 + 200 * t, 30, 140 - 110 * t].map(Math.round);
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

function draw(target, particles) {
  backdrop(target);
  const l = extent(target);
  const xy = particles.xy;
  const lw = particles.logW;
  const top = Math.max(...lw);
  const order = [...lw.keys()].sort((a, b) => lw[a] - lw[b]);
  for (const i of order) {
    const px = ((xy[2 * i] + l) / (2 * l)) * canvas.width;
    const py = ((l - xy[2 * i + 1]) / (2 * l)) * canvas.height;
    ctx.fillStyle = color(lw[i] - top);
    ctx.beginPath();
    ctx.arc(px, py, 2, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function report(target, particles, extra = "") {
  const ref = referenceLogZ(target);
  $("stats").textContent =
    `log Z estimate  ${particles.logZ.toFixed(4)}\n` +
    `reference       ${ref.toFixed(4)}\n` +
    `ELBO            ${particles.elbo.toFixed(4)}\n` +
    `ESS / N         ${particles.ess.toFixed(3)}\n` + extra;
}

function settings() {
  return {
    target: $("target").value,
    kernel: $("kernel").value,
    steps: Number($("steps").value),
    n: Number($("particles").value),
    step: Number($("step").value),
    seed: BigInt($("seed").value),
  };
}

function fail(e) {
  $("stats").textContent = `error: ${e.message ?? e}`;
}

function runVanilla() {
  const s = settings();
  try {
    const p = runAis(s.target, s.kernel, s.steps, s.n, s.step, s.seed);
    draw(s.target, p);
    report(s.target, p);
  } catch (e) {
    fail(e);
  }
}

function startTraining() {
  const s = settings();
  try {
    training = new Trainer(s.target, s.kernel, s.steps, $("objective").value, s.seed);
  } catch (e) {
    fail(e);
    return;
  }
  $("train").disabled = true;
  $("stop").disabled = false;
  const tick = () => {
    if (!training) return;
    try {
      const loss = training.step(5);
      const p = training.particles(s.n, s.seed);
      draw(s.target, p);
      report(s.target, p, `epoch           ${training.epoch}\nloss            ${loss.toFixed(4)}`);
    } catch (e) {
      fail(e);
      stopTraining();
      return;
    }
    if (training.epoch < 300) requestAnimationFrame(tick);
    else stopTraining();
  };
  requestAnimationFrame(tick);
}

function stopTraining() {
  if (training) training.free();
  training = null;
  $("train").disabled = false;
  $("stop").disabled = true;
}

await init();
for (const name of targetNames()) {
  const o = document.createElement("option");
  o.textContent = name;
  $("target").append(o);
}
$("target").value = "gauss8";
$("target").addEventListener("change", () => backdrop($("target").value));
$("run").addEventListener("click", runVanilla);
$("train").addEventListener("click", startTraining);
$("stop").addEventListener("click", stopTraining);
backdrop($("target").value);
