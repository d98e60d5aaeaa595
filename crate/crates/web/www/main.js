// Built with `wasm-pack build crates/web --target web --out-dir www/pkg`.
import init, { Demo, curves } from "./pkg/tfus_web.js";

const $ = (id) => document.getElementById(id);

function drawSlice(demo) {
  const n = demo.size();
  const axis = Number($("axis").value);
  const index = Number($("index").value);
  $("index-out").textContent = index;
  const px = demo.slice($("layer").value, axis, index);
  const img = new ImageData(new Uint8ClampedArray(px), n, n);
  const off = new OffscreenCanvas(n, n);
  off.getContext("2d").putImageData(img, 0, 0);
  const ctx = $("slice").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  // Flip vertically so the second in-plane axis points up.
  ctx.save();
  ctx.scale(1, -1);
  ctx.drawImage(off, 0, -ctx.canvas.height, ctx.canvas.width, ctx.canvas.height);
  ctx.restore();
}

function drawElements(demo) {
  const tx = Number($("tx").value), ty = Number($("ty").value);
  $("tx-out").textContent = `${tx}°`;
  $("ty-out").textContent = `${ty}°`;
  const p = demo.plan(tx, ty);
  $("nae").textContent = p.nae;
  $("sdr").textContent = p.sdr.toFixed(3);
  $("st").textContent = p.st_mean.toFixed(2);
  const xy = p.xy(), active = p.active(), angle = p.angle();
  const c = $("elements"), ctx = c.getContext("2d");
  const half = c.width / 2, r = half - 8;
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, c.width, c.height);
  for (let i = 0; i < active.length; i++) {
    ctx.fillStyle = active[i] ? "#4c4" : Number.isNaN(angle[i]) ? "#555" : "#d44";
    ctx.beginPath();
    ctx.arc(half + r * xy[2 * i], half - r * xy[2 * i + 1], 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  p.free();
}

function drawCurves() {
  const n = 121, rows = curves(-1000, 2000, n, 650e3);
  const c = $("curves"), ctx = c.getContext("2d");
  const pad = 30, w = c.width - 2 * pad, h = c.height - 2 * pad;
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#444";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#aaa";
  ctx.fillText("-1000 HU", pad, c.height - 10);
  ctx.fillText("2000 HU", pad + w - 40, c.height - 10);
  const series = [[1, "#4cc"], [2, "#e93"], [4, "#d4d"]];
  for (const [col, color] of series) {
    let lo = Infinity, hi = -Infinity;
    for (let i = 0; i < n; i++) { const v = rows[5 * i + col]; lo = Math.min(lo, v); hi = Math.max(hi, v); }
    ctx.strokeStyle = color;
    ctx.beginPath();
    for (let i = 0; i < n; i++) {
      const x = pad + (w * i) / (n - 1);
      const y = pad + h - (h * (rows[5 * i + col] - lo)) / (hi - lo || 1);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    }
    ctx.stroke();
  }
}

async function main() {
  await init();
  // 24 mm shell in a 30 mm box at 0.5 mm; array radius kept inside the view.
  const demo = new Demo(12, 8, 1, 1800, 750, 61, 0.5, 19);
  const n = demo.size();
  $("index").max = n - 1;
  $("index").value = (n - 1) >> 1;
  for (const id of ["layer", "axis", "index"]) $(id).addEventListener("input", () => drawSlice(demo));
  for (const id of ["tx", "ty"]) $(id).addEventListener("input", () => drawElements(demo));
  drawSlice(demo);
  drawElements(demo);
  drawCurves();
  $("status").textContent = "";
}

main().catch((e) => { $("status").textContent = String(e); });
