import init, { noisy_mel, mulaw_curve, gaussian_eer } from "./pkg/spoofbench_web.js";

const $ = (id) => document.getElementById(id);

function drawMel() {
  const snr = Number($("mel-snr").value);
  $("mel-snr-v").textContent = snr;
  const view = noisy_mel(BigInt($("mel-seed").value), Number($("mel-phones").value), snr, 40);
  const est = view.snr_db;
  $("mel-est").textContent = Number.isNaN(est) ? "too short" : est.toFixed(2) + " dB";
  const v = view.values;
  const { frames, bands } = view;
  let lo = Infinity, hi = -Infinity;
  for (const x of v) { lo = Math.min(lo, x); hi = Math.max(hi, x); }
  const c = $("mel"), ctx = c.getContext("2d");
  const img = ctx.createImageData(frames, bands);
  for (let f = 0; f < frames; f++) {
    for (let b = 0; b < bands; b++) {
      const t = (v[f * bands + b] - lo) / (hi - lo || 1);
      const i = 4 * ((bands - 1 - b) * frames + f);
      img.data[i] = 255 * t;
      img.data[i + 1] = 255 * t * t;
      img.data[i + 2] = 255 * (1 - t) * 0.6;
      img.data[i + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(frames, bands);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.drawImage(tmp, 0, 0, c.width, c.height);
  view.free();
}

function drawMu() {
  const bits = Number($("mu-bits").value);
  $("mu-bits-v").textContent = bits;
  const pts = mulaw_curve(bits, 801);
  const c = $("mu"), ctx = c.getContext("2d");
  const s = (x) => (x + 1) / 2 * c.width;
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath(); ctx.moveTo(0, c.height); ctx.lineTo(c.width, 0); ctx.stroke();
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  for (let i = 0; i < pts.length; i += 2) {
    const x = s(pts[i]), y = c.height - s(pts[i + 1]);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  }
  ctx.stroke();
}

function updateEer() {
  const sep = Number($("eer-sep").value);
  $("eer-sep-v").textContent = sep.toFixed(1);
  const eer = gaussian_eer(sep, Number($("eer-n").value), 7n);
  $("eer-v").textContent = eer.toFixed(2) + " %";
}

await init();
for (const id of ["mel-seed", "mel-phones", "mel-snr"]) $(id).addEventListener("input", drawMel);
$("mu-bits").addEventListener("input", drawMu);
for (const id of ["eer-sep", "eer-n"]) $(id).addEventListener("input", updateEer);
drawMel();
drawMu();
updateEer();
