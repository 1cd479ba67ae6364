import init, { Demo, extent } from "./pkg/maxgain_web.js";

const $ = (id) => document.getElementById(id);
const GRID = 64;

function gammaValue() {
  return $("unlimited").checked ? 0 : Math.pow(10, Number($("gamma").value));
}

function showGamma() {
  $("gamma-out").textContent = $("unlimited").checked ? "∞" : gammaValue().toFixed(2);
}

function drawSurface(demo) {
  const canvas = $("surface");
  const ctx = canvas.getContext("2d");
  const probs = demo.decisionGrid(GRID);
  const cell = canvas.width / GRID;
  for (let i = 0; i < GRID; i++) {
    for (let j = 0; j < GRID; j++) {
      const p = probs[i * GRID + j];
      const r = Math.round(255 - 120 * p);
      const b = Math.round(135 + 120 * p);
      ctx.fillStyle = `rgb(${r},${Math.round(200 - 40 * Math.abs(p - 0.5))},${b})`;
      ctx.fillRect(j * cell, i * cell, cell + 1, cell + 1);
    }
  }
  const e = extent();
  const pts = demo.points();
  for (let k = 0; k < pts.length; k += 3) {
    const x = ((pts[k] + e) / (2 * e)) * canvas.width;
    const y = ((e - pts[k + 1]) / (2 * e)) * canvas.height;
    ctx.fillStyle = pts[k + 2] === 1 ? "#1f4fbf" : "#c0392b";
    ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
  }
}

function drawBoxes(layers) {
  const canvas = $("boxes");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const top = Math.max(...layers.flatMap((l) => [l.train[4], l.test[4]]), 1e-9) * 1.1;
  const pad = 30;
  const y = (v) => canvas.height - pad - (v / top) * (canvas.height - 2 * pad);
  const slot = (canvas.width - pad) / layers.length;
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(top.toFixed(2), 2, pad - 4);
  ctx.fillText("0", 2, canvas.height - pad);
  layers.forEach((l, idx) => {
    [["train", "#2e6fd8", -1], ["test", "#e08a1e", 1]].forEach(([split, color, side]) => {
      const [min, lq, med, uq, max] = l[split];
      const cx = pad + slot * (idx + 0.5) + side * slot * 0.15;
      const w = slot * 0.2;
      ctx.strokeStyle = color;
      ctx.beginPath();
      ctx.moveTo(cx, y(min)); ctx.lineTo(cx, y(lq));
      ctx.moveTo(cx, y(uq)); ctx.lineTo(cx, y(max));
      ctx.moveTo(cx - w / 2, y(med)); ctx.lineTo(cx + w / 2, y(med));
      ctx.stroke();
      ctx.strokeRect(cx - w / 2, y(uq), w, y(lq) - y(uq));
    });
    ctx.fillStyle = "#444";
    ctx.fillText(`layer ${l.layer}`, pad + slot * idx + slot * 0.35, canvas.height - 8);
  });
}

async function later(fn) {
  $("status").textContent = "working…";
  await new Promise((r) => setTimeout(r, 20));
  try {
    fn();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

await init();
const demo = new Demo(7, 400, 0.05);
showGamma();
drawSurface(demo);

$("gamma").addEventListener("input", showGamma);
$("unlimited").addEventListener("change", showGamma);

$("train").addEventListener("click", () =>
  later(() => {
    const s = JSON.parse(demo.train(gammaValue(), Number($("epochs").value)));
    drawSurface(demo);
    drawBoxes(JSON.parse(demo.gainBoxes()));
    const scales = s.min_scale.map((v) => v.toFixed(3)).join(", ");
    $("summary").textContent =
      `train accuracy ${s.train_accuracy.toFixed(3)}, test accuracy ${s.test_accuracy.toFixed(3)}; ` +
      `smallest weight scale per layer in the last epoch: ${scales}`;
  }),
);

$("sweep").addEventListener("click", () =>
  later(() => {
    const gammas = $("sweep-gammas").value.split(",").map(Number).filter((g) => g > 0);
    const rows = JSON.parse(demo.sweep(new Float64Array(gammas), Number($("epochs").value)));
    const head = "<tr><th>γ</th><th>train acc</th><th>test acc</th><th>train loss</th><th>max test gain per layer</th></tr>";
    $("sweep-table").innerHTML =
      head +
      rows
        .map(
          (r) =>
            `<tr><td>${r.gamma}</td><td>${r.train_accuracy.toFixed(3)}</td><td>${r.test_accuracy.toFixed(3)}</td>` +
            `<td>${r.train_loss.toFixed(3)}</td><td>${r.test_max_gain.map((g) => g.toFixed(2)).join(" ")}</td></tr>`,
        )
        .join("");
  }),
);
