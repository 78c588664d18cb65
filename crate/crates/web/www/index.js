import init, { track_geometry, simulate, barrier_demo, softmin_weights } from "./pkg/shield_mppi_web.js";

const $ = (id) => document.getElementById(id);

function fit(points, canvas, pad = 20) {
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const s = Math.min((canvas.width - 2 * pad) / (x1 - x0), (canvas.height - 2 * pad) / (y1 - y0));
  return ([x, y]) => [pad + (x - x0) * s, canvas.height - pad - (y - y0) * s];
}

function polyline(ctx, pts, tf, close = false) {
  ctx.beginPath();
  pts.forEach((p, i) => {
    const [x, y] = tf(p);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  if (close) ctx.closePath();
  ctx.stroke();
}

let geometry;

function drawTrack(run) {
  const canvas = $("track");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const tf = fit([...geometry.left, ...geometry.right], canvas);
  ctx.strokeStyle = "#333";
  ctx.lineWidth = 1.5;
  polyline(ctx, geometry.left, tf, true);
  polyline(ctx, geometry.right, tf, true);
  ctx.strokeStyle = "#ddd";
  ctx.setLineDash([4, 4]);
  polyline(ctx, geometry.center, tf, true);
  ctx.setLineDash([]);
  if (!run) return;
  ctx.lineWidth = 2;
  for (let i = 1; i < run.path.length; i++) {
    ctx.strokeStyle = run.repaired[i] ? "#d33" : "#2a6";
    polyline(ctx, [run.path[i - 1], run.path[i]], tf);
  }
}

function runLap() {
  const out = JSON.parse(
    simulate($("kind").value, +$("samples").value, +$("horizon").value, +$("qey").value, +$("seed").value, $("dist").checked),
  );
  drawTrack(out);
  const f = (v) => v.toFixed(2);
  $("metrics").textContent =
    `${out.kind}: ${out.completed ? "lap completed" : out.crashed ? "crashed" : "timed out"} in ${f(out.lap_time)} s\n` +
    `collisions ${out.collisions}, shield interventions ${out.interventions}\n` +
    `avg speed ${f(out.avg_speed)} m/s, max ${f(out.max_speed)} m/s`;
}

function runBarrier() {
  const out = JSON.parse(barrier_demo(+$("alpha").value, +$("push").value, 80));
  const canvas = $("h");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const all = [...out.shielded.h, ...out.open.h];
  const lo = Math.max(Math.min(...all), -1);
  const hi = Math.max(...all);
  const n = out.shielded.h.length;
  const tf = ([k, h]) => [20 + (k / (n - 1)) * (canvas.width - 40), canvas.height - 20 - ((Math.max(h, lo) - lo) / (hi - lo)) * (canvas.height - 40)];
  ctx.strokeStyle = "#e88";
  ctx.setLineDash([3, 3]);
  polyline(ctx, [[0, 0], [n - 1, 0]], tf);
  ctx.setLineDash([]);
  ctx.lineWidth = 2;
  ctx.strokeStyle = "#aaa";
  polyline(ctx, out.open.h.map((h, k) => [k, h]), tf);
  ctx.strokeStyle = "#36c";
  polyline(ctx, out.shielded.h.map((h, k) => [k, h]), tf);
}

function runWeights() {
  const costs = $("costs").value.split(/[\s,]+/).filter(Boolean).map(Number);
  const w = softmin_weights(new Float64Array(costs), +$("lambda").value);
  const canvas = $("bars");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const bw = (canvas.width - 40) / w.length;
  ctx.font = "12px system-ui";
  w.forEach((v, i) => {
    const h = v * (canvas.height - 50);
    ctx.fillStyle = "#36c";
    ctx.fillRect(20 + i * bw + 4, canvas.height - 30 - h, bw - 8, h);
    ctx.fillStyle = "#222";
    ctx.fillText(`${costs[i]} → ${v.toFixed(3)}`, 20 + i * bw + 4, canvas.height - 12);
  });
}

function guarded(f) {
  return () => {
    try {
      f();
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = `error: ${e}`;
    }
  };
}

await init();
geometry = JSON.parse(track_geometry());
$("run").onclick = guarded(runLap);
$("barrier").onclick = guarded(runBarrier);
$("weights").onclick = guarded(runWeights);
drawTrack();
guarded(runBarrier)();
guarded(runWeights)();
