import init, { scenarioNames, loadScenario, runTrial, planGlobal, dwaField } from "./pkg/gronav_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("map");
const ctx = canvas.getContext("2d");

let sc = null;        // current scenario payload
let taus = [];        // slider values per class
let overlay = {};     // trajectory, plan, dwa layers
let pose = null;      // clicked pose for the dwa panel

const scale = () => canvas.width / (sc.width * sc.resolution);
const px = ([x, y]) => [x * scale(), canvas.height - y * scale()];
const rgb = (c) => `rgb(${c[0]},${c[1]},${c[2]})`;

function drawMap() {
  const cw = canvas.width / sc.width;
  for (let r = 0; r < sc.height; r++) {
    for (let c = 0; c < sc.width; c++) {
      const i = r * sc.width + c;
      ctx.fillStyle = sc.obstacles[i] ? "#141414" : rgb(sc.classes[sc.cells[i]].appearance);
      ctx.fillRect(c * cw, canvas.height - (r + 1) * cw, cw + 0.5, cw + 0.5);
    }
  }
}

function polyline(points, color, width) {
  if (!points || points.length < 2) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  points.forEach((p, k) => { const [x, y] = px(p); k ? ctx.lineTo(x, y) : ctx.moveTo(x, y); });
  ctx.stroke();
}

function dot(p, r, color) {
  const [x, y] = px(p);
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
  ctx.fill();
}

function redraw() {
  drawMap();
  if (overlay.plan) {
    overlay.plan.markers.forEach((m) => dot(m, 3, "rgba(255,255,255,0.8)"));
    polyline(overlay.plan.points, "#1f5fd6", 3);
  }
  if (overlay.trial) polyline(overlay.trial, "#dc1e1e", 2);
  if (overlay.dwa) {
    const totals = overlay.dwa.candidates.map((c) => c.total).filter(Number.isFinite);
    const lo = Math.min(...totals), hi = Math.max(...totals);
    for (const c of overlay.dwa.candidates) {
      const f = Number.isFinite(c.total) ? (c.total - lo) / (hi - lo || 1) : 1;
      dot(c.endpoint, 2, Number.isFinite(c.total) ? `hsl(${120 * (1 - f)},90%,45%)` : "#000");
    }
    overlay.dwa.frontiers.forEach((f) => dot(f.point, 5, `rgba(255,0,255,${0.3 + 0.7 * f.tau})`));
    polyline([pose.slice(0, 2), ...overlay.dwa.selected.path], "#fff", 2);
  }
  dot(sc.start, 6, "#00c83c");
  dot(sc.goal, 6, "#ffd700");
}

function buildSliders() {
  const box = $("tau-sliders");
  box.innerHTML = "";
  taus = sc.classes.map((c) => c.prior_tau);
  sc.classes.forEach((c, i) => {
    const l = document.createElement("label");
    l.innerHTML = `${c.label} &tau; <input type="range" min="0" max="1" step="0.05" value="${c.prior_tau}"> <span>${c.prior_tau}</span>`;
    const input = l.querySelector("input");
    input.addEventListener("input", () => {
      taus[i] = parseFloat(input.value);
      l.querySelector("span").textContent = input.value;
      updatePlan();
    });
    box.appendChild(l);
  });
}

function updatePlan() {
  try {
    overlay.plan = JSON.parse(planGlobal(sc.name, new Float64Array(taus), parseFloat($("lambda").value)));
  } catch (e) {
    overlay.plan = null;
  }
  redraw();
}

function updateDwa() {
  if (!pose) return;
  const theta = parseFloat($("theta").value);
  const v = parseFloat($("speed").value);
  const rho4 = parseFloat($("rho4").value);
  pose = [pose[0], pose[1], theta];
  try {
    overlay.dwa = JSON.parse(dwaField(sc.name, pose[0], pose[1], theta, v, rho4));
    const s = overlay.dwa.selected;
    const fr = overlay.dwa.frontiers.map((f) => `${f.side}: ${f.label} tau=${f.tau.toFixed(2)}`).join("\n");
    $("dwa-out").textContent = `selected v=${s.v.toFixed(2)} omega=${s.omega.toFixed(2)}${s.blocked ? " (blocked)" : ""}\n${fr}`;
  } catch (e) {
    overlay.dwa = null;
    $("dwa-out").textContent = String(e);
  }
  redraw();
}

function selectScenario(name) {
  sc = JSON.parse(loadScenario(name));
  overlay = {};
  pose = null;
  buildSliders();
  updatePlan();
}

async function main() {
  await init();
  const sel = $("scenario");
  for (const n of JSON.parse(scenarioNames())) sel.add(new Option(n, n));
  sel.addEventListener("change", () => selectScenario(sel.value));

  $("run").addEventListener("click", () => {
    try {
      const out = JSON.parse(runTrial(sc.name, $("variant").value, parseInt($("seed").value, 10) || 0));
      overlay.trial = out.trajectory;
      const r = out.result;
      $("trial-out").textContent =
        `${r.status} at t=${r.sim_time_s.toFixed(1)} s\nnormalized length ${r.norm_traj_length.toFixed(3)}\n` +
        `IMU energy ${r.imu_energy.toFixed(1)}\nreplans ${r.replans}, exemplars ${r.exemplars}` +
        (out.table ? `\nfinal tau: ${out.table.map((t) => t.toFixed(2)).join(", ")}` : "");
    } catch (e) {
      $("trial-out").textContent = String(e);
    }
    redraw();
  });

  $("lambda").addEventListener("input", () => { $("lambda-v").textContent = $("lambda").value; updatePlan(); });
  for (const id of ["theta", "speed", "rho4"]) {
    $(id).addEventListener("input", () => { $(`${id}-v`).textContent = $(id).value; updateDwa(); });
  }
  canvas.addEventListener("click", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const x = (ev.clientX - rect.left) / scale();
    const y = (canvas.height - (ev.clientY - rect.top)) / scale();
    pose = [x, y, parseFloat($("theta").value)];
    updateDwa();
  });

  selectScenario(sel.value);
}

main();
