import init, { Demo } from "./pkg/gtmi_wasm_demo.js";

const canvas = document.getElementById("map");
const ctx = canvas.getContext("2d");
const out = document.getElementById("out");
const PAD = 30;
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

let demo = null;
let scene = null;
let status = null;
let last = null;

const num = (id) => Number(document.getElementById(id).value);

// Latitude runs up the canvas, longitude across.
function toCanvas(lat, lon) {
  const [la0, la1, lo0, lo1] = scene.bounds;
  const x = PAD + ((lon - lo0) / Math.max(lo1 - lo0, 1e-9)) * (canvas.width - 2 * PAD);
  const y = canvas.height - PAD - ((lat - la0) / Math.max(la1 - la0, 1e-9)) * (canvas.height - 2 * PAD);
  return [x, y];
}

function fromCanvas(x, y) {
  const [la0, la1, lo0, lo1] = scene.bounds;
  const lon = lo0 + ((x - PAD) / (canvas.width - 2 * PAD)) * (lo1 - lo0);
  const lat = la0 + ((canvas.height - PAD - y) / (canvas.height - 2 * PAD)) * (la1 - la0);
  return [lat, lon];
}

function dot(lat, lon, r, color, square) {
  const [x, y] = toCanvas(lat, lon);
  ctx.fillStyle = color;
  if (square) {
    ctx.fillRect(x - r, y - r, 2 * r, 2 * r);
  } else {
    ctx.beginPath();
    ctx.arc(x, y, r, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function draw() {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!scene) return;
  ctx.globalAlpha = 0.35;
  for (const [lat, lon, r] of scene.train) dot(lat, lon, 2, COLORS[r % COLORS.length]);
  ctx.globalAlpha = 1;
  for (const [lat, lon, r] of scene.queries) dot(lat, lon, 3, COLORS[r % COLORS.length], true);
  if (status) {
    for (const g of status.regions) {
      if (g.images === 0) continue;
      const [x, y] = toCanvas(g.lat, g.lon);
      ctx.strokeStyle = "#000";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(x - 6, y - 6); ctx.lineTo(x + 6, y + 6);
      ctx.moveTo(x + 6, y - 6); ctx.lineTo(x - 6, y + 6);
      ctx.stroke();
    }
  }
  if (last) {
    const [tx, ty] = toCanvas(last.truth[0], last.truth[1]);
    const [px, py] = toCanvas(last.predicted[0], last.predicted[1]);
    ctx.strokeStyle = "#999";
    ctx.lineWidth = 1;
    for (const [lat, lon] of last.neighbors) {
      const [nx, ny] = toCanvas(lat, lon);
      ctx.beginPath(); ctx.moveTo(px, py); ctx.lineTo(nx, ny); ctx.stroke();
    }
    ctx.strokeStyle = "#d00";
    ctx.lineWidth = 2;
    ctx.beginPath(); ctx.moveTo(tx, ty); ctx.lineTo(px, py); ctx.stroke();
    dot(last.truth[0], last.truth[1], 5, "#000", true);
    dot(last.predicted[0], last.predicted[1], 5, "#d00");
  }
}

function report(text) {
  out.textContent = text;
}

function newScene() {
  try {
    demo = new Demo(num("seed"), num("regions"), num("topics"), num("images"));
    scene = JSON.parse(demo.sceneJson());
    status = null;
    last = null;
    report(`scene: ${scene.train.length} training images, ${scene.queries.length} held-out`);
  } catch (e) {
    report(`error: ${e.message ?? e}`);
  }
  draw();
}

function train() {
  if (!demo) return;
  try {
    status = JSON.parse(demo.train(20));
    const used = status.regions.filter((g) => g.images > 0).length;
    report(`sweeps ${status.sweeps}  joint_ll ${status.joint_ll.toFixed(1)}  populated regions ${used}`);
  } catch (e) {
    report(`error: ${e.message ?? e}`);
  }
  draw();
}

function click(ev) {
  if (!demo || !scene) return;
  const rect = canvas.getBoundingClientRect();
  const [lat, lon] = fromCanvas(ev.clientX - rect.left, ev.clientY - rect.top);
  try {
    last = JSON.parse(demo.predict(lat, lon, document.getElementById("visual").checked));
    report(
      `${last.id} (${last.mode})  truth ${last.truth.map((v) => v.toFixed(2)).join(", ")}  ` +
        `predicted ${last.predicted.map((v) => v.toFixed(2)).join(", ")}  error ${last.error_km.toFixed(1)} km  ` +
        `region ${last.region}  neighbors ${last.neighbors.length}`,
    );
  } catch (e) {
    report(`error: ${e.message ?? e}`);
  }
  draw();
}

await init();
document.getElementById("scene").addEventListener("click", newScene);
document.getElementById("train").addEventListener("click", train);
canvas.addEventListener("click", click);
newScene();
