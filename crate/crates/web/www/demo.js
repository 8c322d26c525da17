import init, * as gk from "./pkg/gaitkit_web.js";

await init();

const $ = (id) => document.getElementById(id);

function paint(canvas, values, w, h, scale) {
  canvas.width = w;
  canvas.height = h;
  canvas.style.width = `${w * scale}px`;
  canvas.style.height = `${h * scale}px`;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < w * h; i++) {
    const v = Math.round(255 * values[i]);
    img.data.set([v, v, v, 255], 4 * i);
  }
  ctx.putImageData(img, 0, 0);
}

// Walker and fusion.
let t = 0;
let playing = null;

function walker() {
  const v = +$("w-view").value;
  $("w-view-out").textContent = v;
  const frame = gk.render(+$("w-subject").value, 1.0, $("w-cond").value, v, t, +$("w-noise").value);
  paint($("walker"), frame, gk.canvas_width(), gk.canvas_height(), 3);
}

function fused() {
  const n = +$("f-frames").value;
  $("f-frames-out").textContent = n;
  const f = gk.fuse_walk(+$("w-subject").value, 1.0, $("w-cond").value, +$("w-view").value, n);
  paint($("fused"), f, gk.frame_width(), gk.frame_height(), 5);
}

for (const id of ["w-subject", "w-cond", "w-view", "w-noise"]) {
  $(id).addEventListener("input", () => { walker(); fused(); });
}
$("f-frames").addEventListener("input", fused);
$("w-play").addEventListener("click", () => {
  if (playing) {
    clearInterval(playing);
    playing = null;
    $("w-play").textContent = "play";
  } else {
    playing = setInterval(() => { t += 1; walker(); }, 60);
    $("w-play").textContent = "stop";
  }
});

// Distance alignment.
const pts = { p: [[-0.5, 0.2]], g: [[-0.3, 0.5], [0.6, -0.1]], a: [] };
for (let i = 0; i < 30; i++) {
  const a = (i / 30) * 2 * Math.PI;
  pts.a.push([0.7 * Math.cos(a), 0.7 * Math.sin(a)]);
}
const canvas = $("points");
const toWorld = (x, y) => [(x / canvas.width) * 2 - 1, 1 - (y / canvas.height) * 2];
const toScreen = ([x, y]) => [((x + 1) / 2) * canvas.width, ((1 - y) / 2) * canvas.height];

function drawPoints() {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const dot = (p, color, r) => {
    const [x, y] = toScreen(p);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(x, y, r, 0, 2 * Math.PI);
    ctx.fill();
  };
  pts.a.forEach((p) => dot(p, "#bbb", 3));
  pts.g.forEach((p) => dot(p, "#d22", 5));
  pts.p.forEach((p) => dot(p, "#22d", 5));
}

function table(title, values, rows, cols) {
  let html = `<table><caption>${title}</caption><tr><th></th>`;
  for (let c = 0; c < cols; c++) html += `<th>g${c}</th>`;
  html += "</tr>";
  for (let r = 0; r < rows; r++) {
    const row = values.slice(r * cols, (r + 1) * cols);
    const best = row.indexOf(Math.min(...row));
    html += `<tr><th>p${r}</th>`;
    row.forEach((v, c) => { html += `<td class="${c === best ? "best" : ""}">${v.toFixed(3)}</td>`; });
    html += "</tr>";
  }
  return html + "</table>";
}

function align() {
  drawPoints();
  const out = $("g-out");
  if (!pts.p.length || !pts.g.length || !pts.a.length) {
    out.textContent = "Needs at least one probe, one gallery and one adjustment point.";
    return;
  }
  try {
    const d = gk.gda_points(
      new Float32Array(pts.p.flat()), new Float32Array(pts.g.flat()), new Float32Array(pts.a.flat()),
      +$("g-t").value, +$("g-lg").value, +$("g-lq").value, $("g-po").checked);
    const n = pts.p.length * pts.g.length;
    out.innerHTML = table("plain", d.slice(0, n), pts.p.length, pts.g.length)
      + table("refined", d.slice(n), pts.p.length, pts.g.length);
  } catch (e) {
    out.textContent = String(e);
  }
}

canvas.addEventListener("click", (e) => {
  const r = canvas.getBoundingClientRect();
  const p = toWorld(e.clientX - r.left, e.clientY - r.top);
  (e.shiftKey ? pts.a : pts[$("g-kind").value]).push(p);
  align();
});
$("g-clear").addEventListener("click", () => { pts.p = []; pts.g = []; pts.a = []; align(); });
for (const id of ["g-t", "g-lg", "g-lq", "g-po"]) $(id).addEventListener("input", align);

walker();
fused();
align();
