import init, { solve_poisson, feature_slice, compare_mixed } from "./pkg/dpgm_web.js";

const RES = 128;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function status(id, text, isError = false) {
  const el = $(id);
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

// diverging blue-white-red for signed data, white-to-dark for magnitudes
function color(t, signed) {
  if (signed) {
    const a = Math.min(1, Math.abs(t));
    return t < 0 ? [255 * (1 - a), 255 * (1 - a), 255] : [255, 255 * (1 - a), 255 * (1 - a)];
  }
  const a = Math.min(1, Math.max(0, t));
  return [255 * (1 - a), 255 * (1 - a), 255 * (1 - 0.5 * a)];
}

// values are x-major with y fastest; y grows upwards on screen
function paint(canvas, values, res, signed, logScale = false) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(res, res);
  let lo = Infinity, hi = -Infinity;
  const data = logScale ? values.map((v) => Math.log10(Math.max(v, 1e-300))) : values;
  for (const v of data) {
    if (Number.isFinite(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  }
  const scale = signed ? Math.max(Math.abs(lo), Math.abs(hi)) || 1 : (hi - lo) || 1;
  for (let i = 0; i < res; i++) {
    for (let j = 0; j < res; j++) {
      const v = data[i * res + j];
      const t = signed ? v / scale : (v - lo) / scale;
      const [r, g, b] = color(t, signed);
      const p = 4 * ((res - 1 - j) * res + i);
      img.data[p] = r; img.data[p + 1] = g; img.data[p + 2] = b; img.data[p + 3] = 255;
    }
  }
  canvas.width = res;
  canvas.height = res;
  ctx.putImageData(img, 0, 0);
  canvas.style.width = canvas.style.height = "256px";
  return [lo, hi];
}

// let the status text render before a blocking solve
const later = (f) => setTimeout(f, 20);

function runSolve() {
  status("solve-status", "solving...");
  later(() => {
    try {
      const t0 = performance.now();
      const view = solve_poisson(num("solve-level"), num("solve-dof"), BigInt(num("solve-seed")), RES);
      const ms = performance.now() - t0;
      paint($("solve-u"), view.u_rho(), RES, true);
      const [lo, hi] = paint($("solve-err"), view.error(), RES, false, true);
      status(
        "solve-status",
        `system ${view.rows} x ${view.columns}, rank ${view.rank}\n` +
        `relative e_L2 ${view.e_l2.toExponential(3)}, e_H1 ${view.e_h1.toExponential(3)}\n` +
        `left: u_rho; right: log10 |u - u_rho| from ${lo.toFixed(1)} to ${hi.toFixed(1)}\n` +
        `${ms.toFixed(0)} ms`
      );
      view.free();
    } catch (e) {
      status("solve-status", String(e), true);
    }
  });
}

function runFeature() {
  const width = num("feat-width");
  const resnet = $("feat-resnet").checked;
  const slider = $("feat-index");
  slider.max = String(width - 1);
  const index = Math.min(num("feat-index"), width - 1);
  try {
    const values = feature_slice(resnet, width, num("feat-depth"), BigInt(num("feat-seed")), index, $("feat-deriv").checked, RES);
    const [lo, hi] = paint($("feat-canvas"), values, RES, true);
    status("feat-status", `feature ${index} of ${width}: range ${lo.toFixed(3)} to ${hi.toFixed(3)}`);
  } catch (e) {
    status("feat-status", String(e), true);
  }
}

function runMixed() {
  status("mixed-status", "solving four systems...");
  later(() => {
    try {
      const rows = JSON.parse(compare_mixed(num("mixed-level"), num("mixed-dof"), BigInt(num("mixed-seed"))));
      const body = $("mixed-table").tBodies[0];
      body.innerHTML = "";
      for (const r of rows) {
        const tr = body.insertRow();
        for (const v of [r.form, r.e_l2.toExponential(3), r.e_h1.toExponential(3),
                         r.e_p == null ? "" : r.e_p.toExponential(3), r.weak_rows, r.boundary_rows, r.rank]) {
          tr.insertCell().textContent = v;
        }
      }
      status("mixed-status", "dof is split evenly over p1, p2 and u");
    } catch (e) {
      status("mixed-status", String(e), true);
    }
  });
}

await init();
$("solve-run").addEventListener("click", runSolve);
$("mixed-run").addEventListener("click", runMixed);
for (const id of ["feat-resnet", "feat-width", "feat-depth", "feat-seed", "feat-index", "feat-deriv"]) {
  $(id).addEventListener("input", runFeature);
}
runFeature();
runSolve();
