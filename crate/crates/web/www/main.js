// Expects the wasm-bindgen output (--target web) in ./pkg.
import init, { matchingDemo, confidenceDemo, trainingDemo } from "./pkg/mmm_web.js";

const $ = (id) => document.getElementById(id);

function show(out, run) {
  out.classList.remove("error");
  try {
    out.textContent = run();
  } catch (e) {
    out.classList.add("error");
    out.textContent = String(e);
  }
}

function matchText(json) {
  const r = JSON.parse(json);
  const lines = [];
  for (const [name, m] of [["multi-memory", r.multi], ["single memory", r.single]]) {
    lines.push(`${name}: clusters v/r/joint ${m.clusters.join("/")}, ` +
      `total cost ${m.total_cost.toFixed(3)}, ALL-ARI ${m.ari_all?.toFixed(4)}`);
    lines.push("  pairs (visible, infrared, cost): " +
      m.pairs.map(([v, i, c]) => `(${v},${i},${c.toFixed(2)})`).join(" "));
  }
  return lines.join("\n");
}

function gmmText(json) {
  const r = JSON.parse(json);
  const head = `means ${r.means.map((x) => x.toFixed(3)).join(", ")}; ` +
    `mix ${r.mix.map((x) => x.toFixed(3)).join(", ")}; ${r.iterations} iterations`;
  const rows = r.losses.map((l, i) => `${l.toFixed(3)}  ->  ${r.weights[i].toFixed(4)}`);
  return [head, "loss  ->  confidence", ...rows].join("\n");
}

function trainText(json) {
  const r = JSON.parse(json);
  const m = r.final_metrics;
  const tail = m
    ? `final ARI all ${m.ari.all.toFixed(4)}, IR->VIS mAP ${m.infrared_to_visible.map.toFixed(4)}`
    : "no ground truth";
  return `${r.matching}; final clusters ${r.final_clusters.join("/")}; ${tail}\n\n${r.history_csv}`;
}

await init();
$("match-run").onclick = () =>
  show($("match-out"), () => matchText(matchingDemo($("match-spec").value, Number($("match-n").value))));
$("gmm-run").onclick = () =>
  show($("gmm-out"), () => gmmText(confidenceDemo($("gmm-losses").value)));
$("train-run").onclick = () =>
  show($("train-out"), () => trainText(trainingDemo($("train-spec").value, $("train-config").value)));
