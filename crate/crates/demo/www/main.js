import init, { defaultConfig, searchFixture, nucleus, evaluate } from "./pkg/autoreply_demo.js";

const $ = (id) => document.getElementById(id);
const fmt = (x) => (x === null || x === undefined ? "-" : Number(x).toFixed(4));

function table(head, rows) {
  const t = document.createElement("table");
  t.innerHTML = "<tr>" + head.map((h) => `<th>${h}</th>`).join("") + "</tr>";
  for (const r of rows) {
    const tr = t.insertRow();
    for (const cell of r) tr.insertCell().textContent = cell;
  }
  return t;
}

function show(target, run) {
  const out = $(target);
  out.replaceChildren();
  try {
    run(out);
  } catch (e) {
    const p = document.createElement("p");
    p.className = "error";
    p.textContent = e.message ?? String(e);
    out.append(p);
  }
}

function runSearch() {
  show("search-out", (out) => {
    const v = JSON.parse(
      searchFixture(+$("seed").value, +$("vocab").value, +$("bad").value, +$("good").value, $("config").value),
    );
    const p = document.createElement("p");
    const oracle = v.oracle_checked
      ? v.oracle_differences.length === 0
        ? "matches exhaustive enumeration"
        : `differs from enumeration: ${v.oracle_differences.join("; ")}`
      : "space too large for enumeration";
    p.textContent = `${v.records.length} replies, ${v.expanded_nodes} nodes expanded; ${oracle}.`;
    out.append(p);
    out.append(
      table(
        ["reply", "depth", "delta", "bad support", "good support", "mean bad logprob"],
        v.records.map((r) => [r.reply, r.depth, fmt(r.delta), r.bad_support.join(" "), r.good_support.join(" "), fmt(r.bad_mean_logprob)]),
      ),
    );
  });
}

function runNucleus() {
  show("nucleus-out", (out) => {
    const v = JSON.parse(nucleus($("weights").value, +$("p").value));
    const t = table(
      ["token", "prob", "logprob"],
      v.ranked.map((e) => [e.token, fmt(e.prob), fmt(e.logprob)]),
    );
    [...t.rows].slice(1, 1 + v.tokens.length).forEach((row) => row.classList.add("in"));
    const p = document.createElement("p");
    p.textContent = `top-p set {${v.tokens.join(", ")}} with mass ${fmt(v.mass)}`;
    out.append(p, t);
  });
}

function runEvaluate() {
  $("threshold-value").textContent = $("threshold").value;
  show("eval-out", (out) => {
    const v = JSON.parse(evaluate($("scores").value, $("labels").value, +$("threshold").value));
    const c = v.confusion;
    out.append(
      table(
        ["precision", "recall", "F1", "AUC", "tp", "fp", "fn", "tn"],
        [[fmt(v.precision), fmt(v.recall), fmt(v.f1), fmt(v.auc), c.tp, c.fp, c.fn_, c.tn]],
      ),
    );
  });
}

await init();
$("config").value = defaultConfig();
$("run-search").onclick = runSearch;
$("run-nucleus").onclick = runNucleus;
$("threshold").oninput = runEvaluate;
$("scores").onchange = runEvaluate;
$("labels").onchange = runEvaluate;
runEvaluate();
