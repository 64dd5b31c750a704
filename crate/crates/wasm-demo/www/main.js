import init, { stationary_spread, laplace_odds, well_occupancy } from "./pkg/sgd_sde_lab_wasm_demo.js";

const num = (id) => Number(document.getElementById(id).value);
const show = (id, text) => { document.getElementById(id).textContent = text; };

function bind(button, out, run) {
  document.getElementById(button).addEventListener("click", () => {
    show(out, "running...");
    // Let the page repaint before the synchronous call.
    setTimeout(() => {
      try {
        show(out, run());
      } catch (e) {
        show(out, `error: ${e.message ?? e}`);
      }
    }, 10);
  });
}

await init();

bind("s-run", "s-out", () => {
  const r = stationary_spread(num("s-eta"), num("s-batch"), num("s-samples"), 1n);
  const vars = Array.from(r.slice(3), (v) => v.toExponential(3)).join(", ");
  return `eta/2S = ${r[0].toExponential(3)}\nvariances: ${vars}\n` +
    `mean loss ${r[1].toExponential(3)} vs (eta/4S) Tr H = ${r[2].toExponential(3)}`;
});

bind("l-run", "l-out", () => {
  const r = laplace_odds(num("l-t"));
  return `quadrature p_A ${r[0].toFixed(5)}\nLaplace p_A    ${r[1].toFixed(5)}\nodds error     ${r[2].toExponential(2)}`;
});

bind("o-run", "o-out", () => {
  const r = well_occupancy(num("o-eta"), num("o-sigma2"), num("o-batch"), num("o-samples"), 1n);
  return `SGD p_A ${r[0].toFixed(4)} vs Boltzmann ${r[1].toFixed(4)}\n` +
    `${r[2]} transitions at eta sigma^2 / S = ${r[3]}`;
});
