// Spot price history as inline SVG: one marker per recorded sample plus a
// step line, because a price holds between repricings rather than ramping.
// Scaling is the only arithmetic; every label is a server-sent figure.

import { esc, fmtClock } from "./format.js";
import type { PricePoint } from "./types.js";

const W = 560;
const H = 220;
const PAD_L = 52;
const PAD_R = 14;
const PAD_T = 14;
const PAD_B = 28;

export function priceChartSvg(points: PricePoint[]): string {
  if (points.length === 0) {
    return `<p class="chart-empty">no price samples yet</p>`;
  }
  const pts = [...points].sort((a, b) => a.t - b.t);
  const ts = pts.map((p) => p.t);
  const vals = pts.map((p) => parseFloat(p.price));
  const tMin = ts[0];
  const tMax = ts[ts.length - 1];
  const vMin = Math.min(...vals);
  const vMax = Math.max(...vals);

  const x = (t: number) =>
    tMax === tMin ? PAD_L : PAD_L + ((t - tMin) / (tMax - tMin)) * (W - PAD_L - PAD_R);
  const y = (v: number) =>
    vMax === vMin
      ? H / 2
      : H - PAD_B - ((v - vMin) / (vMax - vMin)) * (H - PAD_T - PAD_B);

  let path = `M ${r2(x(pts[0].t))} ${r2(y(vals[0]))}`;
  for (let i = 1; i < pts.length; i++) {
    path += ` H ${r2(x(pts[i].t))} V ${r2(y(vals[i]))}`;
  }
  path += ` H ${W - PAD_R}`; // the last price holds until the next repricing

  const circles = pts
    .map(
      (p, i) =>
        `<circle class="pt" cx="${r2(x(p.t))}" cy="${r2(y(vals[i]))}" r="3.5" ` +
        `data-t="${esc(p.t)}" data-price="${esc(p.price)}"><title>${esc(
          p.price,
        )} at ${esc(fmtClock(p.t))}</title></circle>`,
    )
    .join("");

  const loPoint = pts[vals.indexOf(vMin)];
  const hiPoint = pts[vals.indexOf(vMax)];
  return (
    `<svg class="price-chart" viewBox="0 0 ${W} ${H}" role="img" aria-label="price history">` +
    `<text class="axis" x="4" y="${PAD_T + 6}">${esc(hiPoint.price)}</text>` +
    `<text class="axis" x="4" y="${H - PAD_B}">${esc(loPoint.price)}</text>` +
    `<text class="axis" x="${PAD_L}" y="${H - 8}">${esc(fmtClock(tMin))}</text>` +
    `<text class="axis" x="${W - PAD_R}" y="${H - 8}" text-anchor="end">${esc(
      fmtClock(tMax),
    )}</text>` +
    `<path class="step" d="${path}" fill="none"/>` +
    circles +
    `</svg>`
  );
}

function r2(n: number): string {
  return (Math.round(n * 100) / 100).toString();
}
