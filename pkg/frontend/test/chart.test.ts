import { describe, expect, it } from "vitest";
import { priceChartSvg } from "../src/chart.js";
import type { PricePoint } from "../src/types.js";

function pt(t: number, price: string): PricePoint {
  return { offer_id: "offer-1", t, price };
}

function markers(svg: string): { t: string; price: string }[] {
  const out: { t: string; price: string }[] = [];
  const re = /<circle[^>]*data-t="([^"]*)"[^>]*data-price="([^"]*)"/g;
  for (let m = re.exec(svg); m; m = re.exec(svg)) {
    out.push({ t: m[1], price: m[2] });
  }
  return out;
}

describe("priceChartSvg", () => {
  it("renders one marker per sample, in timestamp order", () => {
    const svg = priceChartSvg([
      pt(0, "10.0000"),
      pt(60, "10.5000"),
      pt(120, "10.2000"),
      pt(180, "11.0000"),
    ]);
    const pts = markers(svg);
    expect(pts).toHaveLength(4);
    expect(pts.map((p) => p.t)).toEqual(["0", "60", "120", "180"]);
    expect(pts.map((p) => p.price)).toEqual([
      "10.0000",
      "10.5000",
      "10.2000",
      "11.0000",
    ]);
  });

  it("sorts shuffled samples by timestamp before drawing", () => {
    const svg = priceChartSvg([pt(120, "3"), pt(0, "1"), pt(60, "2")]);
    expect(markers(svg).map((p) => p.t)).toEqual(["0", "60", "120"]);
  });

  it("draws a step line that holds the last price to the right edge", () => {
    const svg = priceChartSvg([pt(0, "1.0"), pt(100, "2.0")]);
    const d = /<path class="step" d="([^"]*)"/.exec(svg)![1];
    // move, horizontal hold, vertical jump, final hold
    expect(d).toMatch(/^M [\d.]+ [\d.]+ H [\d.]+ V [\d.]+ H [\d.]+$/);
  });

  it("labels the axes with the verbatim price strings", () => {
    const svg = priceChartSvg([pt(0, "9.9999"), pt(50, "12.0001")]);
    expect(svg).toContain(">12.0001</text>");
    expect(svg).toContain(">9.9999</text>");
  });

  it("copes with a single sample", () => {
    const svg = priceChartSvg([pt(42, "5.0000")]);
    expect(markers(svg)).toHaveLength(1);
    expect(svg).toContain("price-chart");
  });

  it("says so when there are no samples", () => {
    expect(priceChartSvg([])).toContain("no price samples yet");
  });
});
