import { METRIC_NAMES, MetricName, MetricsRecord } from "./csv.js";

// Canonical series order; anything else in the file is appended after.
export const METHOD_ORDER = ["lmm", "simple", "ols", "blup", "inflated", "blup_corrected"];

export const METHOD_COLORS: Record<string, string> = {
  lmm: "#1f77b4",
  simple: "#ff7f0e",
  ols: "#2ca02c",
  blup: "#d62728",
  inflated: "#9467bd",
  blup_corrected: "#8c564b",
};
const FALLBACK_COLOR = "#7f7f7f";

export interface Point {
  x: number;
  y: number | null; // null marks a gap (non-finite metric)
}

export interface Series {
  method: string;
  points: Point[];
}

/** One panel: a metric plotted against the sweep parameter in one design cell. */
export interface Facet {
  metric: MetricName;
  spacing: string;
  mcar_rate: number;
  series: Series[];
}

export interface FigureModel {
  param: string;
  values: number[];
  metrics: MetricName[];
  methods: string[];
  facets: Facet[];
}

export interface FigureOptions {
  param: string;
  metrics?: MetricName[];
  methods?: string[];
}

function cellKey(spacing: string, mcar: number): string {
  return `${spacing}@${mcar}`;
}

export function buildFigure(records: MetricsRecord[], opts: FigureOptions): FigureModel {
  const param = opts.param;
  const rows = records.filter((r) => r.param_name === param && r.param_value !== null);
  if (rows.length === 0) {
    const seen = [...new Set(records.map((r) => r.param_name).filter((p) => p !== ""))];
    if (seen.length === 0) {
      throw new Error(
        `no sweep parameter in this file; run the producer with a sweep preset ` +
        `(for example fig1-sigma-m) to get param_name/param_value columns`,
      );
    }
    throw new Error(`parameter ${param} not found; file sweeps: ${seen.sort().join(", ")}`);
  }

  const metrics = opts.metrics ?? [...METRIC_NAMES];
  for (const m of metrics) {
    if (!(METRIC_NAMES as readonly string[]).includes(m)) {
      throw new Error(`unknown metric ${m}; choose from ${METRIC_NAMES.join(", ")}`);
    }
  }

  const values = [...new Set(rows.map((r) => r.param_value as number))].sort((a, b) => a - b);

  // Design cells: regular spacing first, then MCAR rate ascending.
  const cells: Array<{ spacing: string; mcar_rate: number }> = [];
  for (const r of rows) {
    if (!cells.some((c) => c.spacing === r.spacing && c.mcar_rate === r.mcar_rate)) {
      cells.push({ spacing: r.spacing, mcar_rate: r.mcar_rate });
    }
  }
  cells.sort((a, b) => {
    if (a.spacing !== b.spacing) return a.spacing === "regular" ? -1 : 1;
    return a.mcar_rate - b.mcar_rate;
  });

  const present = [...new Set(rows.map((r) => r.method))];
  let methods = METHOD_ORDER.filter((m) => present.includes(m))
    .concat(present.filter((m) => !METHOD_ORDER.includes(m)).sort());
  if (opts.methods) {
    for (const m of opts.methods) {
      if (!methods.includes(m)) {
        throw new Error(`method ${m} not in file; available: ${methods.join(", ")}`);
      }
    }
    methods = methods.filter((m) => opts.methods!.includes(m));
  }

  // Index rows by (cell, method, value) for point lookup.
  const byKey = new Map<string, MetricsRecord>();
  for (const r of rows) {
    byKey.set(`${cellKey(r.spacing, r.mcar_rate)}|${r.method}|${r.param_value}`, r);
  }

  const facets: Facet[] = [];
  for (const metric of metrics) {
    for (const cell of cells) {
      const series: Series[] = methods.map((method) => ({
        method,
        points: values.map((x) => {
          const rec = byKey.get(`${cellKey(cell.spacing, cell.mcar_rate)}|${method}|${x}`);
          const y = rec === undefined ? null : rec[metric];
          return { x, y: y !== null && Number.isFinite(y) ? y : null };
        }),
      }));
      facets.push({ metric, spacing: cell.spacing, mcar_rate: cell.mcar_rate, series });
    }
  }

  return { param, values, metrics, methods, facets };
}

// ── SVG rendering ───────────────────────────────────────────────────────────

const PANEL_W = 220;
const PANEL_H = 150;
const MARGIN = { left: 64, right: 16, top: 40, bottom: 44 };
const GAP_X = 14;
const GAP_Y = 26;
const LEGEND_H = 26;

function colorFor(method: string): string {
  return METHOD_COLORS[method] ?? FALLBACK_COLOR;
}

/** Short fixed-notation tick label without trailing zeros. */
function tickLabel(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(4)));
}

function niceTicks(lo: number, hi: number, n: number): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step0 = span / Math.max(1, n - 1);
  const mag = Math.pow(10, Math.floor(Math.log10(step0)));
  let step = mag;
  for (const m of [1, 2, 2.5, 5, 10]) {
    if (mag * m >= step0) { step = mag * m; break; }
  }
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) {
    ticks.push(Math.abs(t) < step * 1e-9 ? 0 : t);
  }
  return ticks;
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

interface Scale {
  lo: number;
  hi: number;
  apply(v: number): number;
}

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  if (hi === lo) { lo -= 0.5; hi += 0.5; }
  const k = (outHi - outLo) / (hi - lo);
  return { lo, hi, apply: (v: number) => outLo + (v - lo) * k };
}

/**
 * Deterministic line-grid SVG: one row of panels per metric, one column per
 * design cell, a shared y-scale within each row, and gaps where points are
 * null. Output depends only on the model, so equal models give equal bytes.
 */
export function renderSvg(model: FigureModel): string {
  const nRows = model.metrics.length;
  const nCols = model.facets.length / Math.max(1, nRows);
  const width = MARGIN.left + nCols * PANEL_W + (nCols - 1) * GAP_X + MARGIN.right;
  const height = MARGIN.top + LEGEND_H
    + nRows * PANEL_H + (nRows - 1) * GAP_Y + MARGIN.bottom;

  const xlo = model.values[0];
  const xhi = model.values[model.values.length - 1];

  // Shared y-range per metric row, padded 5% so markers stay inside.
  const yRange = new Map<MetricName, { lo: number; hi: number }>();
  for (const metric of model.metrics) {
    let lo = Infinity;
    let hi = -Infinity;
    for (const facet of model.facets) {
      if (facet.metric !== metric) continue;
      for (const s of facet.series) {
        for (const p of s.points) {
          if (p.y === null) continue;
          if (p.y < lo) lo = p.y;
          if (p.y > hi) hi = p.y;
        }
      }
    }
    if (lo === Infinity) { lo = 0; hi = 1; }
    const pad = (hi - lo || 1) * 0.05;
    yRange.set(metric, { lo: lo - pad, hi: hi + pad });
  }

  const out: string[] = [];
  out.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="11">`,
  );
  out.push(`<rect width="${width}" height="${height}" fill="white"/>`);

  // Legend across the top.
  let lx = MARGIN.left;
  const ly = 18;
  for (const method of model.methods) {
    out.push(`<line x1="${lx}" y1="${ly}" x2="${lx + 18}" y2="${ly}" ` +
      `stroke="${colorFor(method)}" stroke-width="2"/>`);
    out.push(`<circle cx="${lx + 9}" cy="${ly}" r="3" fill="${colorFor(method)}"/>`);
    out.push(`<text x="${lx + 22}" y="${ly + 4}">${escapeXml(method)}</text>`);
    lx += 30 + 7 * method.length;
  }

  for (let row = 0; row < nRows; row++) {
    const metric = model.metrics[row];
    const { lo, hi } = yRange.get(metric)!;
    const py0 = MARGIN.top + LEGEND_H + row * (PANEL_H + GAP_Y);
    const yScale = linearScale(lo, hi, py0 + PANEL_H, py0);
    const yTicks = niceTicks(lo, hi, 5);

    // Row label on the left edge.
    out.push(`<text x="14" y="${py0 + PANEL_H / 2}" ` +
      `transform="rotate(-90 14 ${py0 + PANEL_H / 2})" text-anchor="middle" ` +
      `font-size="12">${escapeXml(metric)}</text>`);

    for (let col = 0; col < nCols; col++) {
      const facet = model.facets[row * nCols + col];
      const px0 = MARGIN.left + col * (PANEL_W + GAP_X);
      const xScale = linearScale(xlo, xhi, px0 + 8, px0 + PANEL_W - 8);

      out.push(`<rect x="${px0}" y="${py0}" width="${PANEL_W}" height="${PANEL_H}" ` +
        `fill="none" stroke="#cccccc"/>`);
      if (row === 0) {
        const title = `${facet.spacing}, mcar=${facet.mcar_rate}`;
        out.push(`<text x="${px0 + PANEL_W / 2}" y="${py0 - 6}" text-anchor="middle" ` +
          `font-size="12">${escapeXml(title)}</text>`);
      }

      for (const t of yTicks) {
        const y = yScale.apply(t);
        out.push(`<line x1="${px0}" y1="${y}" x2="${px0 + PANEL_W}" y2="${y}" ` +
          `stroke="#eeeeee"/>`);
        if (col === 0) {
          out.push(`<text x="${px0 - 6}" y="${y + 3}" text-anchor="end" ` +
            `font-size="10">${tickLabel(t)}</text>`);
        }
      }
      for (const v of model.values) {
        const x = xScale.apply(v);
        out.push(`<line x1="${x}" y1="${py0 + PANEL_H}" x2="${x}" ` +
          `y2="${py0 + PANEL_H + 4}" stroke="#888888"/>`);
        if (row === nRows - 1) {
          out.push(`<text x="${x}" y="${py0 + PANEL_H + 16}" text-anchor="middle" ` +
            `font-size="10">${tickLabel(v)}</text>`);
        }
      }

      for (const s of facet.series) {
        const color = colorFor(s.method);
        // Break the path at every null so gaps stay visible.
        let d = "";
        let pen = false;
        for (const p of s.points) {
          if (p.y === null) { pen = false; continue; }
          const x = xScale.apply(p.x);
          const y = yScale.apply(p.y);
          d += `${pen ? "L" : "M"}${x} ${y}`;
          pen = true;
        }
        if (d !== "") {
          out.push(`<path d="${d}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
        }
        for (const p of s.points) {
          if (p.y === null) continue;
          out.push(`<circle cx="${xScale.apply(p.x)}" cy="${yScale.apply(p.y)}" ` +
            `r="2.5" fill="${color}"/>`);
        }
      }
    }
  }

  out.push(`<text x="${width / 2}" y="${height - 10}" text-anchor="middle" ` +
    `font-size="12">${escapeXml(model.param)}</text>`);
  out.push("</svg>");
  return out.join("\n") + "\n";
}

/**
 * JSON dump of everything renderSvg draws, for checking plotted values
 * against the source file. JSON round-trips doubles exactly, so a consumer
 * can compare dumped y values to the CSV with strict equality.
 */
export function coordinateDump(model: FigureModel): string {
  return JSON.stringify(model, null, 2) + "\n";
}
