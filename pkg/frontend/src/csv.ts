import Papa from "papaparse";

export const METRICS_HEADER = [
  "scenario_id", "spacing", "mcar_rate", "param_name", "param_value",
  "method", "bias", "rel_bias_pct", "sd", "se", "root_mse",
  "n_reps_used", "n_reps_failed",
] as const;

export const METRIC_NAMES = ["bias", "rel_bias_pct", "sd", "se", "root_mse"] as const;
export type MetricName = (typeof METRIC_NAMES)[number];

/** One metrics CSV row. Field names mirror the file header exactly. */
export interface MetricsRecord {
  scenario_id: string;
  spacing: string;
  mcar_rate: number;
  param_name: string;
  param_value: number | null;
  method: string;
  bias: number;
  rel_bias_pct: number;
  sd: number;
  se: number;
  root_mse: number;
  n_reps_used: number;
  n_reps_failed: number;
}

/** Parse a float the way the producer serializes it (nan/inf spelled out). */
function toNumber(raw: string, field: string, line: number): number {
  if (raw === "nan") return NaN;
  if (raw === "inf") return Infinity;
  if (raw === "-inf") return -Infinity;
  const v = Number(raw);
  if (raw.trim() === "" || Number.isNaN(v)) {
    throw new Error(`line ${line}: field ${field} is not numeric: ${JSON.stringify(raw)}`);
  }
  return v;
}

export function parseMetricsCsv(text: string): MetricsRecord[] {
  if (text.trim() === "") {
    throw new Error("empty metrics CSV");
  }
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`metrics CSV parse error on row ${e.row}: ${e.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  if (fields.join(",") !== METRICS_HEADER.join(",")) {
    throw new Error(
      `unexpected header ${JSON.stringify(fields.join(","))}; ` +
      `expected ${METRICS_HEADER.join(",")}`,
    );
  }
  return parsed.data.map((row, i) => {
    const line = i + 2;
    return {
      scenario_id: row.scenario_id,
      spacing: row.spacing,
      mcar_rate: toNumber(row.mcar_rate, "mcar_rate", line),
      param_name: row.param_name,
      param_value: row.param_value === "" ? null
        : toNumber(row.param_value, "param_value", line),
      method: row.method,
      bias: toNumber(row.bias, "bias", line),
      rel_bias_pct: toNumber(row.rel_bias_pct, "rel_bias_pct", line),
      sd: toNumber(row.sd, "sd", line),
      se: toNumber(row.se, "se", line),
      root_mse: toNumber(row.root_mse, "root_mse", line),
      n_reps_used: toNumber(row.n_reps_used, "n_reps_used", line),
      n_reps_failed: toNumber(row.n_reps_failed, "n_reps_failed", line),
    };
  });
}
