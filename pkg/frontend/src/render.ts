#!/usr/bin/env node
import { readFile, writeFile } from "node:fs/promises";
import { pathToFileURL } from "node:url";
import yargs from "yargs";

import { METRIC_NAMES, MetricName, parseMetricsCsv } from "./csv.js";
import { buildFigure, coordinateDump, renderSvg } from "./figure.js";

function splitList(v: string | string[]): string[] {
  const parts = Array.isArray(v) ? v : [v];
  return parts.flatMap((p) => p.split(",")).map((s) => s.trim()).filter((s) => s !== "");
}

function dumpPathFor(out: string): string {
  return out.replace(/\.[^./\\]+$/, "") + ".json";
}

async function writePng(svg: string, out: string): Promise<void> {
  let resvg: typeof import("@resvg/resvg-js");
  try {
    resvg = await import("@resvg/resvg-js");
  } catch {
    throw new Error(
      "png output needs the optional @resvg/resvg-js package; " +
      "install it or write an .svg file instead",
    );
  }
  const rendered = new resvg.Resvg(svg, { fitTo: { mode: "zoom", value: 2 } });
  await writeFile(out, rendered.render().asPng());
}

export async function runCli(argv: string[]): Promise<number> {
  let args;
  try {
    args = await yargs(argv)
      .usage("Render a line-grid figure from a metrics CSV sweep")
      .option("in", { type: "string", demandOption: true, describe: "metrics CSV from the simulator" })
      .option("param", { type: "string", demandOption: true, describe: "sweep parameter to put on the x axis" })
      .option("metrics", {
        type: "string", array: true, default: ["rel_bias_pct", "root_mse"],
        describe: `metric rows, comma separated (${METRIC_NAMES.join(", ")})`,
      })
      .option("methods", { type: "string", array: true, describe: "restrict to these methods" })
      .option("out", { type: "string", demandOption: true, describe: "output .svg or .png path" })
      .option("dump", { type: "string", describe: "coordinate JSON path (default: out with .json)" })
      .strict()
      .exitProcess(false)
      .fail((msg, err) => { throw err ?? new Error(msg); })
      .parse();
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 2;
  }

  let text: string;
  try {
    text = await readFile(args.in, "utf8");
  } catch (e) {
    console.error(`error: cannot read ${args.in}: ${(e as Error).message}`);
    return 3;
  }

  try {
    const records = parseMetricsCsv(text);
    const model = buildFigure(records, {
      param: args.param,
      metrics: splitList(args.metrics) as MetricName[],
      methods: args.methods === undefined ? undefined : splitList(args.methods),
    });
    const svg = renderSvg(model);
    if (args.out.endsWith(".png")) {
      await writePng(svg, args.out);
    } else {
      await writeFile(args.out, svg, "utf8");
    }
    await writeFile(args.dump ?? dumpPathFor(args.out), coordinateDump(model), "utf8");
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 2;
  }
  return 0;
}

const invokedDirectly = process.argv[1] !== undefined
  && import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  runCli(process.argv.slice(2)).then((code) => { process.exitCode = code; });
}
