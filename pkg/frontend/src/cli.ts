#!/usr/bin/env node
/** `clip-extract` command line entry point. */
import { promises as fs } from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { extract } from "./extract.js";
import {
  BACKBONE_DIMS,
  HttpProvider,
  SyntheticProvider,
  type EmbeddingProvider,
} from "./provider.js";

const DEFAULT_TEMPLATES = path.join(
  path.dirname(fileURLToPath(import.meta.url)),
  "..",
  "prompts",
  "templates.txt",
);

export async function loadTemplates(filePath: string): Promise<string[]> {
  const raw = await fs.readFile(filePath, "utf-8");
  const templates = raw
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0 && !line.startsWith("#"));
  if (templates.length === 0) throw new Error(`${filePath}: no templates found`);
  return templates;
}

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName("clip-extract")
    .option("dataset", { type: "string", demandOption: true, describe: "dataset root with train/ and test/ class folders" })
    .option("name", { type: "string", describe: "dataset name (default: folder basename)" })
    .option("backbone", { type: "string", default: "RN50", describe: "visual backbone identifier" })
    .option("shots", { type: "number", default: 16, describe: "support shots K per class" })
    .option("templates", { type: "string", default: DEFAULT_TEMPLATES, describe: "prompt template file" })
    .option("out-dir", { type: "string", demandOption: true })
    .option("seed", { type: "number", default: 0, describe: "seed for shot sampling" })
    .option("provider", { choices: ["http", "synthetic"] as const, default: "http" })
    .option("endpoint", { type: "string", describe: "embedding service base URL (http provider)" })
    .option("dim", { type: "number", describe: "embedding width override (synthetic provider)" })
    .strict()
    .help()
    .parseAsync();

  const dim = args.dim ?? BACKBONE_DIMS[args.backbone];
  if (dim === undefined) {
    throw new Error(`unknown backbone ${args.backbone}; pass --dim explicitly`);
  }
  let provider: EmbeddingProvider;
  if (args.provider === "synthetic") {
    provider = new SyntheticProvider(args.backbone, dim);
  } else {
    if (!args.endpoint) throw new Error("--endpoint is required with the http provider");
    provider = new HttpProvider(args.backbone, dim, args.endpoint);
  }

  const result = await extract(
    {
      datasetName: args.name ?? path.basename(path.resolve(args.dataset)),
      datasetPath: args.dataset,
      backbone: args.backbone,
      shots: args.shots,
      templates: await loadTemplates(args.templates),
      outDir: args["out-dir"],
      seed: args.seed,
    },
    provider,
  );

  console.log(`classes: ${result.classNames.length}`);
  console.log(`manifest: ${result.manifestPath}`);
  if (result.trainManifestPath) console.log(`train manifest: ${result.trainManifestPath}`);
  console.log(`skipped: ${result.skipped.length} (${result.sidecarPath})`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${path.resolve(process.argv[1])}`).href;
if (invokedDirectly) {
  main(hideBin(process.argv)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(`error: ${err instanceof Error ? err.message : err}`);
      process.exit(1);
    },
  );
}
