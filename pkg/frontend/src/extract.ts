/**
 * Dataset extraction: walk `<dataset>/train/<class>/` and
 * `<dataset>/test/<class>/`, embed every image, ensemble the class-name
 * prompts, sample K support shots per class, and write the EMBX tensors plus
 * task manifests the few-shot engine loads directly.
 */
import { promises as fs } from "node:fs";
import * as path from "node:path";
import { z } from "zod";

import { writeEmbx, writeFileAtomic } from "./embx.js";
import { writeManifest, type TaskManifest } from "./manifest.js";
import { ensembleText, type EmbeddingProvider } from "./provider.js";
import { Rng, sampleWithoutReplacement } from "./rng.js";

export const extractConfigSchema = z.object({
  datasetName: z.string().min(1),
  datasetPath: z.string().min(1),
  backbone: z.string().min(1),
  shots: z.number().int().min(1),
  templates: z.array(z.string().min(1)).min(1),
  outDir: z.string().min(1),
  seed: z.number().int().nonnegative(),
});

export type ExtractConfig = z.infer<typeof extractConfigSchema>;

export interface ExtractResult {
  manifestPath: string;
  trainManifestPath: string | null;
  sidecarPath: string;
  classNames: string[];
  skipped: { path: string; reason: string }[];
}

const IMAGE_EXTENSIONS = new Set([".jpg", ".jpeg", ".png", ".bmp", ".webp", ".gif"]);

async function listImages(dir: string): Promise<string[]> {
  const entries = await fs.readdir(dir, { withFileTypes: true });
  return entries
    .filter((e) => e.isFile() && IMAGE_EXTENSIONS.has(path.extname(e.name).toLowerCase()))
    .map((e) => path.join(dir, e.name))
    .sort();
}

async function listClassDirs(splitDir: string): Promise<string[]> {
  const entries = await fs.readdir(splitDir, { withFileTypes: true });
  return entries
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
}

class Skips {
  readonly records: { path: string; reason: string }[] = [];

  add(filePath: string, reason: string): void {
    this.records.push({ path: filePath, reason });
    console.warn(`skip: ${filePath}: ${reason}`);
  }
}

async function embedAll(
  provider: EmbeddingProvider,
  files: string[],
  skips: Skips,
): Promise<{ file: string; embedding: Float32Array }[]> {
  const out: { file: string; embedding: Float32Array }[] = [];
  for (const file of files) {
    try {
      const bytes = await fs.readFile(file);
      out.push({ file, embedding: await provider.embedImage(bytes, file) });
    } catch (err) {
      skips.add(file, err instanceof Error ? err.message : String(err));
    }
  }
  return out;
}

function stack(rows: Float32Array[], dim: number): Float32Array {
  const out = new Float32Array(rows.length * dim);
  rows.forEach((row, i) => out.set(row, i * dim));
  return out;
}

async function writeTaskFiles(
  outDir: string,
  name: string,
  config: ExtractConfig,
  dim: number,
  classNames: string[],
  text: Float32Array[],
  support: Float32Array[],
  queries: Float32Array[],
  labels: number[],
): Promise<string> {
  const files = {
    text_embeddings: `${name}.text.embx`,
    support: `${name}.support.embx`,
    query_features: `${name}.queries.embx`,
    query_labels: `${name}.labels.embx`,
  };
  await writeEmbx(path.join(outDir, files.text_embeddings), [classNames.length, dim], stack(text, dim));
  await writeEmbx(
    path.join(outDir, files.support),
    [classNames.length, config.shots, dim],
    stack(support, dim),
  );
  await writeEmbx(path.join(outDir, files.query_features), [queries.length, dim], stack(queries, dim));
  await writeEmbx(path.join(outDir, files.query_labels), [labels.length], Float32Array.from(labels));
  const manifest: TaskManifest = {
    dataset_name: config.datasetName,
    embed_dim: dim,
    class_names: classNames,
    shots: config.shots,
    ...files,
  };
  const manifestPath = path.join(outDir, `${name}.manifest.json`);
  await writeManifest(manifestPath, manifest);
  return manifestPath;
}

/**
 * Run the full extraction. Classes come from the train split in sorted name
 * order; a class is dropped (and logged) when its test directory is missing
 * or it has fewer than K readable train images. The evaluation manifest
 * carries the test-split queries; train images left over after shot sampling
 * become the queries of a sibling `<name>.train` manifest.
 */
export async function extract(
  rawConfig: ExtractConfig,
  provider: EmbeddingProvider,
): Promise<ExtractResult> {
  const config = extractConfigSchema.parse(rawConfig);
  const dim = provider.dim;
  const skips = new Skips();
  const trainRoot = path.join(config.datasetPath, "train");
  const testRoot = path.join(config.datasetPath, "test");

  const classNames: string[] = [];
  const text: Float32Array[] = [];
  const support: Float32Array[] = [];
  const evalQueries: Float32Array[] = [];
  const evalLabels: number[] = [];
  const trainQueries: Float32Array[] = [];
  const trainLabels: number[] = [];

  for (const className of await listClassDirs(trainRoot)) {
    const testDir = path.join(testRoot, className);
    let testFiles: string[];
    try {
      testFiles = await listImages(testDir);
    } catch {
      skips.add(testDir, "missing class directory in test split");
      continue;
    }
    const trainEmbedded = await embedAll(
      provider,
      await listImages(path.join(trainRoot, className)),
      skips,
    );
    if (trainEmbedded.length < config.shots) {
      skips.add(
        path.join(trainRoot, className),
        `only ${trainEmbedded.length} usable train images, need ${config.shots} shots`,
      );
      continue;
    }

    const classIndex = classNames.length;
    classNames.push(className);
    text.push(await ensembleText(provider, className, config.templates));

    // the per-class seed keeps shot selection independent of class ordering
    const rng = new Rng(BigInt(config.seed) * 1000003n + BigInt(classIndex));
    const picked = new Set(sampleWithoutReplacement(rng, trainEmbedded.length, config.shots));
    trainEmbedded.forEach((item, i) => {
      if (picked.has(i)) {
        support.push(item.embedding);
      } else {
        trainQueries.push(item.embedding);
        trainLabels.push(classIndex);
      }
    });

    for (const item of await embedAll(provider, testFiles, skips)) {
      evalQueries.push(item.embedding);
      evalLabels.push(classIndex);
    }
  }

  if (classNames.length < 2) {
    throw new Error(`usable classes: ${classNames.length}, need at least 2`);
  }

  const name = config.datasetName;
  const manifestPath = await writeTaskFiles(
    config.outDir, name, config, dim, classNames, text, support, evalQueries, evalLabels,
  );
  let trainManifestPath: string | null = null;
  if (trainQueries.length > 0) {
    trainManifestPath = await writeTaskFiles(
      config.outDir, `${name}.train`, config, dim, classNames, text, support,
      trainQueries, trainLabels,
    );
  }

  const sidecarPath = path.join(config.outDir, `${name}.skipped.log`);
  const lines = skips.records.map((r) => `${r.path}\t${r.reason}`).join("\n");
  await writeFileAtomic(sidecarPath, lines.length ? lines + "\n" : "");

  return { manifestPath, trainManifestPath, sidecarPath, classNames, skipped: skips.records };
}
