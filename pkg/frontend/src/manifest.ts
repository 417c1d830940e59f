/** Task manifest JSON: the contract the few-shot engine loads tasks from. */
import { z } from "zod";

import { writeFileAtomic } from "./embx.js";

export const taskManifestSchema = z.object({
  dataset_name: z.string().min(1),
  embed_dim: z.number().int().positive(),
  class_names: z.array(z.string()).min(2),
  shots: z.number().int().min(1),
  text_embeddings: z.string(),
  support: z.string(),
  query_features: z.string(),
  query_labels: z.string(),
  split: z.array(z.enum(["base", "novel"])).optional(),
});

export type TaskManifest = z.infer<typeof taskManifestSchema>;

export async function writeManifest(filePath: string, manifest: TaskManifest): Promise<void> {
  taskManifestSchema.parse(manifest);
  await writeFileAtomic(filePath, JSON.stringify(manifest, null, 2) + "\n");
}
