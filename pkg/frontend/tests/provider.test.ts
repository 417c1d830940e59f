import { createServer, type Server } from "node:http";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HttpProvider, SyntheticProvider, ensembleText } from "../src/provider.js";

function norm(v: Float32Array): number {
  let sq = 0;
  for (const x of v) sq += x * x;
  return Math.sqrt(sq);
}

describe("SyntheticProvider", () => {
  const provider = new SyntheticProvider("RN50", 64);

  it("emits unit-norm embeddings", async () => {
    const emb = await provider.embedText("a photo of a dog.");
    expect(emb).toHaveLength(64);
    expect(norm(emb)).toBeCloseTo(1.0, 5);
  });

  it("is deterministic per content and backbone", async () => {
    const a = await provider.embedImage(Buffer.from("pixels"), "a.jpg");
    const b = await provider.embedImage(Buffer.from("pixels"), "b.jpg");
    expect(a).toEqual(b);
    const other = await new SyntheticProvider("ViT-B/16", 64).embedImage(
      Buffer.from("pixels"),
      "a.jpg",
    );
    expect(a).not.toEqual(other);
  });

  it("rejects empty image bytes", async () => {
    await expect(provider.embedImage(Buffer.alloc(0), "bad.jpg")).rejects.toThrow(/empty/);
  });
});

describe("ensembleText", () => {
  const provider = new SyntheticProvider("RN50", 32);

  it("averages templates then normalizes", async () => {
    const templates = ["a photo of a {}.", "art of the {}."];
    const parts = await Promise.all(
      templates.map((t) => provider.embedText(t.replace("{}", "cat"))),
    );
    const mean = new Float64Array(32);
    for (const p of parts) for (let i = 0; i < 32; i++) mean[i] += p[i]! / 2;
    const meanNorm = Math.sqrt(mean.reduce((a, x) => a + x * x, 0));
    const out = await ensembleText(provider, "cat", templates);
    expect(norm(out)).toBeCloseTo(1.0, 5);
    for (let i = 0; i < 32; i++) {
      expect(out[i]).toBeCloseTo(mean[i]! / meanNorm, 5);
    }
  });

  it("single template equals the plain embedding", async () => {
    const out = await ensembleText(provider, "dog", ["itap of a {}."]);
    expect(out).toEqual(await provider.embedText("itap of a dog."));
  });

  it("rejects an empty template list", async () => {
    await expect(ensembleText(provider, "x", [])).rejects.toThrow(/empty/);
  });
});

describe("HttpProvider", () => {
  let server: Server;
  let endpoint: string;
  const seen: { route: string; body: any }[] = [];

  beforeAll(async () => {
    server = createServer((req, res) => {
      let raw = "";
      req.on("data", (chunk) => (raw += chunk));
      req.on("end", () => {
        const body = JSON.parse(raw);
        seen.push({ route: req.url ?? "", body });
        res.setHeader("content-type", "application/json");
        if (req.url === "/embed/text" || req.url === "/embed/image") {
          res.end(JSON.stringify({ embedding: [3, 4, 0, 0] }));
        } else {
          res.statusCode = 404;
          res.end("{}");
        }
      });
    });
    await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
    const addr = server.address();
    if (addr === null || typeof addr === "string") throw new Error("no port");
    endpoint = `http://127.0.0.1:${addr.port}`;
  });

  afterAll(() => {
    server.close();
  });

  it("posts text and normalizes the response", async () => {
    const provider = new HttpProvider("RN50", 4, endpoint);
    const emb = await provider.embedText("hello");
    expect(emb[0]).toBeCloseTo(0.6, 6);
    expect(emb[1]).toBeCloseTo(0.8, 6);
    expect(emb[2]).toBe(0);
    expect(emb[3]).toBe(0);
    const last = seen.at(-1)!;
    expect(last.route).toBe("/embed/text");
    expect(last.body).toEqual({ model: "RN50", text: "hello" });
  });

  it("posts images as base64", async () => {
    const provider = new HttpProvider("RN50", 4, endpoint);
    await provider.embedImage(Buffer.from("img"), "x.jpg");
    const last = seen.at(-1)!;
    expect(last.route).toBe("/embed/image");
    expect(Buffer.from(last.body.image_base64, "base64").toString()).toBe("img");
  });

  it("surfaces dimension mismatches", async () => {
    const provider = new HttpProvider("RN50", 8, endpoint);
    await expect(provider.embedText("hello")).rejects.toThrow(/8-d embedding/);
  });
});
