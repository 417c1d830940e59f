/**
 * EMBX binary tensor format.
 *
 * Layout, all little-endian:
 *   bytes 0..3   magic "EMBX"
 *   u32          version (1)
 *   u32          dtype   (0 = float32)
 *   u32          ndim
 *   ndim x u64   dims
 *   payload      float32 values, C order
 */
import { promises as fs } from "node:fs";
import * as path from "node:path";

export const EMBX_VERSION = 1;
export const EMBX_DTYPE_F32 = 0;

const MAGIC = "EMBX";

export function encodeEmbx(dims: number[], data: Float32Array): Buffer {
  const count = dims.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new Error(`dims [${dims}] imply ${count} values, got ${data.length}`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`non-finite value at flat index ${i}`);
    }
  }
  const header = Buffer.alloc(4 + 4 * 3 + 8 * dims.length);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(EMBX_VERSION, 4);
  header.writeUInt32LE(EMBX_DTYPE_F32, 8);
  header.writeUInt32LE(dims.length, 12);
  dims.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), 16 + 8 * i));
  const payload = Buffer.alloc(4 * data.length);
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i]!, 4 * i);
  return Buffer.concat([header, payload]);
}

export interface EmbxTensor {
  dims: number[];
  data: Float32Array;
}

export function decodeEmbx(buf: Buffer, label = "buffer"): EmbxTensor {
  if (buf.length < 16 || buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error(`${label}: not an EMBX file`);
  }
  const version = buf.readUInt32LE(4);
  const dtype = buf.readUInt32LE(8);
  const ndim = buf.readUInt32LE(12);
  if (version !== EMBX_VERSION) throw new Error(`${label}: unsupported version ${version}`);
  if (dtype !== EMBX_DTYPE_F32) throw new Error(`${label}: unsupported dtype ${dtype}`);
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) dims.push(Number(buf.readBigUInt64LE(16 + 8 * i)));
  const count = dims.reduce((a, b) => a * b, 1);
  const start = 16 + 8 * ndim;
  if (buf.length !== start + 4 * count) {
    throw new Error(`${label}: expected ${start + 4 * count} bytes, got ${buf.length}`);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = buf.readFloatLE(start + 4 * i);
  return { dims, data };
}

/** Write-temp-then-rename so readers never observe a partial file. */
export async function writeFileAtomic(filePath: string, contents: Buffer | string): Promise<void> {
  await fs.mkdir(path.dirname(filePath), { recursive: true });
  const tmp = `${filePath}.tmp-${process.pid}`;
  await fs.writeFile(tmp, contents);
  await fs.rename(tmp, filePath);
}

export async function writeEmbx(filePath: string, dims: number[], data: Float32Array): Promise<void> {
  await writeFileAtomic(filePath, encodeEmbx(dims, data));
}

export async function readEmbx(filePath: string): Promise<EmbxTensor> {
  return decodeEmbx(await fs.readFile(filePath), filePath);
}
