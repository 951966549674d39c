/** Shared corpus/service fixtures for tests that drive the audio toolkit's
 * CLI and HTTP service as external processes.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export const RAES = process.env.RAES_CLI ?? "raes";

export function run(args: string[], timeoutMs = 300_000): string {
  return execFileSync(RAES, args, {
    encoding: "utf-8", timeout: timeoutMs, maxBuffer: 64 * 1024 * 1024,
  });
}

export interface CorpusOptions {
  count: number;
  seed: number;
  durationS?: number;
  serChoicesDb?: number[];
  nearendSilentRatio?: number;
  withTargets?: boolean;
}

export interface Corpus {
  root: string;
  manifestPath: string;
}

/** Generate sources, synthesize mixtures, and (optionally) dump tensors. */
export function makeCorpus(options: CorpusOptions): Corpus {
  const root = mkdtempSync(join(tmpdir(), "raes-trainer-"));
  const sources = join(root, "sources");
  run(["corpus", "--out", sources, "--seed", String(options.seed)]);
  const dataset = join(root, "dataset");
  const config = {
    farend_dirs: [join(sources, "farend")],
    nearend_dirs: [join(sources, "nearend")],
    count: options.count,
    seed: options.seed,
    output_dir: dataset,
    duration_s: options.durationS ?? 1.0,
    nearend_silent_ratio: options.nearendSilentRatio ?? 0.3,
    ...(options.serChoicesDb !== undefined
      ? { ser_choices_db: options.serChoicesDb }
      : {}),
  };
  const configPath = join(root, "synth.json");
  writeFileSync(configPath, JSON.stringify(config, null, 2));
  run(["synth", "--config", configPath]);
  const manifestPath = join(dataset, "manifest.jsonl");
  if (options.withTargets !== false) {
    run(["targets", "--manifest", manifestPath]);
  }
  return { root, manifestPath };
}

export interface Service {
  url: string;
  stop: () => void;
}

/** Start the HTTP service and wait for its health endpoint. */
export async function startService(port: number): Promise<Service> {
  const child: ChildProcess = spawn(RAES, ["serve", "--port", String(port)], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  let stderr = "";
  child.stderr?.on("data", (chunk: Buffer) => {
    stderr += chunk.toString();
  });
  const url = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (child.exitCode !== null) {
      throw new Error(`service exited with ${child.exitCode}: ${stderr}`);
    }
    try {
      const response = await fetch(`${url}/health`);
      if (response.ok) break;
    } catch {
      // Not listening yet.
    }
    if (Date.now() > deadline) {
      child.kill();
      throw new Error(`service did not come up on ${url}: ${stderr}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  return { url, stop: () => void child.kill() };
}

export function b64FromF32(values: Float64Array | Float32Array): string {
  const f32 = values instanceof Float32Array ? values : Float32Array.from(values);
  return Buffer.from(f32.buffer, f32.byteOffset, f32.byteLength).toString("base64");
}

export function f32FromB64(payload: string): Float32Array {
  const raw = Buffer.from(payload, "base64");
  const aligned = new ArrayBuffer(raw.length);
  new Uint8Array(aligned).set(raw);
  return new Float32Array(aligned);
}
