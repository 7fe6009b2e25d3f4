/** Subprocess plumbing: locate and drive the `tubetopo` CLI. */

import { execFile } from "node:child_process";
import { mkdtemp, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { TubeTopoError } from "./arrays.js";

export function cliBinary(): string {
  return process.env.TUBETOPO_BIN ?? "tubetopo";
}

export interface RunResult {
  stdout: string;
  stderr: string;
}

export function runCli(args: string[]): Promise<RunResult> {
  return new Promise((resolve, reject) => {
    execFile(
      cliBinary(),
      [...args, "--json"],
      { maxBuffer: 256 * 1024 * 1024 },
      (error, stdout, stderr) => {
        if (!error) {
          resolve({ stdout, stderr });
          return;
        }
        const exitCode = typeof error.code === "number" ? error.code : 4;
        try {
          const doc = JSON.parse(stderr);
          reject(new TubeTopoError(doc.error.code, doc.error.message, exitCode));
        } catch {
          reject(
            new TubeTopoError(
              "cli-failure",
              `tubetopo exited with ${String(error.code)}: ${stderr || error.message}`,
              exitCode,
            ),
          );
        }
      },
    );
  });
}

export async function withWorkdir<T>(fn: (dir: string) => Promise<T>): Promise<T> {
  const dir = await mkdtemp(join(tmpdir(), "tubetopo-"));
  try {
    return await fn(dir);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}
