// Test harness: spawns the real Python service on a scratch directory and
// tears it down afterwards. The UI is exercised only through HTTP.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import { ApiClient } from "../src/api.js";
import type { Phase, RunStatus } from "../src/types.js";

const REPO_ROOT = resolve(fileURLToPath(new URL(".", import.meta.url)), "..", "..");

export interface Service {
  base: string;
  api: ApiClient;
  runsDir: string;
  fixturesDir: string;
  stop(): void;
}

const sleep = (ms: number) => new Promise((resolveFn) => setTimeout(resolveFn, ms));

export async function startService(): Promise<Service> {
  const scratch = mkdtempSync(join(tmpdir(), "dr-ui-"));
  const fixturesDir = join(scratch, "fixtures");
  execFileSync("python3", [
    "-m", "deepresearch.cli", "fixtures", "demo", "--out", fixturesDir,
  ], { cwd: REPO_ROOT });
  const runsDir = join(scratch, "runs");
  const port = 8600 + Math.floor(Math.random() * 800);
  const child: ChildProcess = spawn("python3", [
    "-m", "deepresearch.cli", "serve",
    "--host", "127.0.0.1",
    "--port", String(port),
    "--runs-dir", runsDir,
    "--fixtures", fixturesDir,
    "--critic", "human",
  ], { cwd: REPO_ROOT, stdio: "ignore" });

  const base = `http://127.0.0.1:${port}`;
  for (let attempt = 0; attempt < 150; attempt += 1) {
    try {
      const response = await fetch(`${base}/api/runs`);
      if (response.ok) {
        return {
          base,
          api: new ApiClient(base),
          runsDir,
          fixturesDir,
          stop: () => child.kill("SIGTERM"),
        };
      }
    } catch {
      // not up yet
    }
    await sleep(100);
  }
  child.kill("SIGTERM");
  throw new Error("service did not become ready");
}

export async function waitPhase(
  api: ApiClient,
  runId: string,
  phases: Phase[],
  timeoutMs = 30_000,
): Promise<RunStatus> {
  const deadline = Date.now() + timeoutMs;
  let status: RunStatus | null = null;
  while (Date.now() < deadline) {
    status = await api.status(runId);
    if (phases.includes(status.phase)) return status;
    await sleep(50);
  }
  throw new Error(`run ${runId} never reached ${phases}; last ${JSON.stringify(status)}`);
}

/** Count committed steps in the on-disk trace (one state line per step). */
export function traceStepCount(runsDir: string, runId: string): number {
  const raw = readFileSync(join(runsDir, runId, "trace.jsonl"), "utf-8");
  return raw
    .split("\n")
    .filter((line) => line.trim())
    .map((line) => JSON.parse(line) as { kind: string })
    .filter((line) => line.kind === "state").length;
}
