/**
 * Stateless TypeScript facade over the fieldwise CLI.
 *
 * Every function shells out to the core binary; no parsing, scoring, or
 * selection logic is re-implemented here, so behavior is the core's by
 * construction and the fuzz suite pins it bit-for-bit. Configuration
 * travels through explicit file paths and arguments only.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Schema-complete field map: canonical string values or null. */
export type CanonicalFields = Record<string, string | null>;

export interface DecisionJson {
  example_id: string;
  field: string;
  decision: "keep" | "override" | "abstain";
  value: string | null;
  source_model: string | null;
  base_model: string;
  base_value: string | null;
  confidences: Record<string, number>;
}

export interface CanonicalizeResult {
  fields: CanonicalFields;
  /** Exact JSON text emitted by the core (strict-valid, byte-stable). */
  json: string;
}

export interface OverrideResult {
  fields: CanonicalFields;
  decisions: DecisionJson[];
  /** Exact JSON line emitted by the core. */
  json: string;
}

export interface BindOptions {
  /** CLI executable; defaults to $FIELDWISE_BIN, then "fieldwise". */
  bin?: string;
  /** Optional schema.json path (canonicalize only). */
  schemaPath?: string;
  /** Optional canonicalizer config path. */
  configPath?: string;
}

export class FieldwiseCliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
    this.name = "FieldwiseCliError";
  }
}

function resolveBin(options?: BindOptions): string {
  return options?.bin ?? process.env.FIELDWISE_BIN ?? "fieldwise";
}

function runCli(args: string[], stdin: string | undefined, options?: BindOptions): string {
  const proc = spawnSync(resolveBin(options), args, {
    input: stdin,
    encoding: "utf-8",
    maxBuffer: 64 * 1024 * 1024,
  });
  if (proc.error) {
    throw new FieldwiseCliError(`failed to launch fieldwise CLI: ${proc.error.message}`, null, "");
  }
  if (proc.status !== 0) {
    throw new FieldwiseCliError(
      `fieldwise ${args[0]} exited with code ${proc.status}: ${proc.stderr.trim()}`,
      proc.status,
      proc.stderr,
    );
  }
  return proc.stdout;
}

function canonArgs(options?: BindOptions): string[] {
  const args: string[] = [];
  if (options?.schemaPath) args.push("--schema", options.schemaPath);
  if (options?.configPath) args.push("--config", options.configPath);
  return args;
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "fieldwise-bind-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Canonicalize one raw model output into a schema-complete field map. */
export function bindCanonicalize(text: string, options?: BindOptions): CanonicalizeResult {
  const stdout = runCli(["canonicalize", ...canonArgs(options)], text, options);
  const json = stdout.trimEnd();
  return { fields: JSON.parse(json) as CanonicalFields, json };
}

/** Canonicalize many outputs in one CLI invocation (order-preserving). */
export function bindCanonicalizeBatch(texts: string[], options?: BindOptions): CanonicalizeResult[] {
  if (texts.length === 0) return [];
  const stdin = texts.map((text) => JSON.stringify({ text })).join("\n") + "\n";
  const stdout = runCli(["canonicalize", "--jsonl", ...canonArgs(options)], stdin, options);
  const lines = stdout.trimEnd().split("\n");
  if (lines.length !== texts.length) {
    throw new FieldwiseCliError(
      `expected ${texts.length} result lines, got ${lines.length}`, 0, "");
  }
  return lines.map((json) => ({ fields: JSON.parse(json) as CanonicalFields, json }));
}

/** Raw candidate texts keyed by model id. */
export type RawCandidates = Record<string, string>;

/**
 * Canonicalize candidates and assemble one validated record via the
 * keep/override/abstain policy. Requires a trained verifier and a tuned
 * policy produced by the core CLI.
 */
export function bindSafeOverride(
  query: string,
  candidates: RawCandidates,
  verifierPath: string,
  policyPath: string,
  options?: BindOptions,
): OverrideResult {
  return withTempDir((dir) => {
    const candidatesPath = join(dir, "candidates.json");
    writeFileSync(candidatesPath, JSON.stringify(candidates), "utf-8");
    const stdout = runCli(
      [
        "run",
        "--query", query,
        "--candidates", candidatesPath,
        "--verifier", verifierPath,
        "--policy", policyPath,
        ...(options?.configPath ? ["--config", options.configPath] : []),
      ],
      undefined,
      options,
    );
    const json = stdout.trimEnd();
    const doc = JSON.parse(json) as { fields: CanonicalFields; decisions: DecisionJson[] };
    return { fields: doc.fields, decisions: doc.decisions, json };
  });
}

export interface OverrideBatchItem {
  query: string;
  candidates: RawCandidates;
}

/** Batch form of bindSafeOverride: one CLI invocation, order-preserving. */
export function bindSafeOverrideBatch(
  items: OverrideBatchItem[],
  verifierPath: string,
  policyPath: string,
  options?: BindOptions,
): OverrideResult[] {
  if (items.length === 0) return [];
  return withTempDir((dir) => {
    const batchPath = join(dir, "batch.jsonl");
    writeFileSync(batchPath, items.map((item) => JSON.stringify(item)).join("\n") + "\n", "utf-8");
    const stdout = runCli(
      [
        "run",
        "--batch", batchPath,
        "--verifier", verifierPath,
        "--policy", policyPath,
        ...(options?.configPath ? ["--config", options.configPath] : []),
      ],
      undefined,
      options,
    );
    const lines = stdout.trimEnd().split("\n");
    if (lines.length !== items.length) {
      throw new FieldwiseCliError(
        `expected ${items.length} result lines, got ${lines.length}`, 0, "");
    }
    return lines.map((json) => {
      const doc = JSON.parse(json) as { fields: CanonicalFields; decisions: DecisionJson[] };
      return { fields: doc.fields, decisions: doc.decisions, json };
    });
  });
}
