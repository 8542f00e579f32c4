/**
 * Differential tests: every wrapper result must equal what the CLI itself
 * produces for the same input.  The CLI is the reference implementation;
 * the wrapper only moves bytes.
 */
import { execFileSync } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  PipelineError,
  TokenizerHandle,
  VERSION,
  coreVersion,
  evalNer,
  loadTokenizer,
} from "../src/index.js";

const PY = process.env.LMPIPE_PYTHON ?? "python3";

// deterministic PRNG so failures reproduce
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const FRAGMENTS = [
  "der", "die", "das", "und", "straße", "grüße", "über", "schön",
  "wasser", "berg", "zeit", "arbeit", "müller", "weiß", "bäcker",
  "ökonomie", "€100", "42", "...", "(klammer)", "e-mail", "größte",
];

function randomText(rand: () => number): string {
  const parts: string[] = [];
  const n = Math.floor(rand() * 12);
  for (let i = 0; i < n; i++) {
    const r = rand();
    if (r < 0.7) {
      parts.push(FRAGMENTS[Math.floor(rand() * FRAGMENTS.length)]!);
    } else if (r < 0.85) {
      // arbitrary BMP letters, multi-byte UTF-8
      parts.push(String.fromCodePoint(0xa1 + Math.floor(rand() * 0x2f00)));
    } else {
      parts.push("🤖".repeat(1 + Math.floor(rand() * 2)));
    }
  }
  return parts.join(rand() < 0.2 ? "" : " ");
}

function cliLines(args: string[], input: string): string[] {
  const out = execFileSync(PY, ["-m", "lmpipe", ...args], {
    input,
    maxBuffer: 64 * 1024 * 1024,
  }).toString("utf8");
  const lines = out.split("\n");
  lines.pop(); // every response line is newline-terminated
  return lines;
}

let dir: string;
let vocabDir: string;
let handle: TokenizerHandle;

beforeAll(async () => {
  dir = mkdtempSync(join(tmpdir(), "lmpipe-bindings-"));
  vocabDir = join(dir, "vocab");
  const rand = mulberry32(7);
  const corpus = Array.from({ length: 500 }, () => randomText(rand) || "leer").join("\n") + "\n";
  writeFileSync(join(dir, "corpus.txt"), corpus);
  execFileSync(PY, [
    "-m", "lmpipe", "train-bpe", join(dir, "corpus.txt"),
    "--vocab-size", "500", "--out", vocabDir,
  ]);
  handle = await loadTokenizer(vocabDir);
});

afterAll(() => {
  handle?.close();
  rmSync(dir, { recursive: true, force: true });
});

describe("tokenizer handle", () => {
  it("round-trips text through encode and decode", async () => {
    const ids = await handle.encode("Grüße");
    expect(ids.length).toBeGreaterThan(0);
    expect(await handle.decode(ids)).toBe("Grüße");
  });

  it("matches the CLI on 1,000 differential cases", async () => {
    const rand = mulberry32(1234);
    const texts = Array.from({ length: 1000 }, () => randomText(rand));

    const viaHandle = await Promise.all(texts.map((t) => handle.encode(t)));

    const refLines = cliLines(["encode", vocabDir, "--ids"], texts.join("\n") + "\n");
    expect(refLines).toHaveLength(1000);
    const viaCli = refLines.map((line) =>
      line === "" ? [] : line.split(" ").map(Number),
    );
    expect(viaHandle).toEqual(viaCli);

    const decoded = await Promise.all(viaHandle.map((ids) => handle.decode(ids)));
    expect(decoded).toEqual(texts); // lossless round trip

    const idLines = viaCli.map((ids) => ids.join(" ")).join("\n") + "\n";
    const refDecoded = cliLines(["decode", vocabDir], idLines);
    expect(decoded).toEqual(refDecoded);
  });

  it("handles empty input", async () => {
    expect(await handle.encode("")).toEqual([]);
    expect(await handle.decode([])).toBe("");
  });

  it("rejects input the line transport cannot carry", async () => {
    await expect(handle.encode("zwei\nzeilen")).rejects.toThrow(/newline/);
    await expect(handle.decode([handle.vocabSize])).rejects.toThrow(/out of range/);
    await expect(handle.decode([-1])).rejects.toThrow(/out of range/);
  });

  it("fails loudly on a missing vocabulary", async () => {
    await expect(loadTokenizer(join(dir, "nope"))).rejects.toThrow();
  });

  it("rejects use after close", async () => {
    const second = await loadTokenizer(vocabDir);
    expect(await second.encode("noch da")).toEqual(await handle.encode("noch da"));
    second.close();
    await expect(second.encode("weg")).rejects.toThrow(/closed/);
  });
});

describe("evalNer", () => {
  it("reproduces the span-F1 hand case", async () => {
    const gold = join(dir, "gold.conll");
    const pred = join(dir, "pred.conll");
    writeFileSync(gold, "Anna B-PER\nMeier I-PER\nbesucht O\nBerlin B-LOC\nheute O\n");
    writeFileSync(pred, "Anna B-PER\nMeier I-PER\nbesucht O\nBerlin O\nheute O\n");
    const score = await evalNer(gold, pred);
    expect(score.precision).toBe(1.0);
    expect(score.recall).toBe(0.5);
    expect(score.f1).toBeCloseTo(2 / 3, 12);
    expect([score.tp, score.fp, score.fn]).toEqual([1, 0, 1]);
  });

  it("scores nested annotations per level", async () => {
    const gold = join(dir, "gold.tsv");
    const pred = join(dir, "pred.tsv");
    writeFileSync(gold, "1\tAnna\tB-PER\tO\n");
    writeFileSync(pred, "1\tAnna\tB-PER\tB-LOC\n");
    const score = await evalNer(gold, pred, "germeval", { perLevel: true });
    expect(score.precision).toBe(0.5);
    expect(score.recall).toBe(1.0);
    expect(Object.keys(score.levels ?? {}).sort()).toEqual(["inner", "outer"]);
    expect(score.levels?.outer?.f1).toBe(1.0);
  });

  it("surfaces CLI error text", async () => {
    await expect(evalNer(join(dir, "missing.conll"), join(dir, "missing.conll"))).rejects.toThrow(
      PipelineError,
    );
    await expect(
      evalNer(join(dir, "missing.conll"), join(dir, "missing.conll")),
    ).rejects.toThrow(/eval-ner: error/);
  });
});

describe("versions", () => {
  it("embeds a wrapper version and queries the core one", () => {
    expect(VERSION).toMatch(/^\d+\.\d+\.\d+$/);
    expect(coreVersion()).toMatch(/^lmpipe \d+\.\d+\.\d+$/);
  });
});
