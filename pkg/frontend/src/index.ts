/**
 * Node bindings for the lmpipe tokenizer and evaluation CLI.
 *
 * Everything goes through the pipeline's public command-line interface and
 * file formats; no pipeline internals are reimplemented here.  A
 * TokenizerHandle keeps two long-lived `encode` / `decode` subprocesses
 * alive so repeated calls cost one line round trip instead of one
 * interpreter start.
 */
import { execFile, execFileSync, spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { promisify } from "node:util";

const execFileAsync = promisify(execFile);

/** Version of this wrapper package. */
export const VERSION = "0.1.0";

const NL = Buffer.from("\n");

export interface PipelineOptions {
  /** Interpreter with lmpipe installed; defaults to $LMPIPE_PYTHON or python3. */
  python?: string;
}

function pythonOf(opts?: PipelineOptions): string {
  return opts?.python ?? process.env.LMPIPE_PYTHON ?? "python3";
}

/** Operational failure inside the pipeline; message is the CLI's stderr. */
export class PipelineError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PipelineError";
  }
}

/** FIFO line transport over a long-lived child process.  The CLI answers
 * every stdin line with exactly one stdout line (flushed), so responses
 * can be matched to requests by order alone. */
class LineChannel {
  private child: ChildProcessWithoutNullStreams;
  private buffer: Buffer = Buffer.alloc(0);
  private pending: Array<{
    resolve: (line: Buffer) => void;
    reject: (err: Error) => void;
  }> = [];
  private stderrTail = "";
  private dead = false;

  constructor(python: string, args: string[]) {
    this.child = spawn(python, args, { stdio: ["pipe", "pipe", "pipe"] });
    this.child.stdin.on("error", () => {
      /* EPIPE after child death; the close handler rejects pending */
    });
    this.child.stdout.on("data", (chunk: Buffer) => this.onData(chunk));
    this.child.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString("utf8")).slice(-8192);
    });
    this.child.on("error", (err) => this.fail(new PipelineError(err.message)));
    this.child.on("close", () =>
      this.fail(new PipelineError(this.stderrTail.trim() || "pipeline process exited")),
    );
  }

  private fail(err: Error): void {
    this.dead = true;
    for (const req of this.pending.splice(0)) req.reject(err);
  }

  private onData(chunk: Buffer): void {
    this.buffer = this.buffer.length ? Buffer.concat([this.buffer, chunk]) : chunk;
    let nl: number;
    while ((nl = this.buffer.indexOf(0x0a)) >= 0) {
      const line = Buffer.from(this.buffer.subarray(0, nl));
      this.buffer = this.buffer.subarray(nl + 1);
      const req = this.pending.shift();
      if (req) req.resolve(line);
    }
  }

  request(line: Buffer): Promise<Buffer> {
    if (this.dead) {
      return Promise.reject(new PipelineError("tokenizer handle is closed"));
    }
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.child.stdin.write(Buffer.concat([line, NL]));
    });
  }

  close(): void {
    if (this.dead) return;
    this.fail(new PipelineError("tokenizer handle is closed"));
    this.child.stdin.end();
    this.child.kill();
  }
}

export interface TokenizerOptions extends PipelineOptions {
  /** Decode special tokens to their strings instead of dropping them. */
  renderSpecial?: boolean;
}

/**
 * Handle to a loaded vocabulary directory (vocab.json + merges.txt).
 *
 * Immutable once open and safe for concurrent callers: requests are
 * pipelined in call order over the line transport.  Call close() to
 * release the subprocesses; the handle is unusable afterwards.
 *
 * One transport limitation: the protocol is line-oriented (the pipeline's
 * document unit), so encode() rejects text containing a newline and
 * decode() rejects ids whose token renders a raw newline byte.
 */
export class TokenizerHandle {
  readonly vocabSize: number;
  private encoder: LineChannel;
  private decoder: LineChannel;
  private newlineIds: Set<number>;

  private constructor(vocabDir: string, opts: TokenizerOptions) {
    const python = pythonOf(opts);
    const table: Record<string, number> = JSON.parse(
      readFileSync(join(vocabDir, "vocab.json"), "utf8"),
    );
    this.vocabSize = Object.keys(table).length;
    // the vocab file renders byte 0x0A as U+010A; any token containing it
    // would decode to output the line framing cannot carry
    this.newlineIds = new Set(
      Object.entries(table)
        .filter(([token]) => token.includes("Ċ"))
        .map(([, id]) => id),
    );
    const decodeArgs = ["-m", "lmpipe", "decode", vocabDir];
    if (opts.renderSpecial) decodeArgs.push("--render-special");
    this.encoder = new LineChannel(python, ["-m", "lmpipe", "encode", vocabDir, "--ids"]);
    this.decoder = new LineChannel(python, decodeArgs);
  }

  /** @internal probe both channels so a bad vocabulary fails at load time */
  private async ready(): Promise<this> {
    await this.encoder.request(Buffer.alloc(0));
    await this.decoder.request(Buffer.alloc(0));
    return this;
  }

  static async open(vocabDir: string, opts: TokenizerOptions = {}): Promise<TokenizerHandle> {
    return new TokenizerHandle(vocabDir, opts).ready();
  }

  /** Token ids for one document (text must not span lines). */
  async encode(text: string): Promise<number[]> {
    if (text.includes("\n")) {
      throw new TypeError("text must not contain newlines; encode one document per call");
    }
    if (text.endsWith("\r")) {
      throw new TypeError("text must not end with a carriage return");
    }
    const reply = await this.encoder.request(Buffer.from(text, "utf8"));
    const body = reply.toString("ascii").trim();
    return body === "" ? [] : body.split(" ").map(Number);
  }

  /** Text for a list of token ids; inverse of encode. */
  async decode(ids: readonly number[]): Promise<string> {
    ids.forEach((id, position) => {
      if (!Number.isInteger(id) || id < 0 || id >= this.vocabSize) {
        throw new RangeError(`token id ${id} at position ${position} out of range`);
      }
      if (this.newlineIds.has(id)) {
        throw new RangeError(
          `token id ${id} at position ${position} decodes to a newline, ` +
            "which the line transport cannot carry",
        );
      }
    });
    const reply = await this.decoder.request(Buffer.from(ids.join(" "), "ascii"));
    return reply.toString("utf8");
  }

  close(): void {
    this.encoder.close();
    this.decoder.close();
  }
}

/** Open a vocabulary directory written by `lmpipe train-bpe`. */
export function loadTokenizer(
  vocabDir: string,
  opts: TokenizerOptions = {},
): Promise<TokenizerHandle> {
  return TokenizerHandle.open(vocabDir, opts);
}

export interface NerScore {
  precision: number;
  recall: number;
  f1: number;
  tp: number;
  fp: number;
  fn: number;
  /** Per-level breakdown, present in germeval mode with perLevel. */
  levels?: Record<string, NerScore>;
}

export type NerMode = "conll" | "germeval";

export interface EvalNerOptions extends PipelineOptions {
  /** Also report outer/inner level scores (germeval mode only). */
  perLevel?: boolean;
}

/** Span F1 between a gold and a predicted tag file. */
export async function evalNer(
  goldPath: string,
  predPath: string,
  mode: NerMode = "conll",
  opts: EvalNerOptions = {},
): Promise<NerScore> {
  const args = ["-m", "lmpipe", "eval-ner", "--json", "--gold", goldPath, "--pred", predPath];
  if (mode === "germeval") args.push("--germeval");
  if (opts.perLevel) args.push("--per-level");
  try {
    const { stdout } = await execFileAsync(pythonOf(opts), args);
    return JSON.parse(stdout) as NerScore;
  } catch (err) {
    const stderr = (err as { stderr?: string }).stderr;
    throw new PipelineError(stderr?.trim() || (err as Error).message);
  }
}

/** Version string of the underlying pipeline, e.g. "lmpipe 0.1.0". */
export function coreVersion(opts: PipelineOptions = {}): string {
  try {
    return execFileSync(pythonOf(opts), ["-m", "lmpipe", "--version"], {
      encoding: "utf8",
    }).trim();
  } catch (err) {
    const stderr = (err as { stderr?: string }).stderr;
    throw new PipelineError(stderr?.toString().trim() || (err as Error).message);
  }
}
