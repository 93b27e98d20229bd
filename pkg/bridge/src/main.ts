#!/usr/bin/env node
/**
 * Stdio scoring bridge: exposes a model to the engine over the
 * newline-delimited JSON protocol.
 *
 * Usage: node dist/main.js --model linear:seed=7,classes=3,h=4,w=4,c=3
 *
 * --chaos <mode> perturbs responses for engine robustness testing:
 * truncate (drop half of each reply line), bad-id (shift response ids).
 */

import { createInterface } from "node:readline";

import { loadModel } from "./model.js";
import { Session } from "./protocol.js";

function parseArgs(argv: string[]): { model: string; chaos: string } {
  let model = "";
  let chaos = "";
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--model") {
      model = argv[++i] ?? "";
    } else if (argv[i] === "--chaos") {
      chaos = argv[++i] ?? "";
    } else {
      throw new Error(`unknown argument ${argv[i]}`);
    }
  }
  if (!model) {
    throw new Error("--model <spec> is required");
  }
  return { model, chaos };
}

function corrupt(line: string, chaos: string): string {
  if (chaos === "truncate") {
    return line.slice(0, Math.floor(line.length / 2));
  }
  if (chaos === "bad-id") {
    return line.replace(/"id":\s*(\d+)/, (_, id) => `"id": ${Number(id) + 7}`);
  }
  return line;
}

export function main(): void {
  const { model: spec, chaos } = parseArgs(process.argv.slice(2));
  const session = new Session(loadModel(spec));
  const lines = createInterface({ input: process.stdin, terminal: false });
  lines.on("line", (raw) => {
    const reply = session.handle(raw);
    if (reply === null) {
      return;
    }
    if (reply.done) {
      lines.close();
      process.exit(0);
    }
    process.stdout.write(corrupt(reply.line, chaos) + "\n");
  });
  lines.on("close", () => process.exit(0));
}

main();
