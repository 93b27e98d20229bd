/**
 * Newline-delimited JSON scoring protocol over stdio.
 *
 * hello -> ready {classes, input, gradients: false}
 * score {id, tensor: <TNSR path>} -> scores {id, probs}
 * bye -> clean exit. Request errors answer with an error line and keep
 * the session alive; ids are echoed verbatim and never reordered within
 * one request.
 */

import { readFileSync } from "node:fs";

import { Model } from "./model.js";
import { decodeTensor } from "./tnsr.js";

export const PROTOCOL_VERSION = 1;

export interface Reply {
  line: string;
  done: boolean;
}

export class Session {
  constructor(private readonly model: Model) {}

  handle(rawLine: string): Reply | null {
    const line = rawLine.trim();
    if (!line) {
      return null;
    }
    let msg: any;
    try {
      msg = JSON.parse(line);
    } catch {
      return reply({ type: "error", id: null, msg: "malformed JSON line" });
    }
    if (typeof msg !== "object" || msg === null || typeof msg.type !== "string") {
      return reply({ type: "error", id: null, msg: "message must carry a type" });
    }
    switch (msg.type) {
      case "hello":
        if (msg.version !== PROTOCOL_VERSION) {
          return reply({
            type: "error", id: null,
            msg: `unsupported protocol version ${msg.version}`,
          });
        }
        return reply({
          type: "ready",
          classes: this.model.classes,
          input: this.model.input,
          gradients: false,
        });
      case "score":
        return this.score(msg);
      case "bye":
        return { line: "", done: true };
      default:
        return reply({
          type: "error",
          id: msg.id ?? null,
          msg: `unknown message type ${msg.type}`,
        });
    }
  }

  private score(msg: any): Reply {
    const id = Number.isInteger(msg.id) ? msg.id : null;
    if (id === null) {
      return reply({ type: "error", id: null, msg: "score needs an integer id" });
    }
    if (typeof msg.tensor !== "string") {
      return reply({ type: "error", id, msg: "score needs a tensor path" });
    }
    let flat: Float32Array;
    try {
      const tensor = decodeTensor(readFileSync(msg.tensor));
      const [h, w, c] = this.model.input;
      const dims = tensor.dims;
      if (dims.length !== 3 || dims[0] !== h || dims[1] !== w || dims[2] !== c) {
        return reply({
          type: "error", id,
          msg: `input dims [${dims}] do not match model [${h},${w},${c}]`,
        });
      }
      flat = tensor.data;
    } catch (err) {
      return reply({ type: "error", id, msg: String((err as Error).message ?? err) });
    }
    try {
      return reply({ type: "scores", id, probs: this.model.score(flat) });
    } catch (err) {
      return reply({ type: "error", id, msg: String((err as Error).message ?? err) });
    }
  }
}

function reply(obj: unknown): Reply {
  return { line: JSON.stringify(obj), done: false };
}
