/**
 * Framed, typed JSON message protocol.
 *
 * Every frame is a 4-byte big-endian length followed by exactly that many
 * bytes of UTF-8 JSON encoding an object with a string "type" field.
 * Unknown extra fields are ignored for forward compatibility.  This codec
 * interoperates frame-for-frame with the Python broker and workers.
 */

export const MAX_PAYLOAD = 16 * 2 ** 20;
export const HEADER_SIZE = 4;

export const HEARTBEAT_INTERVAL_MS = 2000;
export const HEARTBEAT_MISSES_TO_EXPIRE = 3;

export class ProtocolError extends Error {}
export class OversizedMessage extends ProtocolError {}
export class Truncated extends ProtocolError {}
export class BadEncoding extends ProtocolError {}
export class UnknownType extends ProtocolError {}
export class MissingField extends ProtocolError {}

export type Message = { type: string; [key: string]: unknown };

/** Required fields per message type (beyond "type" itself). */
export const MESSAGE_TYPES: Record<string, readonly string[]> = {
  submit_task: ["task_id", "genotype", "eval_config", "sender_id"],
  task_request: ["sender_id"],
  task_assignment: ["task_id", "genotype", "eval_config", "lease_id"],
  no_task: [],
  task_result: ["task_id", "fitness", "loss", "sender_id"],
  heartbeat: ["sender_id"],
  heartbeat_ack: [],
  reconnect: [],
  register_broker: ["sender_id", "address"],
  broker_list_request: ["sender_id"],
  broker_list: ["brokers"],
  link_request: ["sender_id", "address"],
  link_accept: ["sender_id"],
  share_task: ["task_id", "genotype", "eval_config", "sender_id"],
  reclaim_task: ["task_id", "fitness", "loss", "sender_id"],
};

export function validateMessage(msg: unknown): Message {
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new BadEncoding("payload is not a JSON object");
  }
  const m = msg as Message;
  const fields = MESSAGE_TYPES[m.type];
  if (typeof m.type !== "string" || fields === undefined) {
    throw new UnknownType(`unknown message type ${JSON.stringify(m.type)}`);
  }
  for (const field of fields) {
    if (!(field in m)) {
      throw new MissingField(`${m.type} message is missing field '${field}'`);
    }
  }
  return m;
}

/** JSON with object keys sorted recursively (canonical form). */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  return (
    "{" +
    entries.map(([k, v]) => JSON.stringify(k) + ":" + canonicalJson(v)).join(",") +
    "}"
  );
}

export function encodeFrame(msg: Message): Buffer {
  validateMessage(msg);
  const payload = Buffer.from(canonicalJson(msg), "utf-8");
  if (payload.length > MAX_PAYLOAD) {
    throw new OversizedMessage(
      `payload of ${payload.length} bytes exceeds ${MAX_PAYLOAD}`,
    );
  }
  const header = Buffer.alloc(HEADER_SIZE);
  header.writeUInt32BE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

export function decodeFrame(data: Buffer): Message {
  if (data.length < HEADER_SIZE) {
    throw new Truncated(`need ${HEADER_SIZE} header bytes, have ${data.length}`);
  }
  const length = data.readUInt32BE(0);
  if (length < 1 || length > MAX_PAYLOAD) {
    throw new OversizedMessage(`declared payload length ${length} out of bounds`);
  }
  if (data.length < HEADER_SIZE + length) {
    throw new Truncated(
      `payload declares ${length} bytes, only ${data.length - HEADER_SIZE} present`,
    );
  }
  const raw = data.subarray(HEADER_SIZE, HEADER_SIZE + length);
  let obj: unknown;
  try {
    obj = JSON.parse(raw.toString("utf-8"));
  } catch (e) {
    throw new BadEncoding(`payload is not UTF-8 JSON: ${e}`);
  }
  return validateMessage(obj);
}

/** Incremental decoder: feed arbitrary byte fragments, get messages. */
export class FrameReader {
  private buf: Buffer = Buffer.alloc(0);

  feed(data: Buffer): Message[] {
    this.buf = Buffer.concat([this.buf, data]);
    const out: Message[] = [];
    for (;;) {
      if (this.buf.length < HEADER_SIZE) break;
      const length = this.buf.readUInt32BE(0);
      if (length < 1 || length > MAX_PAYLOAD) {
        throw new OversizedMessage(
          `declared payload length ${length} out of bounds`,
        );
      }
      const total = HEADER_SIZE + length;
      if (this.buf.length < total) break;
      out.push(decodeFrame(this.buf.subarray(0, total)));
      this.buf = this.buf.subarray(total);
    }
    return out;
  }
}
