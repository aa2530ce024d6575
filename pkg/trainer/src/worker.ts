/**
 * Trainer worker: connects to a broker (directly or via nameserver
 * discovery), requests tasks, keeps the per-lease heartbeat alive while
 * evaluating, and returns results.  Evaluation failures become
 * error-flagged results (fitness 0), never abandoned leases.
 *
 * Serves three evaluator kinds: "surrogate" and "delay" for parity with
 * the reference workers, and "external" for real TensorFlow.js training.
 */

import * as net from "node:net";

import { parse } from "./genotype.js";
import { FrameReader, HEARTBEAT_INTERVAL_MS, Message, encodeFrame } from "./protocol.js";
import { surrogateLoss, fitnessFromLoss } from "./surrogate.js";
import { TrainOptions, trainAndScore } from "./train.js";

export const BACKOFF_INITIAL_MS = 100;
export const BACKOFF_MAX_MS = 2000;

/** Loss reported for errored evaluations; fitness is pinned to 0. */
export const ERROR_LOSS = 2 ** 63;

export interface WorkerConfig {
  workerId: string;
  broker?: string;
  nameserver?: string;
  heartbeatMs: number;
  train: Partial<TrainOptions>;
}

export interface EvalConfigWire {
  evaluator_kind?: string;
  target_key?: string;
  epochs?: number;
  delay_ms?: number;
  noise_sigma2?: number;
  mode?: string;
  reductions?: number;
  [key: string]: unknown;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Unbounded async FIFO connecting the socket reader to the task loop. */
class Channel<T> {
  private items: T[] = [];
  private waiters: ((v: T) => void)[] = [];

  put(item: T): void {
    const waiter = this.waiters.shift();
    if (waiter) waiter(item);
    else this.items.push(item);
  }

  take(): Promise<T> {
    const item = this.items.shift();
    if (item !== undefined) return Promise.resolve(item);
    return new Promise((resolve) => this.waiters.push(resolve));
  }
}

function splitAddress(address: string): { host: string; port: number } {
  const sep = address.lastIndexOf(":");
  if (sep < 0) throw new Error(`address '${address}' is not host:port`);
  return { host: address.slice(0, sep), port: Number(address.slice(sep + 1)) };
}

function connect(address: string, timeoutMs = 5000): Promise<net.Socket> {
  const { host, port } = splitAddress(address);
  return new Promise((resolve, reject) => {
    const sock = net.createConnection({ host, port });
    sock.setNoDelay(true);
    const timer = setTimeout(() => {
      sock.destroy();
      reject(new Error(`connect to ${address} timed out`));
    }, timeoutMs);
    sock.once("connect", () => {
      clearTimeout(timer);
      resolve(sock);
    });
    sock.once("error", (e) => {
      clearTimeout(timer);
      reject(e);
    });
  });
}

export async function evaluateTask(
  task: Message,
  workerId: string,
  trainOpts: Partial<TrainOptions> = {},
): Promise<Message> {
  const taskId = task.task_id as string;
  const start = Date.now();
  try {
    const genotype = parse(String(task.genotype));
    const cfg = (task.eval_config ?? {}) as EvalConfigWire;
    const kind = cfg.evaluator_kind ?? "surrogate";
    let loss: number;
    if (kind === "surrogate" || kind === "delay") {
      if (kind === "delay" && (cfg.delay_ms ?? 0) > 0) {
        await sleep(cfg.delay_ms as number);
      }
      loss = surrogateLoss(genotype, cfg.target_key ?? "5x5conv2d:64");
    } else if (kind === "external") {
      const outcome = await trainAndScore(genotype, {
        ...trainOpts,
        epochs: cfg.epochs ?? trainOpts.epochs,
        mode: (cfg.mode as TrainOptions["mode"]) ?? trainOpts.mode,
        reductions: cfg.reductions ?? trainOpts.reductions,
        noiseSigma2: cfg.noise_sigma2 ?? trainOpts.noiseSigma2,
      });
      loss = outcome.loss;
    } else {
      throw new Error(`unknown evaluator kind '${kind}'`);
    }
    return {
      type: "task_result",
      task_id: taskId,
      fitness: fitnessFromLoss(loss),
      loss,
      eval_duration_ms: Date.now() - start,
      worker_id: workerId,
      sender_id: workerId,
    };
  } catch (e) {
    const err = e instanceof Error ? `${e.constructor.name}: ${e.message}` : String(e);
    return {
      type: "task_result",
      task_id: taskId,
      fitness: 0,
      loss: ERROR_LOSS,
      error: err,
      eval_duration_ms: Date.now() - start,
      worker_id: workerId,
      sender_id: workerId,
    };
  }
}

export class Worker {
  readonly cfg: WorkerConfig;
  tasksCompleted = 0;
  private stopped = false;
  private activeSocket: net.Socket | null = null;

  constructor(cfg: WorkerConfig) {
    this.cfg = cfg;
    if (!cfg.broker === !cfg.nameserver) {
      throw new Error("exactly one of broker or nameserver must be given");
    }
  }

  stop(): void {
    this.stopped = true;
    this.activeSocket?.destroy();
  }

  private async discoverBroker(): Promise<string> {
    if (this.cfg.broker) return this.cfg.broker;
    const sock = await connect(this.cfg.nameserver as string);
    try {
      const reader = new FrameReader();
      const inbox = new Channel<Message | null>();
      sock.on("data", (d) => {
        for (const m of reader.feed(d)) inbox.put(m);
      });
      sock.on("close", () => inbox.put(null));
      sock.on("error", () => {});
      sock.write(
        encodeFrame({
          type: "broker_list_request",
          sender_id: this.cfg.workerId,
          role: "worker",
        }),
      );
      const reply = await Promise.race([inbox.take(), sleep(5000).then(() => null)]);
      const brokers = reply?.type === "broker_list" ? (reply.brokers as { address: string }[]) : [];
      if (!brokers.length) {
        throw new Error("nameserver returned no live brokers");
      }
      return brokers[0].address;
    } finally {
      sock.destroy();
    }
  }

  async run(): Promise<void> {
    let backoffMs = BACKOFF_INITIAL_MS;
    while (!this.stopped) {
      try {
        const address = await this.discoverBroker();
        await this.serveBroker(address);
        backoffMs = BACKOFF_INITIAL_MS;
      } catch (e) {
        if (this.stopped) break;
        console.error(`worker ${this.cfg.workerId}: broker unavailable (${e}); retrying`);
        await sleep(backoffMs);
        backoffMs = Math.min(backoffMs * 2, BACKOFF_MAX_MS);
      }
    }
  }

  private async serveBroker(address: string): Promise<void> {
    const sock = await connect(address);
    this.activeSocket = sock;
    const reader = new FrameReader();
    const inbox = new Channel<Message | null>();
    const hbInbox = new Channel<Message>();
    sock.on("data", (d) => {
      for (const m of reader.feed(d)) {
        if (m.type === "heartbeat_ack" || m.type === "reconnect") hbInbox.put(m);
        else inbox.put(m);
      }
    });
    sock.on("close", () => inbox.put(null));
    sock.on("error", () => {});

    let backoffMs = BACKOFF_INITIAL_MS;
    try {
      while (!this.stopped) {
        sock.write(encodeFrame({ type: "task_request", sender_id: this.cfg.workerId }));
        const reply = await inbox.take();
        if (reply === null) throw new Error("connection to broker lost");
        if (reply.type === "no_task") {
          await sleep(backoffMs);
          backoffMs = Math.min(backoffMs * 2, BACKOFF_MAX_MS);
          continue;
        }
        if (reply.type !== "task_assignment") {
          console.error(`worker ${this.cfg.workerId}: unexpected reply ${reply.type}`);
          continue;
        }
        backoffMs = BACKOFF_INITIAL_MS;
        await this.runTask(reply, sock);
        this.tasksCompleted += 1;
      }
    } finally {
      this.activeSocket = null;
      sock.destroy();
    }
  }

  private async runTask(task: Message, sock: net.Socket): Promise<void> {
    const leaseId = task.lease_id as string;
    // Heartbeats run alongside evaluation so long training never expires
    // the lease; model.fit yields to the event loop between batches.
    const timer = setInterval(() => {
      if (sock.destroyed) return;
      sock.write(
        encodeFrame({
          type: "heartbeat",
          sender_id: this.cfg.workerId,
          lease_id: leaseId,
        }),
      );
    }, this.cfg.heartbeatMs);
    try {
      const result = await evaluateTask(task, this.cfg.workerId, this.cfg.train);
      if (!sock.destroyed) sock.write(encodeFrame(result));
    } finally {
      clearInterval(timer);
    }
  }
}

export function defaultWorkerId(): string {
  return `trainer-${Math.random().toString(16).slice(2, 10)}`;
}

export { HEARTBEAT_INTERVAL_MS };
