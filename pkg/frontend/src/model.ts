// Console view model: everything the panels render, rebuilt at will from
// API snapshots (refresh-safe) and advanced by pushed events in between.

import type {
  ConsoleEvent,
  EmlHistoryEntry,
  EmlResponse,
  HealthRow,
  Metrics,
  ServiceRow,
} from "./types.js";

const FEED_LIMIT = 200;

export class ConsoleViewModel {
  connected = false;
  retryDelayMs = 1000;
  registry: ServiceRow[] = [];
  health: HealthRow[] = [];
  metrics: Metrics | null = null;
  feed: ConsoleEvent[] = [];
  history: EmlHistoryEntry[] = [];
  lastEventSeq = -1;

  hydrate(registry: ServiceRow[], health: HealthRow[], metrics: Metrics): void {
    this.registry = [...registry].sort((a, b) => a.serviceID - b.serviceID);
    this.health = health;
    this.metrics = metrics;
    this.connected = true;
    this.retryDelayMs = 1000;
  }

  markDisconnected(): number {
    this.connected = false;
    const delay = this.retryDelayMs;
    this.retryDelayMs = Math.min(this.retryDelayMs * 2, 30_000);
    return delay;
  }

  healthOf(serviceID: number): HealthRow | undefined {
    return this.health.find((h) => h.serviceID === serviceID);
  }

  applyEvent(event: ConsoleEvent): void {
    // events arrive in server order; drop anything already seen after a
    // re-snapshot reset the cursor
    if (event.seq <= this.lastEventSeq) return;
    this.lastEventSeq = event.seq;
    this.feed.push(event);
    if (this.feed.length > FEED_LIMIT) this.feed.splice(0, this.feed.length - FEED_LIMIT);
  }

  recordEml(line: string, result: EmlResponse): void {
    this.history.push({ line, result });
  }
}
