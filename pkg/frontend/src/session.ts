// Live session: snapshot hydration on connect, a pushed event stream for
// deltas, re-snapshot after any write. The stream and timer are injected
// so the whole flow runs under test without a browser.

import { AdminClient } from "./api.js";
import { ConsoleViewModel } from "./model.js";
import type { ConsoleEvent, EmlResponse, WmiResponse } from "./types.js";

export interface EventStreamHandle {
  close(): void;
}

export type EventStreamFactory = (
  url: string,
  onEvent: (event: ConsoleEvent) => void,
  onError: () => void,
) => EventStreamHandle;

export type Scheduler = (fn: () => void | Promise<void>, delayMs: number) => void;

export class ConsoleSession {
  readonly vm = new ConsoleViewModel();
  private stream: EventStreamHandle | null = null;
  private onChange: () => void = () => {};

  constructor(
    private client: AdminClient,
    private openStream: EventStreamFactory,
    private schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
  ) {}

  subscribe(onChange: () => void): void {
    this.onChange = onChange;
  }

  async connect(): Promise<void> {
    try {
      const [registry, health, metrics] = await Promise.all([
        this.client.getRegistry(),
        this.client.getHealth(),
        this.client.getMetrics(),
      ]);
      this.vm.hydrate(registry, health, metrics);
      this.stream?.close();
      this.stream = this.openStream(
        this.client.eventsUrl(this.vm.lastEventSeq + 1),
        (event) => {
          this.vm.applyEvent(event);
          this.onChange();
        },
        () => this.handleDisconnect(),
      );
    } catch {
      this.handleDisconnect();
    }
    this.onChange();
  }

  private handleDisconnect(): void {
    this.stream?.close();
    this.stream = null;
    const delay = this.vm.markDisconnected();
    this.onChange();
    this.schedule(() => this.connect(), delay);
  }

  async sendEml(line: string): Promise<EmlResponse> {
    const result = await this.client.postEml(line);
    this.vm.recordEml(line, result);
    await this.refreshSnapshots();
    return result;
  }

  async sendWmi(serviceID: number, script: string): Promise<WmiResponse> {
    if (!script.trim()) {
      // client-side validation: an empty script never reaches the wire
      const result: WmiResponse = {
        ack: false,
        report: { applied: [], reads: [], failures: ["script is empty"] },
      };
      this.onChange();
      return result;
    }
    const result = await this.client.postWmi(serviceID, script);
    await this.refreshSnapshots();
    return result;
  }

  async refreshSnapshots(): Promise<void> {
    try {
      const [registry, health, metrics] = await Promise.all([
        this.client.getRegistry(),
        this.client.getHealth(),
        this.client.getMetrics(),
      ]);
      this.vm.hydrate(registry, health, metrics);
    } catch {
      this.handleDisconnect();
      return;
    }
    this.onChange();
  }

  close(): void {
    this.stream?.close();
    this.stream = null;
  }
}
