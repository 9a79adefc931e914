// Thin client over the admin HTTP API. All console writes in the entire
// app go through postEml/postWmi here; everything else is GET.

import type { EmlResponse, HealthRow, Metrics, ServiceRow, WmiResponse } from "./types.js";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class AdminClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path);
    if (!resp.ok) throw new Error(`GET ${path} -> ${resp.status}`);
    return (await resp.json()) as T;
  }

  async getRegistry(): Promise<ServiceRow[]> {
    const doc = await this.getJson<{ services: ServiceRow[] }>("/registry");
    return doc.services;
  }

  async getHealth(): Promise<HealthRow[]> {
    const doc = await this.getJson<{ services: HealthRow[] }>("/health");
    return doc.services;
  }

  async getMetrics(): Promise<Metrics> {
    return this.getJson<Metrics>("/metrics");
  }

  async postEml(line: string): Promise<EmlResponse> {
    const resp = await this.fetchFn(this.baseUrl + "/eml", {
      method: "POST",
      headers: { "Content-Type": "text/plain" },
      body: line,
    });
    if (!resp.ok) throw new Error(`POST /eml -> ${resp.status}`);
    return (await resp.json()) as EmlResponse;
  }

  async postWmi(serviceID: number, script: string): Promise<WmiResponse> {
    const resp = await this.fetchFn(this.baseUrl + "/wmi", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ serviceID, script }),
    });
    if (!resp.ok) throw new Error(`POST /wmi -> ${resp.status}`);
    return (await resp.json()) as WmiResponse;
  }

  eventsUrl(sinceSeq: number): string {
    return `${this.baseUrl}/events?since=${sinceSeq}`;
  }
}
