// Shapes of the admin API payloads the console consumes.

export interface ServiceRow {
  serviceID: number;
  protocol: string;
  serviceIP: string;
  port: number;
  registeredAt: number;
  lastHeartbeat: number;
  online: boolean;
  functions: string[];
}

export interface HealthRow {
  serviceID: number;
  state: "Good" | "Vulnerable" | "Fault" | "Recovery";
  since: number;
}

export interface HostGauge {
  cpu: [number, number];
  memory: [number, number];
  disk: [number, number];
  bandwidth: [number, number];
  powerMode: string;
}

export interface Metrics {
  bus: Record<string, number>;
  registry: number;
  audit: { total: number; byOutcome: Record<string, number>; byFunction: Record<string, number> };
  resources: {
    hosts: Record<string, HostGauge>;
    allocations: Record<string, { host: string; cpu: number; memory: number; disk: number; bandwidth: number }>;
  };
}

export interface EmlResponse {
  ok: boolean;
  output: string;
  effect: Record<string, unknown>;
  error: string | null;
}

export interface WmiReport {
  applied: string[];
  reads: [string, number | string][];
  failures: string[];
}

export interface WmiResponse {
  ack: boolean;
  report: WmiReport;
}

export interface ConsoleEvent {
  seq: number;
  t: number;
  type: string;
  [key: string]: unknown;
}

export interface EmlHistoryEntry {
  line: string;
  result: EmlResponse;
}
