// Pure HTML-string renderers. No DOM access here, so every panel is unit
// testable and the page is reconstructible from the view model alone.

import type { ConsoleViewModel } from "./model.js";
import type { ConsoleEvent, HostGauge } from "./types.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBanner(vm: ConsoleViewModel): string {
  if (vm.connected) {
    return `<div class="banner ok">connected</div>`;
  }
  return `<div class="banner down">disconnected — retrying in ${Math.round(vm.retryDelayMs / 1000)}s</div>`;
}

export function renderRegistryTable(vm: ConsoleViewModel): string {
  const rows = vm.registry
    .map((r) => {
      const health = vm.healthOf(r.serviceID);
      const badge = health ? health.state : "—";
      const mode = r.online ? "online" : "offline";
      return (
        `<tr data-service="${r.serviceID}">` +
        `<td>${r.serviceID}</td>` +
        `<td>${escapeHtml(r.protocol)}</td>` +
        `<td>${escapeHtml(r.serviceIP)}:${r.port}</td>` +
        `<td>${escapeHtml(r.functions.join(", "))}</td>` +
        `<td class="${mode}">${mode}</td>` +
        `<td><span class="badge ${badge.toLowerCase()}">${badge}</span></td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<table class="registry"><thead><tr>` +
    `<th>ID</th><th>protocol</th><th>endpoint</th><th>functions</th><th>mode</th><th>health</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

function gaugeBar(label: string, pair: [number, number]): string {
  const [assigned, capacity] = pair;
  const pct = capacity > 0 ? Math.round((assigned / capacity) * 100) : 0;
  return (
    `<div class="gauge" data-gauge="${label}">` +
    `<span class="label">${label}</span>` +
    `<span class="bar"><span class="fill" style="width:${pct}%"></span></span>` +
    `<span class="value">${assigned}/${capacity}</span>` +
    `</div>`
  );
}

export function renderGauges(vm: ConsoleViewModel): string {
  if (!vm.metrics) return `<div class="gauges empty">no metrics yet</div>`;
  const hosts = vm.metrics.resources.hosts;
  const blocks = Object.entries(hosts)
    .map(([hostId, g]: [string, HostGauge]) => {
      return (
        `<div class="host" data-host="${escapeHtml(hostId)}">` +
        `<h3>${escapeHtml(hostId)} <em>${escapeHtml(g.powerMode)}</em></h3>` +
        gaugeBar("cpu", g.cpu) +
        gaugeBar("memory", g.memory) +
        gaugeBar("disk", g.disk) +
        gaugeBar("bandwidth", g.bandwidth) +
        `</div>`
      );
    })
    .join("");
  return `<div class="gauges">${blocks}</div>`;
}

function describeEvent(e: ConsoleEvent): string {
  switch (e.type) {
    case "delivery":
      return `delivery ${e["finalState"]} (${e["messageID"]})`;
    case "health":
      return `health ${e["serviceID"]}: ${e["fromState"]} -> ${e["toState"]}`;
    case "directive":
      return `directive ${e["line"]}`;
    case "integrated":
      return `integrated ${e["serviceID"]} at ${e["ip"]}:${e["port"]}`;
    default: {
      const rest = Object.entries(e)
        .filter(([k]) => !["seq", "t", "type"].includes(k))
        .map(([k, v]) => `${k}=${v}`)
        .join(" ");
      return `${e.type} ${rest}`.trim();
    }
  }
}

export function renderEventFeed(vm: ConsoleViewModel): string {
  const items = vm.feed
    .map((e) => `<li data-seq="${e.seq}"><time>${e.t}</time> ${escapeHtml(describeEvent(e))}</li>`)
    .join("");
  return `<ul class="feed">${items}</ul>`;
}

export function renderHistory(vm: ConsoleViewModel): string {
  const items = vm.history
    .map((h) => {
      const cls = h.result.ok ? "ok" : "err";
      const tail = h.result.ok ? h.result.output : `${h.result.error}: ${h.result.output}`;
      return `<li class="${cls}"><code>${escapeHtml(h.line)}</code> ${escapeHtml(tail)}</li>`;
    })
    .join("");
  return `<ul class="history">${items}</ul>`;
}

export function renderAll(vm: ConsoleViewModel): Record<string, string> {
  return {
    banner: renderBanner(vm),
    registry: renderRegistryTable(vm),
    gauges: renderGauges(vm),
    feed: renderEventFeed(vm),
    history: renderHistory(vm),
  };
}
