// Browser bootstrap: bind the session to the page, wire the command
// inputs, and rerender panels on every change.

import { AdminClient } from "./api.js";
import { renderAll } from "./render.js";
import { ConsoleSession, EventStreamFactory } from "./session.js";
import type { ConsoleEvent } from "./types.js";

const browserStream: EventStreamFactory = (url, onEvent, onError) => {
  const source = new EventSource(url);
  source.onmessage = (e) => onEvent(JSON.parse(e.data) as ConsoleEvent);
  source.onerror = () => onError();
  return { close: () => source.close() };
};

function panel(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing panel #${id}`);
  return el;
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const adminUrl =
    params.get("admin") ?? `${window.location.protocol}//${window.location.hostname}:7421`;
  const session = new ConsoleSession(new AdminClient(adminUrl), browserStream);

  const rerender = () => {
    const html = renderAll(session.vm);
    panel("banner").innerHTML = html.banner;
    panel("registry").innerHTML = html.registry;
    panel("gauges").innerHTML = html.gauges;
    panel("feed").innerHTML = html.feed;
    panel("history").innerHTML = html.history;
  };
  session.subscribe(rerender);

  const emlInput = panel("eml-input") as HTMLInputElement;
  panel("eml-form").addEventListener("submit", (e) => {
    e.preventDefault();
    const line = emlInput.value.trim();
    if (!line) return;
    emlInput.value = "";
    void session.sendEml(line).then(rerender);
  });

  const wmiService = panel("wmi-service") as HTMLInputElement;
  const wmiScript = panel("wmi-script") as HTMLTextAreaElement;
  const wmiOut = panel("wmi-result");
  panel("wmi-form").addEventListener("submit", (e) => {
    e.preventDefault();
    const serviceID = Number(wmiService.value);
    void session.sendWmi(serviceID, wmiScript.value).then((result) => {
      wmiOut.textContent = result.ack
        ? `ack true: ${result.report.applied.join("; ")}`
        : `ack false: ${result.report.failures.join("; ")}`;
      rerender();
    });
  });

  void session.connect();
}

boot();
