// App shell: health check, tab switching, shared error banner.

import { GatewayClient } from "./api.js";
import { TuningView } from "./tuning.js";
import { InteractiveView } from "./interactive.js";

function mustFind<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const client = new GatewayClient("");

const banner = mustFind<HTMLElement>("error-banner");

function showError(msg: string, retry?: () => void): void {
  banner.innerHTML = "";
  banner.append(document.createTextNode(msg));
  if (retry) {
    const btn = document.createElement("button");
    btn.textContent = "retry";
    btn.addEventListener("click", () => {
      clearError();
      retry();
    });
    banner.append(btn);
  }
  banner.hidden = false;
}

function clearError(): void {
  banner.hidden = true;
  banner.innerHTML = "";
}

const deps = { client, showError, clearError };
const tuning = new TuningView(mustFind("tuning-root"), deps);
const interactive = new InteractiveView(mustFind("interactive-root"), deps);

const tabs: Array<[string, string]> = [
  ["tab-tuning", "tuning-root"],
  ["tab-interactive", "interactive-root"],
];

function activate(tabId: string): void {
  const current = tabs.find(([t]) => mustFind(t).classList.contains("active"));
  if (current && current[0] === "tab-tuning" && tabId !== "tab-tuning" && tuning.hasUnsavedChanges()) {
    if (!window.confirm("Leave the tuning view with unsaved changes?")) return;
  }
  for (const [tab, panel] of tabs) {
    const active = tab === tabId;
    mustFind(tab).classList.toggle("active", active);
    mustFind(panel).hidden = !active;
  }
}

for (const [tab] of tabs) {
  mustFind(tab).addEventListener("click", () => activate(tab));
}

window.addEventListener("beforeunload", (ev) => {
  if (tuning.hasUnsavedChanges()) ev.preventDefault();
});

async function boot(): Promise<void> {
  try {
    await client.health();
    clearError();
    interactive.setSlidersEnabled(true);
    await tuning.load();
  } catch {
    // gateway unreachable: disable interaction, offer retry
    interactive.setSlidersEnabled(false);
    showError("gateway unreachable", () => void boot());
  }
}

activate("tab-tuning");
void boot();
