// Cluster tuning view: browse cluster representatives, drag coefficient
// sliders, compare before/after server-rendered previews, save per cluster.

import { GatewayClient, ClusterSummary, GatewayError } from "./api.js";
import {
  Coefficients,
  clampCoefficients,
  coefficientSliders,
  defaultCoefficients,
} from "./schema.js";
import { PreviewScheduler } from "./debounce.js";

export interface TuningSession {
  selectedCluster: number | null;
  working: Coefficients;
  dirty: boolean;
  lastPreviewUrl: string | null;
}

export function newTuningSession(): TuningSession {
  return {
    selectedCluster: null,
    working: defaultCoefficients(),
    dirty: false,
    lastPreviewUrl: null,
  };
}

interface TuningDeps {
  client: GatewayClient;
  showError: (msg: string, retry?: () => void) => void;
  clearError: () => void;
}

export class TuningView {
  session: TuningSession;
  private deps: TuningDeps;
  private root: HTMLElement;
  private clusterBar!: HTMLElement;
  private sliderBox!: HTMLElement;
  private beforeImg!: HTMLImageElement;
  private afterImg!: HTMLImageElement;
  private saveBtn!: HTMLButtonElement;
  private scheduler: PreviewScheduler<Coefficients, Blob>;

  constructor(root: HTMLElement, deps: TuningDeps) {
    this.root = root;
    this.deps = deps;
    this.session = newTuningSession();
    this.scheduler = new PreviewScheduler(
      (coeffs, signal) => {
        const id = this.session.selectedCluster;
        if (id === null) return Promise.reject(new Error("no cluster selected"));
        return deps.client.preview(id, coeffs, signal);
      },
      {
        onResult: (blob) => this.showPreview(blob),
        onError: (err) => this.reportError(err, () => this.schedulePreview(true)),
      },
    );
    this.buildSkeleton();
  }

  private buildSkeleton(): void {
    this.root.innerHTML = "";
    this.clusterBar = el("div", "cluster-bar");
    this.sliderBox = el("div", "slider-box");
    const split = el("div", "split-view");
    const beforePane = el("figure", "pane");
    this.beforeImg = document.createElement("img");
    this.beforeImg.alt = "representative";
    beforePane.append(this.beforeImg, caption("before"));
    const afterPane = el("figure", "pane");
    this.afterImg = document.createElement("img");
    this.afterImg.alt = "preview";
    afterPane.append(this.afterImg, caption("after"));
    split.append(beforePane, afterPane);
    this.saveBtn = document.createElement("button");
    this.saveBtn.textContent = "Save";
    this.saveBtn.disabled = true;
    this.saveBtn.addEventListener("click", () => void this.save());
    this.root.append(this.clusterBar, split, this.sliderBox, this.saveBtn);
  }

  async load(): Promise<void> {
    try {
      const clusters = await this.deps.client.listClusters();
      this.renderClusterBar(clusters);
      const first = clusters.find((c) => c.size > 0);
      if (first) await this.selectCluster(first.id);
    } catch (err) {
      this.reportError(err, () => void this.load());
    }
  }

  hasUnsavedChanges(): boolean {
    return this.session.dirty;
  }

  private renderClusterBar(clusters: ClusterSummary[]): void {
    this.clusterBar.innerHTML = "";
    for (const c of clusters) {
      const btn = document.createElement("button");
      btn.className = "cluster-thumb";
      if (c.representative) {
        const img = document.createElement("img");
        img.src = c.representative;
        img.alt = `cluster ${c.id}`;
        btn.append(img);
      }
      btn.append(document.createTextNode(`#${c.id} (${c.size})`));
      btn.disabled = c.size === 0;
      btn.addEventListener("click", () => void this.selectCluster(c.id));
      this.clusterBar.append(btn);
    }
  }

  async selectCluster(id: number): Promise<void> {
    if (this.session.dirty && this.session.selectedCluster !== null && id !== this.session.selectedCluster) {
      const leave = window.confirm("Discard unsaved coefficient changes?");
      if (!leave) return;
    }
    this.session.selectedCluster = id;
    this.session.dirty = false;
    this.beforeImg.src = this.deps.client.representativeUrl(id);
    // the working copy starts from what the server has saved; the preview
    // without overrides reflects exactly that
    try {
      const saved = await fetch(this.deps.client.previewUrl(id));
      if (!saved.ok) throw new GatewayError(saved.status, "preview failed");
      this.showPreview(await saved.blob());
    } catch (err) {
      this.reportError(err, () => void this.selectCluster(id));
    }
    this.session.working = defaultCoefficients();
    this.renderSliders();
    this.saveBtn.disabled = false;
  }

  private renderSliders(): void {
    this.sliderBox.innerHTML = "";
    for (const spec of coefficientSliders()) {
      const row = el("label", "slider-row");
      const name = el("span", "slider-label");
      name.textContent = spec.label;
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(spec.min);
      input.max = String(spec.max);
      input.step = String(spec.step);
      input.value = String(spec.get(this.session.working));
      const value = el("span", "slider-value");
      value.textContent = input.value;
      input.addEventListener("input", () => {
        spec.set(this.session.working, Number(input.value));
        this.session.working = clampCoefficients(this.session.working);
        this.session.dirty = true;
        value.textContent = String(spec.get(this.session.working));
        this.schedulePreview(false);
      });
      input.addEventListener("change", () => this.schedulePreview(true));
      row.append(name, input, value);
      this.sliderBox.append(row);
    }
  }

  private schedulePreview(immediate: boolean): void {
    const coeffs = clampCoefficients(this.session.working);
    if (immediate) this.scheduler.flush(coeffs);
    else this.scheduler.request(coeffs);
  }

  private showPreview(blob: Blob): void {
    this.deps.clearError();
    if (this.session.lastPreviewUrl) URL.revokeObjectURL(this.session.lastPreviewUrl);
    const url = URL.createObjectURL(blob);
    this.session.lastPreviewUrl = url;
    this.afterImg.src = url;
  }

  private async save(): Promise<void> {
    const id = this.session.selectedCluster;
    if (id === null) return;
    try {
      const saved = await this.deps.client.saveCoefficients(id, clampCoefficients(this.session.working));
      this.session.working = saved;
      this.session.dirty = false;
      this.deps.clearError();
    } catch (err) {
      this.reportError(err, () => void this.save());
    }
  }

  private reportError(err: unknown, retry: () => void): void {
    const msg = err instanceof GatewayError ? `gateway: ${err.message}` : String(err);
    this.deps.showError(msg, retry);
  }
}

function el(tag: string, cls: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = cls;
  return node;
}

function caption(text: string): HTMLElement {
  const c = document.createElement("figcaption");
  c.textContent = text;
  return c;
}
