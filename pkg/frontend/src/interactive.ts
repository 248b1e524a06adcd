// Interactive enhancement view: upload an image, drag the three gamma
// sliders, see the enhanced result next to the original with zoom.

import { GatewayClient, GatewayError } from "./api.js";
import { GammaTriple, clampGammas } from "./schema.js";
import { PreviewScheduler } from "./debounce.js";

export interface InteractiveSession {
  image: Blob | null;
  gammas: GammaTriple;
  debounceMs: number;
}

const SLIDERS: Array<{ key: keyof GammaTriple; label: string }> = [
  { key: "g1", label: "under-exposure boost" },
  { key: "g2", label: "over-exposure suppression" },
  { key: "g3", label: "noise removal" },
];

interface InteractiveDeps {
  client: GatewayClient;
  showError: (msg: string, retry?: () => void) => void;
  clearError: () => void;
}

export class InteractiveView {
  session: InteractiveSession;
  private deps: InteractiveDeps;
  private root: HTMLElement;
  private originalImg!: HTMLImageElement;
  private resultImg!: HTMLImageElement;
  private sliderInputs = new Map<keyof GammaTriple, HTMLInputElement>();
  private scheduler: PreviewScheduler<GammaTriple, Blob>;
  private resultUrl: string | null = null;
  private zoomed = false;

  constructor(root: HTMLElement, deps: InteractiveDeps, debounceMs = 150) {
    this.root = root;
    this.deps = deps;
    this.session = { image: null, gammas: { g1: 0, g2: 0, g3: 0 }, debounceMs };
    this.scheduler = new PreviewScheduler(
      (gammas, signal) => {
        if (!this.session.image) return Promise.reject(new Error("no image uploaded"));
        return deps.client.enhance(this.session.image, gammas, signal);
      },
      {
        onResult: (blob) => this.showResult(blob),
        onError: (err) => this.reportError(err),
      },
      debounceMs,
    );
    this.build();
  }

  private build(): void {
    this.root.innerHTML = "";
    const picker = document.createElement("input");
    picker.type = "file";
    picker.accept = "image/png,image/jpeg";
    picker.addEventListener("change", () => {
      const f = picker.files?.[0];
      if (f) this.setImage(f);
    });

    const sliderBox = document.createElement("div");
    sliderBox.className = "slider-box";
    for (const { key, label } of SLIDERS) {
      const row = document.createElement("label");
      row.className = "slider-row";
      const name = document.createElement("span");
      name.className = "slider-label";
      name.textContent = label;
      const input = document.createElement("input");
      input.type = "range";
      input.min = "0";
      input.max = "1";
      input.step = "0.01";
      input.value = "0";
      input.disabled = true;
      const value = document.createElement("span");
      value.className = "slider-value";
      value.textContent = "0";
      input.addEventListener("input", () => {
        this.session.gammas[key] = Number(input.value);
        this.session.gammas = clampGammas(this.session.gammas);
        value.textContent = String(this.session.gammas[key]);
        this.scheduler.request({ ...this.session.gammas });
      });
      // slider release always lands a final request
      input.addEventListener("change", () => this.scheduler.flush({ ...this.session.gammas }));
      this.sliderInputs.set(key, input);
      row.append(name, input, value);
      sliderBox.append(row);
    }

    const split = document.createElement("div");
    split.className = "split-view";
    const left = document.createElement("figure");
    left.className = "pane";
    this.originalImg = document.createElement("img");
    this.originalImg.alt = "original";
    const lc = document.createElement("figcaption");
    lc.textContent = "original";
    left.append(this.originalImg, lc);
    const right = document.createElement("figure");
    right.className = "pane";
    this.resultImg = document.createElement("img");
    this.resultImg.alt = "enhanced";
    const rc = document.createElement("figcaption");
    rc.textContent = "enhanced";
    right.append(this.resultImg, rc);
    split.append(left, right);
    split.addEventListener("click", () => {
      this.zoomed = !this.zoomed;
      split.classList.toggle("zoomed", this.zoomed);
    });

    this.root.append(picker, sliderBox, split);
  }

  setImage(image: Blob): void {
    this.session.image = image;
    this.originalImg.src = URL.createObjectURL(image);
    this.setSlidersEnabled(true);
    this.scheduler.flush({ ...this.session.gammas });
  }

  setSlidersEnabled(enabled: boolean): void {
    for (const input of this.sliderInputs.values()) {
      input.disabled = !enabled || this.session.image === null;
    }
  }

  private showResult(blob: Blob): void {
    this.deps.clearError();
    if (this.resultUrl) URL.revokeObjectURL(this.resultUrl);
    this.resultUrl = URL.createObjectURL(blob);
    this.resultImg.src = this.resultUrl;
  }

  private reportError(err: unknown): void {
    if (err instanceof GatewayError && err.status === 413) {
      // surface the size limit the server quotes
      this.deps.showError(`image too large: ${err.message}`);
      return;
    }
    const msg = err instanceof GatewayError ? `gateway: ${err.message}` : String(err);
    this.deps.showError(msg, () => this.scheduler.flush({ ...this.session.gammas }));
  }
}
