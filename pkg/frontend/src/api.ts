// Typed client for the gateway HTTP API. All requests go through fetch so
// callers can pass an AbortSignal for cancellation.

import type { Coefficients, GammaTriple } from "./schema.js";

export interface ClusterSummary {
  id: number;
  size: number;
  representative: string | null;
}

export class GatewayError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

async function errorFromResponse(resp: Response): Promise<GatewayError> {
  let detail = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-json error body, keep the status line
  }
  return new GatewayError(resp.status, detail);
}

function coefficientQuery(c: Coefficients): URLSearchParams {
  const q = new URLSearchParams();
  q.set("theta1", c.theta1.join(","));
  q.set("gamma1", c.gamma1.join(","));
  q.set("theta2", c.theta2.join(","));
  q.set("gamma2", c.gamma2.join(","));
  q.set("theta4", String(c.theta4));
  q.set("alpha", String(c.alpha));
  q.set("epsilon", String(c.epsilon));
  q.set("w_contrast", String(c.theta3.w_contrast));
  q.set("w_saturation", String(c.theta3.w_saturation));
  q.set("w_exposedness", String(c.theta3.w_exposedness));
  q.set("sigma_e", String(c.theta3.sigma_e));
  if (c.theta3.levels != null) q.set("levels", String(c.theta3.levels));
  return q;
}

export class GatewayClient {
  base: string;

  constructor(base = "") {
    this.base = base.replace(/\/$/, "");
  }

  async health(signal?: AbortSignal): Promise<{ status: string; version: string }> {
    const resp = await fetch(`${this.base}/api/health`, { signal });
    if (!resp.ok) throw await errorFromResponse(resp);
    return resp.json();
  }

  async listClusters(signal?: AbortSignal): Promise<ClusterSummary[]> {
    const resp = await fetch(`${this.base}/api/clusters`, { signal });
    if (!resp.ok) throw await errorFromResponse(resp);
    return resp.json();
  }

  representativeUrl(id: number): string {
    return `${this.base}/api/clusters/${id}/representative`;
  }

  previewUrl(id: number, coeffs?: Coefficients): string {
    const path = `${this.base}/api/clusters/${id}/preview`;
    if (!coeffs) return path;
    return `${path}?${coefficientQuery(coeffs)}`;
  }

  // preview of the cluster representative; overrides (when given) ride on
  // the query string, otherwise the server applies the saved coefficients
  async preview(id: number, coeffs?: Coefficients, signal?: AbortSignal): Promise<Blob> {
    const resp = await fetch(this.previewUrl(id, coeffs), { signal });
    if (!resp.ok) throw await errorFromResponse(resp);
    return resp.blob();
  }

  async saveCoefficients(id: number, coeffs: Coefficients, signal?: AbortSignal): Promise<Coefficients> {
    const resp = await fetch(`${this.base}/api/clusters/${id}/coefficients`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(coeffs),
      signal,
    });
    if (!resp.ok) throw await errorFromResponse(resp);
    const body = await resp.json();
    return body.coefficients as Coefficients;
  }

  async enhance(image: Blob, gammas: GammaTriple, signal?: AbortSignal): Promise<Blob> {
    const q = new URLSearchParams({
      g1: String(gammas.g1),
      g2: String(gammas.g2),
      g3: String(gammas.g3),
    });
    const resp = await fetch(`${this.base}/api/enhance?${q}`, {
      method: "POST",
      headers: { "Content-Type": "application/octet-stream" },
      body: image,
      signal,
    });
    if (!resp.ok) throw await errorFromResponse(resp);
    return resp.blob();
  }
}
