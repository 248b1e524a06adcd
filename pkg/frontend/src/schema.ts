// Coefficient schema and client-side clamping.
//
// The clamps here mirror the gateway's validation exactly: anything this
// module lets through must never draw a 400 for a range error. Keep the
// two in sync when the server rules change.

export interface FusionWeights {
  w_contrast: number;
  w_saturation: number;
  w_exposedness: number;
  sigma_e: number;
  levels: number | null;
}

export interface Coefficients {
  theta1: number[];
  gamma1: number[];
  theta2: number[];
  gamma2: number[];
  theta3: FusionWeights;
  theta4: number;
  alpha: number;
  epsilon: number;
}

export interface GammaTriple {
  g1: number;
  g2: number;
  g3: number;
}

export function defaultCoefficients(): Coefficients {
  return {
    theta1: [0.01, 0.01],
    gamma1: [0.4, 0.8],
    theta2: [0.01, 0.01],
    gamma2: [0.4, 0.8],
    theta3: {
      w_contrast: 1.0,
      w_saturation: 1.0,
      w_exposedness: 1.0,
      sigma_e: 0.2,
      levels: null,
    },
    theta4: 0.01,
    alpha: 0.5,
    epsilon: 0.01,
  };
}

function finite(v: number, fallback: number): number {
  return Number.isFinite(v) ? v : fallback;
}

export function clamp01(v: number): number {
  // NaN falls back to 0; infinities clamp like any out-of-range value
  return Math.min(1, Math.max(0, Number.isNaN(v) ? 0 : v));
}

// server rule: smoothing strengths and alpha are >= 0; the request
// serializer needs finite numbers, so infinities fall back too
export function clampNonNegative(v: number): number {
  return Math.max(0, finite(v, 0));
}

// server rule: epsilon strictly positive
export function clampEpsilon(v: number): number {
  return Math.max(1e-6, finite(v, 0.01));
}

export function clampGammas(g: GammaTriple): GammaTriple {
  return { g1: clamp01(g.g1), g2: clamp01(g.g2), g3: clamp01(g.g3) };
}

// server rules: exponents >= 0 and at least one > 0; pyramid depth a small
// positive integer or null for auto
export function clampFusion(w: FusionWeights): FusionWeights {
  const out: FusionWeights = {
    w_contrast: clampNonNegative(w.w_contrast),
    w_saturation: clampNonNegative(w.w_saturation),
    w_exposedness: clampNonNegative(w.w_exposedness),
    sigma_e: Math.max(0.01, finite(w.sigma_e, 0.2)),
    levels:
      w.levels == null
        ? null
        : Math.min(8, Math.max(1, Math.round(finite(w.levels, 1)))),
  };
  if (out.w_contrast <= 0 && out.w_saturation <= 0 && out.w_exposedness <= 0) {
    out.w_contrast = 1.0;
  }
  return out;
}

export function clampCoefficients(c: Coefficients): Coefficients {
  // theta/gamma sequences must stay equal-length and nonempty; the UI
  // edits fixed-length vectors so only the values need clamping
  const pair = (thetas: number[], gammas: number[]): [number[], number[]] => {
    const n = Math.max(1, Math.min(thetas.length, gammas.length));
    const t = thetas.slice(0, n).map(clampNonNegative);
    const g = gammas.slice(0, n).map(clamp01);
    while (t.length < n) t.push(0.01);
    while (g.length < n) g.push(0.5);
    return [t, g];
  };
  const [theta1, gamma1] = pair(c.theta1, c.gamma1);
  const [theta2, gamma2] = pair(c.theta2, c.gamma2);
  return {
    theta1,
    gamma1,
    theta2,
    gamma2,
    theta3: clampFusion(c.theta3),
    theta4: clampNonNegative(c.theta4),
    alpha: clampNonNegative(c.alpha),
    epsilon: clampEpsilon(c.epsilon),
  };
}

// slider ranges for the tuning view; min/max are UI affordances, the hard
// guarantees come from the clamp functions above
export interface SliderSpec {
  label: string;
  min: number;
  max: number;
  step: number;
  get: (c: Coefficients) => number;
  set: (c: Coefficients, v: number) => void;
}

export function coefficientSliders(): SliderSpec[] {
  const specs: SliderSpec[] = [];
  for (let i = 0; i < 2; i++) {
    specs.push({
      label: `under-exposure gamma ${i + 1}`,
      min: 0, max: 1, step: 0.01,
      get: (c) => c.gamma1[i],
      set: (c, v) => { c.gamma1[i] = clamp01(v); },
    });
    specs.push({
      label: `under-exposure smoothing ${i + 1}`,
      min: 0, max: 0.2, step: 0.005,
      get: (c) => c.theta1[i],
      set: (c, v) => { c.theta1[i] = clampNonNegative(v); },
    });
  }
  for (let i = 0; i < 2; i++) {
    specs.push({
      label: `over-exposure gamma ${i + 1}`,
      min: 0, max: 1, step: 0.01,
      get: (c) => c.gamma2[i],
      set: (c, v) => { c.gamma2[i] = clamp01(v); },
    });
    specs.push({
      label: `over-exposure smoothing ${i + 1}`,
      min: 0, max: 0.2, step: 0.005,
      get: (c) => c.theta2[i],
      set: (c, v) => { c.theta2[i] = clampNonNegative(v); },
    });
  }
  specs.push({
    label: "detail smoothing",
    min: 0, max: 0.2, step: 0.005,
    get: (c) => c.theta4,
    set: (c, v) => { c.theta4 = clampNonNegative(v); },
  });
  specs.push({
    label: "detail amplification",
    min: 0, max: 2, step: 0.05,
    get: (c) => c.alpha,
    set: (c, v) => { c.alpha = clampNonNegative(v); },
  });
  specs.push({
    label: "fusion contrast weight",
    min: 0, max: 3, step: 0.1,
    get: (c) => c.theta3.w_contrast,
    set: (c, v) => { c.theta3 = clampFusion({ ...c.theta3, w_contrast: v }); },
  });
  specs.push({
    label: "fusion saturation weight",
    min: 0, max: 3, step: 0.1,
    get: (c) => c.theta3.w_saturation,
    set: (c, v) => { c.theta3 = clampFusion({ ...c.theta3, w_saturation: v }); },
  });
  specs.push({
    label: "fusion exposedness weight",
    min: 0, max: 3, step: 0.1,
    get: (c) => c.theta3.w_exposedness,
    set: (c, v) => { c.theta3 = clampFusion({ ...c.theta3, w_exposedness: v }); },
  });
  specs.push({
    label: "exposedness sigma",
    min: 0.01, max: 1, step: 0.01,
    get: (c) => c.theta3.sigma_e,
    set: (c, v) => { c.theta3 = clampFusion({ ...c.theta3, sigma_e: v }); },
  });
  return specs;
}
