// Integration tests against a real gateway process. The suite spawns
// `lwe serve` on a scratch workdir (the package must be pip-installed),
// drives it exactly like the browser client does, and checks the three
// contract points: save -> preview round trip is pixel-exact against the
// CLI retouch, clamped slider fuzz never draws a 400, and all-zero gammas
// reproduce the original image.

import { ChildProcess, execFile, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync, mkdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { createServer } from "node:net";
import { PNG } from "pngjs";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { GatewayClient } from "../src/api.js";
import {
  Coefficients,
  clampCoefficients,
  clampGammas,
  coefficientSliders,
  defaultCoefficients,
} from "../src/schema.js";

const execFileP = promisify(execFile);

let workdir: string;
let server: ChildProcess;
let serverLog = "";
let client: GatewayClient;
let clusterId: number;

function makeImage(path: string, scale: number, salt: number): void {
  const png = new PNG({ width: 64, height: 48 });
  for (let y = 0; y < 48; y++) {
    for (let x = 0; x < 64; x++) {
      const i = (64 * y + x) << 2;
      // deterministic texture, scaled into a dark or bright group
      png.data[i] = Math.round(scale * ((x * 7 + y * 3 + salt * 11) % 97) / 97 * 255);
      png.data[i + 1] = Math.round(scale * ((x * 5 + y * 13 + salt * 17) % 89) / 89 * 255);
      png.data[i + 2] = Math.round(scale * ((x * 11 + y * 7 + salt * 23) % 83) / 83 * 255);
      png.data[i + 3] = 255;
    }
  }
  writeFileSync(path, PNG.sync.write(png));
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr && typeof addr === "object") {
        const port = addr.port;
        srv.close(() => resolve(port));
      } else {
        srv.close(() => reject(new Error("no address")));
      }
    });
  });
}

async function waitForHealth(base: string): Promise<void> {
  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      const resp = await fetch(`${base}/api/health`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      throw new Error(`gateway did not come up; log:\n${serverLog}`);
    }
    await new Promise((r) => setTimeout(r, 250));
  }
}

// mean absolute difference between two decoded PNGs, rgb channels, 0..1 scale
function meanAbsDiff(a: Buffer, b: Buffer): number {
  const pa = PNG.sync.read(a);
  const pb = PNG.sync.read(b);
  expect(pb.width).toBe(pa.width);
  expect(pb.height).toBe(pa.height);
  let sum = 0;
  let count = 0;
  for (let i = 0; i < pa.data.length; i += 4) {
    for (let c = 0; c < 3; c++) {
      sum += Math.abs(pa.data[i + c] - pb.data[i + c]) / 255;
      count++;
    }
  }
  return sum / count;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "lwe-ui-"));
  mkdirSync(join(workdir, "images"));
  for (let i = 0; i < 3; i++) makeImage(join(workdir, "images", `dark${i}.png`), 0.3, i);
  for (let i = 0; i < 3; i++) makeImage(join(workdir, "images", `bright${i}.png`), 0.9, i + 3);

  const port = await freePort();
  server = spawn("lwe", ["serve", "--port", String(port), "--workdir", workdir], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  server.stdout?.on("data", (d) => { serverLog += d; });
  server.stderr?.on("data", (d) => { serverLog += d; });
  const base = `http://127.0.0.1:${port}`;
  await waitForHealth(base);
  client = new GatewayClient(base);

  const clusters = await client.listClusters();
  const first = clusters.find((c) => c.size > 0);
  if (!first) throw new Error("no populated cluster");
  clusterId = first.id;
});

afterAll(() => {
  server?.kill("SIGTERM");
  if (workdir) rmSync(workdir, { recursive: true, force: true });
});

describe("save -> preview round trip", () => {
  it("preview equals the CLI retouch of the representative, pixel for pixel", async () => {
    const edited: Coefficients = clampCoefficients({
      ...defaultCoefficients(),
      gamma1: [0.25, 0.65],
      theta1: [0.015, 0.02],
      alpha: 0.8,
    });
    const saved = await client.saveCoefficients(clusterId, edited);
    expect(saved.gamma1).toEqual(edited.gamma1);

    const previewBlob = await client.preview(clusterId);
    const preview = Buffer.from(await previewBlob.arrayBuffer());

    // retouch the same representative through the CLI using the exact
    // coefficients file the server persisted
    const repResp = await fetch(client.representativeUrl(clusterId));
    expect(repResp.ok).toBe(true);
    const repPath = join(workdir, "rep.png");
    writeFileSync(repPath, Buffer.from(await repResp.arrayBuffer()));
    const outPath = join(workdir, "cli_retouch.png");
    const coeffsPath = join(workdir, "coeffs", `${clusterId}.json`);
    await execFileP("lwe", ["retouch", repPath, outPath, "--coeffs", coeffsPath]);
    const cliOut = readFileSync(outPath);

    const pPrev = PNG.sync.read(preview);
    const pCli = PNG.sync.read(cliOut);
    expect(pPrev.width).toBe(pCli.width);
    expect(pPrev.height).toBe(pCli.height);
    expect(Buffer.compare(pPrev.data, pCli.data)).toBe(0);
  });

  it("sliders reload the saved values after a round trip", async () => {
    const c = clampCoefficients({ ...defaultCoefficients(), gamma2: [0.1, 0.9], theta4: 0.03 });
    await client.saveCoefficients(clusterId, c);
    const again = await client.saveCoefficients(clusterId, c);
    expect(again.gamma2).toEqual([0.1, 0.9]);
    expect(again.theta4).toBeCloseTo(0.03, 9);
  });
});

describe("clamped slider fuzz", () => {
  it("100 random slider states produce no 400s", async () => {
    const rand = mulberry32(20240817);
    const wild = () => {
      const r = rand();
      if (r < 0.08) return NaN;
      return -2 + rand() * 6;
    };
    const sliders = coefficientSliders();
    const uploadResp = await fetch(client.representativeUrl(clusterId));
    const upload = Buffer.from(await uploadResp.arrayBuffer());

    for (let trial = 0; trial < 100; trial++) {
      if (trial % 2 === 0) {
        // tuning view: random raw value through every slider, then clamp;
        // pyramid depth stays on auto exactly like the UI leaves it
        const c = defaultCoefficients();
        for (const spec of sliders) spec.set(c, wild());
        const coeffs = clampCoefficients(c);
        const resp = await fetch(client.previewUrl(clusterId, coeffs));
        expect(resp.status, `preview trial ${trial}: ${await bodyText(resp)}`).toBe(200);
      } else {
        // interactive view: random raw gammas, then clamp
        const gammas = clampGammas({ g1: wild(), g2: wild(), g3: wild() });
        const q = new URLSearchParams({
          g1: String(gammas.g1),
          g2: String(gammas.g2),
          g3: String(gammas.g3),
        });
        const resp = await fetch(`${client.base}/api/enhance?${q}`, {
          method: "POST",
          headers: { "Content-Type": "application/octet-stream" },
          body: upload,
        });
        expect(resp.status, `enhance trial ${trial}: ${await bodyText(resp)}`).toBe(200);
      }
    }
  }, 300_000);
});

async function bodyText(resp: Response): Promise<string> {
  if (resp.status === 200) return "";
  try {
    return await resp.text();
  } catch {
    return "<unreadable>";
  }
}

describe("degenerate gammas", () => {
  it("(0,0,0) returns the original within mean abs diff 0.02", async () => {
    const original = readFileSync(join(workdir, "images", "dark0.png"));
    const resp = await fetch(`${client.base}/api/enhance?g1=0&g2=0&g3=0`, {
      method: "POST",
      headers: { "Content-Type": "image/png" },
      body: original,
    });
    expect(resp.status).toBe(200);
    const out = Buffer.from(await resp.arrayBuffer());
    expect(meanAbsDiff(original, out)).toBeLessThan(0.02);
  });
});
