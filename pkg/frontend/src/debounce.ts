// Debounced preview requests with cancellation.
//
// Guarantees at most one in-flight request: scheduling a new one cancels
// both the pending timer and any request already on the wire. flush()
// bypasses the delay so releasing a slider always lands a final request.

export type PreviewFetch<P, R> = (params: P, signal: AbortSignal) => Promise<R>;

export interface SchedulerCallbacks<R> {
  onResult: (result: R) => void;
  onError: (err: unknown) => void;
}

export function isAbortError(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}

export class PreviewScheduler<P, R> {
  private fetchFn: PreviewFetch<P, R>;
  private callbacks: SchedulerCallbacks<R>;
  private delayMs: number;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private controller: AbortController | null = null;
  private generation = 0;

  constructor(fetchFn: PreviewFetch<P, R>, callbacks: SchedulerCallbacks<R>, delayMs = 150) {
    this.fetchFn = fetchFn;
    this.callbacks = callbacks;
    this.delayMs = delayMs;
  }

  request(params: P): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire(params);
    }, this.delayMs);
  }

  flush(params: P): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    void this.fire(params);
  }

  cancel(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.controller?.abort();
    this.controller = null;
  }

  private async fire(params: P): Promise<void> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    const gen = ++this.generation;
    try {
      const result = await this.fetchFn(params, controller.signal);
      if (gen === this.generation) this.callbacks.onResult(result);
    } catch (err) {
      // a superseded request aborting is routine, not an error
      if (gen === this.generation && !isAbortError(err)) {
        this.callbacks.onError(err);
      }
    } finally {
      if (this.controller === controller) this.controller = null;
    }
  }
}
