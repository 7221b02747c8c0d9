// Application shell: one session per tab, all server interaction
// sequential. The session id lives in the URL hash, so a refresh
// resumes from the status endpoint instead of starting over.

import { ApiClient } from "./api.js";
import type { SessionResponse, StatusResponse } from "./api.js";
import { deriveView, toggleSelection, winnersOf } from "./model.js";
import type { SelectionMode, View } from "./model.js";
import { render } from "./dom.js";

interface AppState {
  payload: SessionResponse | StatusResponse | null;
  selected: Set<number>;
  mode: SelectionMode;
  submitting: boolean;
}

export class App {
  private state: AppState = {
    payload: null,
    selected: new Set(),
    mode: "multi",
    submitting: false,
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  private view(): View {
    if (!this.state.payload) {
      return { kind: "error", message: "no session loaded" };
    }
    return deriveView(this.state.payload, this.state.selected, this.state.mode);
  }

  private draw(): void {
    render(this.root, this.view(), {
      onToggle: (position) => this.toggle(position),
      onSubmit: () => void this.submit(),
      onRetry: () => void this.refresh(),
    }, (path) => this.api.fetchPreview(path));
  }

  private setPayload(payload: SessionResponse | StatusResponse): void {
    this.state.payload = payload;
    this.state.selected = new Set();
    this.draw();
  }

  private toggle(position: number): void {
    const view = this.view();
    if (view.kind !== "round") return;
    this.state.selected = toggleSelection(
      this.state.selected,
      position,
      this.state.mode,
      view.candidates.length,
    );
    this.draw();
  }

  async start(options: {
    task: string;
    taskSeed: number;
    budget: number;
    choicesPerRound: number;
    mode: SelectionMode;
  }): Promise<void> {
    this.state.mode = options.mode;
    const body = await this.api.createSession({
      task: options.task,
      task_seed: options.taskSeed,
      budget: options.budget,
      choices_per_round: options.choicesPerRound,
      likelihood: options.mode === "multi" ? "subset-logit" : "multinomial-logit",
    });
    rememberMode(body.session_id, options.mode);
    window.location.hash = `#${body.session_id}`;
    this.setPayload(body);
  }

  async resume(sessionId: string): Promise<void> {
    this.state.mode = recallMode(sessionId);
    this.setPayload(await this.api.getStatus(sessionId));
  }

  async refresh(): Promise<void> {
    const view = this.view();
    const sessionId =
      view.kind === "error" ? window.location.hash.slice(1) : view.sessionId;
    if (!sessionId) return;
    try {
      this.setPayload(await this.api.getStatus(sessionId));
    } catch (error) {
      this.state.payload = null;
      render(this.root, { kind: "error", message: (error as Error).message }, {
        onToggle: () => undefined,
        onSubmit: () => undefined,
        onRetry: () => void this.refresh(),
      }, (path) => this.api.fetchPreview(path));
    }
  }

  // In-flight guard plus the server's idempotency token: a second click
  // while a submission is pending is ignored locally, and a stale batch id
  // is answered with a conflict that we resolve by re-fetching status.
  async submit(): Promise<void> {
    const view = this.view();
    if (view.kind !== "round" || !view.canSubmit || this.state.submitting) return;
    this.state.submitting = true;
    try {
      const result = await this.api.submitChoice(
        view.sessionId,
        view.batchId,
        winnersOf(view),
      );
      if (result.kind === "ok") {
        this.setPayload(result.body);
      } else {
        this.setPayload(await this.api.getStatus(view.sessionId));
      }
    } catch (error) {
      render(this.root, { kind: "error", message: (error as Error).message }, {
        onToggle: () => undefined,
        onSubmit: () => undefined,
        onRetry: () => void this.refresh(),
      }, (path) => this.api.fetchPreview(path));
    } finally {
      this.state.submitting = false;
    }
  }
}

// The wire payload does not say which likelihood a session runs, so the
// selection mode survives refreshes through local storage instead.
function rememberMode(sessionId: string, mode: SelectionMode): void {
  try {
    window.localStorage.setItem(`prefbo-mode-${sessionId}`, mode);
  } catch {
    // storage may be unavailable; resume then falls back to multi
  }
}

function recallMode(sessionId: string): SelectionMode {
  try {
    return window.localStorage.getItem(`prefbo-mode-${sessionId}`) === "single"
      ? "single"
      : "multi";
  } catch {
    return "multi";
  }
}

function readForm(form: HTMLFormElement): {
  task: string;
  taskSeed: number;
  budget: number;
  choicesPerRound: number;
  mode: SelectionMode;
} {
  const data = new FormData(form);
  return {
    task: String(data.get("task") ?? "warp-affine8"),
    taskSeed: Number(data.get("task_seed") ?? 0),
    budget: Number(data.get("budget") ?? 10),
    choicesPerRound: Number(data.get("k") ?? 4),
    mode: data.get("multi") === "on" ? "multi" : "single",
  };
}

export function boot(): void {
  const root = document.getElementById("app");
  const form = document.getElementById("start-form") as HTMLFormElement | null;
  if (!root || !form) return;
  const app = new App(root, new ApiClient(""));

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    form.hidden = true;
    void app.start(readForm(form)).catch((error) => {
      form.hidden = false;
      root.textContent = (error as Error).message;
    });
  });

  const existing = window.location.hash.slice(1);
  if (existing) {
    form.hidden = true;
    void app.resume(existing).catch(() => {
      form.hidden = false;
      window.location.hash = "";
    });
  }
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
