// Typed client for the session wire protocol (JSON over /api/v1).
// The UI talks to the server exclusively through this module.

export interface BatchPayload {
  batch_id: string;
  round: number;
  previews: string[];
}

export interface TrajectoryEntry {
  round: number;
  incumbent_value: number;
  incumbent_preview: string | null;
}

export interface FinalPayload {
  theta: number[];
  predicted_value: number;
  render: string;
  target_preview: string;
  rounds_completed: number;
}

export interface SessionResponse {
  protocol_version: number;
  session_id: string;
  kind: string;
  state: string;
  round: number;
  total_rounds: number;
  remaining_rounds: number;
  remaining_budget: number;
  choices_per_round: number;
  target_preview: string;
  batch: BatchPayload | null;
  final: FinalPayload | null;
}

export interface StatusResponse {
  protocol_version: number;
  session_id: string;
  state: string;
  round: number;
  total_rounds: number;
  remaining_rounds: number;
  remaining_budget: number;
  choices_per_round: number;
  target_preview: string;
  batch: BatchPayload | null;
  incumbent_preview: string | null;
  incumbent_value: number | null;
  trajectory: TrajectoryEntry[];
  final: FinalPayload | null;
}

export interface CreateSessionRequest {
  task?: string;
  task_seed?: number;
  field_size?: number;
  budget?: number;
  choices_per_round?: number;
  init_batches?: number;
  seed?: number;
  likelihood?: string;
}

export type SubmitResult =
  | { kind: "ok"; body: SessionResponse }
  | { kind: "conflict"; detail: string };

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`server answered ${status}: ${detail}`);
  }
}

async function readDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return response.statusText || `HTTP ${response.status}`;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.url(path), init);
    if (!response.ok) {
      throw new ApiError(response.status, await readDetail(response));
    }
    return (await response.json()) as T;
  }

  createSession(request: CreateSessionRequest): Promise<SessionResponse> {
    return this.json<SessionResponse>("/api/v1/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
  }

  getBatch(sessionId: string): Promise<SessionResponse> {
    return this.json<SessionResponse>(`/api/v1/sessions/${sessionId}/batch`);
  }

  getStatus(sessionId: string): Promise<StatusResponse> {
    return this.json<StatusResponse>(`/api/v1/sessions/${sessionId}/status`);
  }

  getFinal(sessionId: string): Promise<SessionResponse> {
    return this.json<SessionResponse>(`/api/v1/sessions/${sessionId}/final`);
  }

  // A duplicated click races the first submission; the server answers the
  // loser with a conflict, which the caller resolves by re-fetching status.
  async submitChoice(
    sessionId: string,
    batchId: string,
    winners: number[],
  ): Promise<SubmitResult> {
    const response = await fetch(this.url(`/api/v1/sessions/${sessionId}/choices`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ batch_id: batchId, winners }),
    });
    if (response.status === 409) {
      return { kind: "conflict", detail: await readDetail(response) };
    }
    if (!response.ok) {
      throw new ApiError(response.status, await readDetail(response));
    }
    return { kind: "ok", body: (await response.json()) as SessionResponse };
  }

  async fetchPreview(path: string): Promise<Uint8Array> {
    const response = await fetch(this.url(path));
    if (!response.ok) {
      throw new ApiError(response.status, await readDetail(response));
    }
    return new Uint8Array(await response.arrayBuffer());
  }
}
