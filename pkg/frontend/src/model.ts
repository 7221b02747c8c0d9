// Pure view state: everything on screen is a function of the last server
// payload plus the local selection. No DOM, no fetch, fully unit-testable.

import type {
  BatchPayload,
  FinalPayload,
  SessionResponse,
  StatusResponse,
  TrajectoryEntry,
} from "./api.js";

export type SelectionMode = "single" | "multi";

export interface RoundView {
  kind: "round";
  sessionId: string;
  round: number;
  totalRounds: number;
  remainingBudget: number;
  targetPreview: string;
  batchId: string;
  candidates: string[];
  selected: ReadonlySet<number>;
  canSubmit: boolean;
  incumbentPreview: string | null;
  trajectory: TrajectoryEntry[];
  mode: SelectionMode;
}

export interface FinalView {
  kind: "final";
  sessionId: string;
  targetPreview: string;
  resultPreview: string;
  predictedValue: number;
  roundsCompleted: number;
  trajectory: TrajectoryEntry[];
}

export interface ErrorView {
  kind: "error";
  message: string;
}

export type View = RoundView | FinalView | ErrorView;

export class SchemaError extends Error {}

function expect(condition: boolean, what: string): void {
  if (!condition) {
    throw new SchemaError(`malformed server payload: ${what}`);
  }
}

function checkBatch(batch: unknown): asserts batch is BatchPayload {
  const b = batch as BatchPayload;
  expect(typeof b === "object" && b !== null, "batch is not an object");
  expect(typeof b.batch_id === "string" && b.batch_id.length > 0, "batch_id");
  expect(typeof b.round === "number", "batch round");
  expect(Array.isArray(b.previews) && b.previews.length >= 2, "previews");
  for (const p of b.previews) expect(typeof p === "string", "preview path");
}

function checkFinal(final: unknown): asserts final is FinalPayload {
  const f = final as FinalPayload;
  expect(typeof f === "object" && f !== null, "final is not an object");
  expect(Array.isArray(f.theta), "final theta");
  expect(typeof f.predicted_value === "number", "final predicted_value");
  expect(typeof f.render === "string", "final render");
  expect(typeof f.target_preview === "string", "final target_preview");
  expect(typeof f.rounds_completed === "number", "final rounds_completed");
}

export function checkPayload(payload: SessionResponse | StatusResponse): void {
  expect(typeof payload === "object" && payload !== null, "payload is not an object");
  expect(payload.protocol_version === 1, `protocol_version ${String(payload.protocol_version)}`);
  expect(typeof payload.session_id === "string" && payload.session_id.length > 0, "session_id");
  expect(typeof payload.round === "number", "round");
  expect(typeof payload.total_rounds === "number", "total_rounds");
  expect(typeof payload.remaining_budget === "number", "remaining_budget");
  expect(typeof payload.choices_per_round === "number", "choices_per_round");
  expect(typeof payload.target_preview === "string", "target_preview");
  if (payload.batch !== null && payload.batch !== undefined) checkBatch(payload.batch);
  if (payload.final !== null && payload.final !== undefined) checkFinal(payload.final);
  expect(
    Boolean(payload.batch) || Boolean(payload.final),
    "payload carries neither a batch nor a final result",
  );
}

function trajectoryOf(payload: SessionResponse | StatusResponse): TrajectoryEntry[] {
  const maybe = (payload as StatusResponse).trajectory;
  return Array.isArray(maybe) ? maybe : [];
}

function incumbentOf(payload: SessionResponse | StatusResponse): string | null {
  const status = payload as StatusResponse;
  if (typeof status.incumbent_preview === "string") return status.incumbent_preview;
  const trajectory = trajectoryOf(payload);
  const last = trajectory[trajectory.length - 1];
  return last?.incumbent_preview ?? null;
}

// Candidate positions map one to one onto the server's batch order; the
// submitted winner indices are positions into this same array.
export function deriveView(
  payload: SessionResponse | StatusResponse,
  selected: ReadonlySet<number>,
  mode: SelectionMode,
): View {
  try {
    checkPayload(payload);
  } catch (error) {
    return { kind: "error", message: (error as Error).message };
  }
  if (payload.final) {
    return {
      kind: "final",
      sessionId: payload.session_id,
      targetPreview: payload.final.target_preview,
      resultPreview: payload.final.render,
      predictedValue: payload.final.predicted_value,
      roundsCompleted: payload.final.rounds_completed,
      trajectory: trajectoryOf(payload),
    };
  }
  const batch = payload.batch as BatchPayload;
  const inRange = [...selected].every((p) => p >= 0 && p < batch.previews.length);
  const effective = inRange ? selected : new Set<number>();
  return {
    kind: "round",
    sessionId: payload.session_id,
    round: batch.round,
    totalRounds: payload.total_rounds,
    remainingBudget: payload.remaining_budget,
    targetPreview: payload.target_preview,
    batchId: batch.batch_id,
    candidates: [...batch.previews],
    selected: effective,
    canSubmit: effective.size >= 1,
    incumbentPreview: incumbentOf(payload),
    trajectory: trajectoryOf(payload),
    mode,
  };
}

// Single mode replaces the pick; multi mode toggles membership.
export function toggleSelection(
  selected: ReadonlySet<number>,
  position: number,
  mode: SelectionMode,
  count: number,
): Set<number> {
  if (position < 0 || position >= count) {
    return new Set(selected);
  }
  if (mode === "single") {
    return selected.has(position) ? new Set() : new Set([position]);
  }
  const next = new Set(selected);
  if (next.has(position)) {
    next.delete(position);
  } else {
    next.add(position);
  }
  return next;
}

export function winnersOf(view: RoundView): number[] {
  return [...view.selected].sort((a, b) => a - b);
}
