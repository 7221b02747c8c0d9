import { describe, expect, it } from "vitest";

import type { SessionResponse, StatusResponse } from "../src/api";
import { deriveView, toggleSelection, winnersOf } from "../src/model";

function roundPayload(overrides: Partial<SessionResponse> = {}): SessionResponse {
  return {
    protocol_version: 1,
    session_id: "abc123",
    kind: "round",
    state: "awaiting-choice",
    round: 2,
    total_rounds: 7,
    remaining_rounds: 6,
    remaining_budget: 5,
    choices_per_round: 4,
    target_preview: "/previews/target.pgm",
    batch: {
      batch_id: "batch-2",
      round: 2,
      previews: [
        "/previews/a.pgm",
        "/previews/b.pgm",
        "/previews/c.pgm",
        "/previews/d.pgm",
      ],
    },
    final: null,
    ...overrides,
  };
}

function finalPayload(): StatusResponse {
  return {
    protocol_version: 1,
    session_id: "abc123",
    state: "finished",
    round: 7,
    total_rounds: 7,
    remaining_rounds: 0,
    remaining_budget: 0,
    choices_per_round: 4,
    target_preview: "/previews/target.pgm",
    batch: null,
    incumbent_preview: "/previews/best.pgm",
    incumbent_value: -0.25,
    trajectory: [
      { round: 1, incumbent_value: -1.0, incumbent_preview: "/previews/r1.pgm" },
      { round: 2, incumbent_value: -0.25, incumbent_preview: "/previews/best.pgm" },
    ],
    final: {
      theta: [0.1, 0.2],
      predicted_value: -0.25,
      render: "/previews/result.pgm",
      target_preview: "/previews/target.pgm",
      rounds_completed: 7,
    },
  };
}

describe("deriveView", () => {
  it("renders one candidate tile per batch preview, in server order", () => {
    const view = deriveView(roundPayload(), new Set(), "multi");
    expect(view.kind).toBe("round");
    if (view.kind !== "round") return;
    expect(view.candidates).toEqual([
      "/previews/a.pgm",
      "/previews/b.pgm",
      "/previews/c.pgm",
      "/previews/d.pgm",
    ]);
    expect(view.round).toBe(2);
    expect(view.remainingBudget).toBe(5);
  });

  it("disables submit while the selection is empty", () => {
    const empty = deriveView(roundPayload(), new Set(), "multi");
    const picked = deriveView(roundPayload(), new Set([1]), "multi");
    if (empty.kind !== "round" || picked.kind !== "round") throw new Error("expected rounds");
    expect(empty.canSubmit).toBe(false);
    expect(picked.canSubmit).toBe(true);
  });

  it("drops a selection that no longer fits the batch", () => {
    const view = deriveView(roundPayload(), new Set([9]), "multi");
    if (view.kind !== "round") throw new Error("expected round");
    expect(view.selected.size).toBe(0);
    expect(view.canSubmit).toBe(false);
  });

  it("shows the final screen once the payload carries a result", () => {
    const view = deriveView(finalPayload(), new Set(), "multi");
    expect(view.kind).toBe("final");
    if (view.kind !== "final") return;
    expect(view.targetPreview).toBe("/previews/target.pgm");
    expect(view.resultPreview).toBe("/previews/result.pgm");
    expect(view.roundsCompleted).toBe(7);
    expect(view.trajectory).toHaveLength(2);
  });

  it("maps a schema mismatch to an error view instead of a partial render", () => {
    const wrongVersion = deriveView(
      roundPayload({ protocol_version: 2 }),
      new Set(),
      "multi",
    );
    expect(wrongVersion.kind).toBe("error");
    if (wrongVersion.kind === "error") {
      expect(wrongVersion.message).toMatch(/protocol_version/);
    }

    const neither = deriveView(roundPayload({ batch: null }), new Set(), "multi");
    expect(neither.kind).toBe("error");

    const badBatch = deriveView(
      roundPayload({
        batch: { batch_id: "b", round: 1, previews: ["/previews/only-one.pgm"] },
      }),
      new Set(),
      "multi",
    );
    expect(badBatch.kind).toBe("error");
  });

  it("surfaces the incumbent from status payloads", () => {
    const status: StatusResponse = {
      ...roundPayload(),
      incumbent_preview: "/previews/best.pgm",
      incumbent_value: -0.5,
      trajectory: [{ round: 1, incumbent_value: -0.5, incumbent_preview: "/previews/best.pgm" }],
    } as StatusResponse;
    const view = deriveView(status, new Set(), "multi");
    if (view.kind !== "round") throw new Error("expected round");
    expect(view.incumbentPreview).toBe("/previews/best.pgm");
  });
});

describe("toggleSelection", () => {
  it("toggles membership in multi mode", () => {
    let sel = new Set<number>();
    sel = toggleSelection(sel, 0, "multi", 4);
    sel = toggleSelection(sel, 2, "multi", 4);
    expect([...sel].sort()).toEqual([0, 2]);
    sel = toggleSelection(sel, 0, "multi", 4);
    expect([...sel]).toEqual([2]);
  });

  it("replaces the pick in single mode", () => {
    let sel = new Set<number>([1]);
    sel = toggleSelection(sel, 3, "single", 4);
    expect([...sel]).toEqual([3]);
    sel = toggleSelection(sel, 3, "single", 4);
    expect(sel.size).toBe(0);
  });

  it("ignores out-of-range positions", () => {
    const sel = toggleSelection(new Set([1]), 7, "multi", 4);
    expect([...sel]).toEqual([1]);
  });
});

describe("winnersOf", () => {
  it("reports winner positions in ascending order", () => {
    const view = deriveView(roundPayload(), new Set([3, 0, 2]), "multi");
    if (view.kind !== "round") throw new Error("expected round");
    expect(winnersOf(view)).toEqual([0, 2, 3]);
  });
});
