import { beforeEach, describe, expect, it, vi } from "vitest";

import type { SessionResponse } from "../src/api";
import { render, type Handlers } from "../src/dom";
import { deriveView } from "../src/model";

const PGM_1X1 = new Uint8Array([80, 53, 10, 49, 32, 49, 10, 50, 53, 53, 10, 128]);

function payload(): SessionResponse {
  return {
    protocol_version: 1,
    session_id: "s1",
    kind: "round",
    state: "awaiting-choice",
    round: 1,
    total_rounds: 5,
    remaining_rounds: 5,
    remaining_budget: 5,
    choices_per_round: 4,
    target_preview: "/previews/t.pgm",
    batch: {
      batch_id: "b1",
      round: 1,
      previews: ["/previews/0.pgm", "/previews/1.pgm", "/previews/2.pgm", "/previews/3.pgm"],
    },
    final: null,
  };
}

function handlers(): Handlers {
  return { onToggle: vi.fn(), onSubmit: vi.fn(), onRetry: vi.fn() };
}

const load = () => Promise.resolve(PGM_1X1);

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = "<div id='app'></div>";
  root = document.getElementById("app") as HTMLElement;
});

describe("render round", () => {
  it("shows one tile per candidate wired to its preview path", () => {
    render(root, deriveView(payload(), new Set(), "multi"), handlers(), load);
    const tiles = root.querySelectorAll<HTMLButtonElement>("button.tile");
    expect(tiles).toHaveLength(4);
    tiles.forEach((tile, i) => {
      expect(tile.dataset.position).toBe(String(i));
      const canvas = tile.querySelector("canvas") as HTMLCanvasElement;
      expect(canvas.dataset.preview).toBe(`/previews/${i}.pgm`);
    });
    const target = root.querySelector(".target canvas") as HTMLCanvasElement;
    expect(target.dataset.preview).toBe("/previews/t.pgm");
  });

  it("disables submit until something is selected", () => {
    render(root, deriveView(payload(), new Set(), "multi"), handlers(), load);
    let submit = root.querySelector("#submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);

    render(root, deriveView(payload(), new Set([2]), "multi"), handlers(), load);
    submit = root.querySelector("#submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(false);
  });

  it("marks selected tiles with aria-pressed", () => {
    render(root, deriveView(payload(), new Set([1, 3]), "multi"), handlers(), load);
    const pressed = [...root.querySelectorAll("button.tile")].map((t) =>
      t.getAttribute("aria-pressed"),
    );
    expect(pressed).toEqual(["false", "true", "false", "true"]);
  });

  it("routes tile clicks to onToggle with the tile position", () => {
    const h = handlers();
    render(root, deriveView(payload(), new Set(), "multi"), h, load);
    const tiles = root.querySelectorAll<HTMLButtonElement>("button.tile");
    tiles[2]!.click();
    expect(h.onToggle).toHaveBeenCalledWith(2);
    expect(h.onSubmit).not.toHaveBeenCalled();
  });

  it("shows the round counter with the remaining budget", () => {
    render(root, deriveView(payload(), new Set(), "multi"), handlers(), load);
    const counter = root.querySelector("#round-counter") as HTMLElement;
    expect(counter.textContent).toContain("Round 1 of 5");
    expect(counter.textContent).toContain("budget left: 5");
  });
});

describe("render final", () => {
  it("shows target and result side by side", () => {
    const body = payload();
    body.batch = null;
    body.state = "finished";
    body.final = {
      theta: [0.0],
      predicted_value: -0.125,
      render: "/previews/result.pgm",
      target_preview: "/previews/t.pgm",
      rounds_completed: 5,
    };
    render(root, deriveView(body, new Set(), "multi"), handlers(), load);
    const target = root.querySelector(".target canvas") as HTMLCanvasElement;
    const result = root.querySelector(".result canvas") as HTMLCanvasElement;
    expect(target.dataset.preview).toBe("/previews/t.pgm");
    expect(result.dataset.preview).toBe("/previews/result.pgm");
    expect(root.querySelector(".summary")?.textContent).toContain("after 5 rounds");
    expect(root.querySelector("#submit")).toBeNull();
  });
});

describe("render error", () => {
  it("replaces the page with an alert banner and retry", () => {
    const h = handlers();
    render(root, deriveView(payload(), new Set(), "multi"), h, load);
    expect(root.querySelectorAll("button.tile")).toHaveLength(4);

    const broken = payload();
    broken.protocol_version = 99;
    render(root, deriveView(broken, new Set(), "multi"), h, load);
    const banner = root.querySelector("[role='alert']") as HTMLElement;
    expect(banner).not.toBeNull();
    expect(banner.textContent).toContain("protocol_version");
    expect(root.querySelectorAll("button.tile")).toHaveLength(0);

    (root.querySelector("button.retry") as HTMLButtonElement).click();
    expect(h.onRetry).toHaveBeenCalledOnce();
  });
});
