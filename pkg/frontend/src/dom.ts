// DOM binding: render a View into a root element. Rendering replaces the
// root's children wholesale, so the screen can never show a partial
// mixture of two payloads.

import type { View, RoundView, FinalView } from "./model.js";
import { decodePgm, toRgba } from "./pgm.js";

export interface Handlers {
  onToggle(position: number): void;
  onSubmit(): void;
  onRetry(): void;
}

export type PreviewLoader = (path: string) => Promise<Uint8Array>;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

// Paint asynchronously; the canvas carries data-preview so tests can
// assert wiring without a 2d context (not every DOM has one).
function paintPreview(canvas: HTMLCanvasElement, path: string, load: PreviewLoader): void {
  canvas.dataset.preview = path;
  void load(path)
    .then((bytes) => {
      const image = decodePgm(bytes);
      canvas.width = image.width;
      canvas.height = image.height;
      const ctx = canvas.getContext("2d");
      if (!ctx) return;
      const frame = ctx.createImageData(image.width, image.height);
      frame.data.set(toRgba(image));
      ctx.putImageData(frame, 0, 0);
    })
    .catch(() => {
      canvas.dataset.error = "preview failed to load";
    });
}

function renderTrajectoryStrip(view: RoundView | FinalView, load: PreviewLoader): HTMLElement {
  const strip = el("div", "strip");
  strip.setAttribute("aria-label", "incumbent per round");
  for (const entry of view.trajectory) {
    const item = el("figure", "strip-item");
    if (entry.incumbent_preview) {
      const canvas = el("canvas", "strip-canvas");
      paintPreview(canvas, entry.incumbent_preview, load);
      item.appendChild(canvas);
    }
    item.appendChild(el("figcaption", "", `r${entry.round}`));
    strip.appendChild(item);
  }
  return strip;
}

function renderRound(view: RoundView, handlers: Handlers, load: PreviewLoader): HTMLElement {
  const page = el("main", "round");

  const header = el("header", "bar");
  header.appendChild(el("h1", "", "Pick what looks closest to the target"));
  const counter = el("p", "counter");
  counter.id = "round-counter";
  counter.textContent = `Round ${view.round} of ${view.totalRounds} - budget left: ${view.remainingBudget}`;
  header.appendChild(counter);
  page.appendChild(header);

  const boards = el("section", "boards");
  const targetBox = el("figure", "target");
  const targetCanvas = el("canvas", "target-canvas");
  paintPreview(targetCanvas, view.targetPreview, load);
  targetBox.appendChild(targetCanvas);
  targetBox.appendChild(el("figcaption", "", "target"));
  boards.appendChild(targetBox);

  if (view.incumbentPreview) {
    const bestBox = el("figure", "incumbent");
    const bestCanvas = el("canvas", "incumbent-canvas");
    paintPreview(bestCanvas, view.incumbentPreview, load);
    bestBox.appendChild(bestCanvas);
    bestBox.appendChild(el("figcaption", "", "best so far"));
    boards.appendChild(bestBox);
  }
  page.appendChild(boards);

  const grid = el("section", "grid");
  grid.setAttribute("role", "listbox");
  grid.setAttribute(
    "aria-label",
    view.mode === "multi" ? "pick one or more candidates" : "pick one candidate",
  );
  view.candidates.forEach((preview, position) => {
    const tile = el("button", "tile");
    tile.type = "button";
    tile.dataset.position = String(position);
    tile.setAttribute("aria-pressed", view.selected.has(position) ? "true" : "false");
    const canvas = el("canvas", "tile-canvas");
    paintPreview(canvas, preview, load);
    tile.appendChild(canvas);
    tile.appendChild(el("span", "tile-label", `#${position + 1}`));
    tile.addEventListener("click", () => handlers.onToggle(position));
    grid.appendChild(tile);
  });
  page.appendChild(grid);

  const actions = el("footer", "actions");
  const submit = el("button", "submit", "Submit choice");
  submit.type = "button";
  submit.id = "submit";
  submit.disabled = !view.canSubmit;
  submit.addEventListener("click", () => handlers.onSubmit());
  actions.appendChild(submit);
  page.appendChild(actions);

  if (view.trajectory.length > 0) {
    page.appendChild(renderTrajectoryStrip(view, load));
  }
  return page;
}

function renderFinal(view: FinalView, load: PreviewLoader): HTMLElement {
  const page = el("main", "final");
  page.appendChild(el("h1", "", "Session finished"));
  page.appendChild(
    el(
      "p",
      "summary",
      `Best estimate after ${view.roundsCompleted} rounds ` +
        `(model value ${view.predictedValue.toFixed(4)})`,
    ),
  );
  const pair = el("section", "boards");
  const target = el("figure", "target");
  const targetCanvas = el("canvas", "target-canvas");
  paintPreview(targetCanvas, view.targetPreview, load);
  target.appendChild(targetCanvas);
  target.appendChild(el("figcaption", "", "target"));
  const result = el("figure", "result");
  const resultCanvas = el("canvas", "result-canvas");
  paintPreview(resultCanvas, view.resultPreview, load);
  result.appendChild(resultCanvas);
  result.appendChild(el("figcaption", "", "best found"));
  pair.appendChild(target);
  pair.appendChild(result);
  page.appendChild(pair);
  if (view.trajectory.length > 0) {
    page.appendChild(renderTrajectoryStrip(view, load));
  }
  return page;
}

function renderError(message: string, handlers: Handlers): HTMLElement {
  const page = el("main", "error");
  const banner = el("div", "banner");
  banner.setAttribute("role", "alert");
  banner.appendChild(el("p", "", message));
  const retry = el("button", "retry", "Retry");
  retry.type = "button";
  retry.addEventListener("click", () => handlers.onRetry());
  banner.appendChild(retry);
  page.appendChild(banner);
  return page;
}

export function render(
  root: HTMLElement,
  view: View,
  handlers: Handlers,
  load: PreviewLoader,
): void {
  let page: HTMLElement;
  switch (view.kind) {
    case "round":
      page = renderRound(view, handlers, load);
      break;
    case "final":
      page = renderFinal(view, load);
      break;
    default:
      page = renderError(view.message, handlers);
  }
  root.replaceChildren(page);
}
