/**
 * Kiosk page wiring: search + request, return form, my-requests panel,
 * live board, ticker, and sim-speed control. The kiosk identity comes from
 * the ?kiosk= query parameter (default kiosk1).
 */

import { LibraryApi, ApiError } from "./api.js";
import { Board } from "./board.js";
import { checkBarcode } from "./barcode.js";
import { KioskModel } from "./model.js";
import { subscribeEvents } from "./sse.js";
import type { BookRow, LayoutDoc } from "./types.js";

const api = new LibraryApi("");
const model = new KioskModel();
const myTasks = new Set<number>();

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) {
    throw new Error(`missing element #${id}`);
  }
  return found as T;
}

const kioskId = new URLSearchParams(location.search).get("kiosk") ?? "kiosk1";

function stateLabel(state: string, reason?: string): string {
  return state === "Failed" && reason ? `Failed (${reason})` : state;
}

function renderResults(rows: BookRow[]): void {
  const container = el<HTMLDivElement>("results");
  container.replaceChildren();
  if (rows.length === 0) {
    container.textContent = "no matches";
    return;
  }
  for (const row of rows) {
    const div = document.createElement("div");
    div.className = "book-row";
    const text = document.createElement("span");
    text.textContent = `${row.record.title} — ${row.record.author} (${row.record.genre}) [${row.state.kind}]`;
    div.appendChild(text);
    const button = document.createElement("button");
    button.textContent = "request";
    button.disabled = row.state.kind !== "Shelved";
    button.addEventListener("click", async () => {
      try {
        const { task_id } = await api.requestBook(row.record.barcode, kioskId);
        myTasks.add(task_id);
        renderRequests();
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          text.textContent += " — book unavailable right now";
        } else {
          text.textContent += ` — error: ${(err as Error).message}`;
        }
      }
    });
    div.appendChild(button);
    container.appendChild(div);
  }
}

function renderRequests(): void {
  const container = el<HTMLTableSectionElement>("requests-body");
  container.replaceChildren();
  const ids = [...myTasks].sort((a, b) => a - b);
  for (const id of ids) {
    const task = model.tasks.get(id);
    const row = document.createElement("tr");
    const address = task?.address
      ? `rack ${task.address.rack} / level ${task.address.level} / slot ${task.address.slot}`
      : "";
    row.innerHTML = "";
    for (const cell of [
      `#${id}`,
      task?.kind ?? "…",
      task?.barcode ?? "",
      stateLabel(task?.state ?? "Pending", task?.reason),
      task?.kind === "return" && task?.state === "Done" ? address : (task?.kioskId ?? ""),
    ]) {
      const td = document.createElement("td");
      td.textContent = String(cell);
      row.appendChild(td);
    }
    row.className = `task-${(task?.state ?? "Pending").toLowerCase()}`;
    container.appendChild(row);
  }
}

function renderTicker(): void {
  const list = el<HTMLUListElement>("ticker");
  list.replaceChildren();
  for (const event of [...model.ticker].reverse().slice(0, 50)) {
    const item = document.createElement("li");
    const p = event as Record<string, unknown>;
    const bits = [
      `${(event.time_ms / 1000).toFixed(1)}s`,
      event.kind,
      p.task_id != null ? `task ${p.task_id}` : "",
      p.arm_id != null ? `arm ${p.arm_id}` : "",
    ].filter(Boolean);
    item.textContent = bits.join(" · ");
    list.appendChild(item);
  }
}

function renderShelf(layoutDoc: LayoutDoc): void {
  // Shelf fill per rack is derived from completed return/retrieve tasks is
  // not authoritative; fetch fresh occupancy via the books endpoint.
  void api.searchBooks({}).then((rows) => {
    const counts = new Map<number, number>();
    for (const row of rows) {
      if (row.state.kind === "Shelved" && row.state.address) {
        counts.set(row.state.address.rack, (counts.get(row.state.address.rack) ?? 0) + 1);
      }
    }
    const container = el<HTMLDivElement>("shelf-fill");
    container.replaceChildren();
    layoutDoc.racks.forEach((rack, i) => {
      const capacity = rack.levels.reduce((acc, level) => acc + level.slot_count, 0);
      const used = counts.get(i + 1) ?? 0;
      const bar = document.createElement("div");
      bar.className = "fill-row";
      const label = document.createElement("span");
      label.textContent = `rack ${i + 1}: ${used}/${capacity}`;
      const meter = document.createElement("meter");
      meter.max = capacity;
      meter.value = used;
      bar.append(label, meter);
      container.appendChild(bar);
    });
  });
}

async function boot(): Promise<void> {
  el<HTMLSpanElement>("kiosk-name").textContent = kioskId;
  const layoutDoc = await api.getLayout();
  const board = new Board(el<HTMLCanvasElement>("board"), layoutDoc);

  const resync = async () => {
    const [tasks, arms] = await Promise.all([api.getTasks(), api.getArms()]);
    model.resync(tasks, arms);
  };

  model.onChange(() => {
    el<HTMLDivElement>("stale-banner").hidden = !model.stale;
    board.draw(model);
    renderRequests();
    renderTicker();
  });

  subscribeEvents("", {
    onEvent: (event) => model.applyEvent(event),
    onDown: () => model.markDown(),
    onUp: () => {
      void resync();
    },
  });
  await resync();
  renderShelf(layoutDoc);
  setInterval(() => renderShelf(layoutDoc), 5000);

  el<HTMLFormElement>("search-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const query = el<HTMLInputElement>("search-box").value.trim();
    const rows = await api.searchBooks({ title: query });
    const byAuthor = query ? await api.searchBooks({ author: query }) : [];
    const seen = new Set(rows.map((r) => r.record.barcode));
    renderResults(rows.concat(byAuthor.filter((r) => !seen.has(r.record.barcode))));
  });

  el<HTMLFormElement>("return-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const barcode = el<HTMLInputElement>("ret-barcode").value.trim();
    const verdict = checkBarcode(barcode);
    const note = el<HTMLSpanElement>("return-note");
    if (!verdict.valid) {
      note.textContent = `invalid barcode: ${verdict.error}`;
      note.className = "error";
      return;
    }
    try {
      const { task_id } = await api.returnBook({
        barcode,
        title: el<HTMLInputElement>("ret-title").value.trim(),
        author: el<HTMLInputElement>("ret-author").value.trim(),
        genre: el<HTMLInputElement>("ret-genre").value.trim(),
        width_mm: Number(el<HTMLInputElement>("ret-width").value || "30"),
      });
      myTasks.add(task_id);
      note.textContent = `accepted as task #${task_id}; shelf address appears when shelved`;
      note.className = "ok";
      renderRequests();
    } catch (err) {
      note.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      note.className = "error";
    }
  });

  el<HTMLInputElement>("speed").addEventListener("change", async (ev) => {
    const factor = Number((ev.target as HTMLInputElement).value);
    const { factor: applied } = await api.setSpeed(factor);
    el<HTMLSpanElement>("speed-label").textContent = `x${applied}`;
  });
}

void boot();
