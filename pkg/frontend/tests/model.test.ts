import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { KioskModel, TICKER_LIMIT } from "../src/model.js";
import { parseSseBlock, parseSseChunk } from "../src/sse.js";
import type { StreamEvent } from "../src/types.js";

const tracePath = fileURLToPath(
  new URL("./fixtures/two_arm_trace.jsonl", import.meta.url),
);

function loadTrace(): StreamEvent[] {
  return readFileSync(tracePath, "utf-8")
    .trim()
    .split("\n")
    .map((line) => JSON.parse(line) as StreamEvent);
}

describe("kiosk model", () => {
  it("tracks task state as the last event received, for every prefix", () => {
    // The rendered state must equal what the stream said last; replaying a
    // recorded two-arm trace checks every intermediate point.
    const trace = loadTrace();
    const model = new KioskModel();
    const expected = new Map<number, string>();
    for (const event of trace) {
      model.applyEvent(event);
      const payload = event as Record<string, any>;
      const taskId = payload.task_id;
      if (taskId != null) {
        if (event.kind === "TaskSubmitted") expected.set(taskId, "Pending");
        if (event.kind === "ArmAssigned") expected.set(taskId, "Assigned");
        if (event.kind === "SegmentReserved" || event.kind === "PhaseComplete") {
          if (expected.get(taskId) === "Assigned") expected.set(taskId, "Active");
        }
        if (event.kind === "TaskCompleted") expected.set(taskId, "Done");
        if (event.kind === "TaskFailed") expected.set(taskId, "Failed");
      }
      for (const [id, state] of expected) {
        expect(model.taskState(id), `task ${id} after seq ${event.seq}`).toBe(state);
      }
    }
    expect(model.taskState(1)).toBe("Done");
    expect(model.taskState(2)).toBe("Done");
  });

  it("moves two distinct arm markers from the recorded trace", () => {
    const trace = loadTrace();
    const model = new KioskModel();
    const positionsSeen = new Map<number, Set<string>>();
    for (const event of trace) {
      model.applyEvent(event);
      for (const arm of model.arms.values()) {
        if (arm.node) {
          let set = positionsSeen.get(arm.id);
          if (!set) {
            set = new Set();
            positionsSeen.set(arm.id, set);
          }
          set.add(arm.node);
        }
      }
    }
    expect([...positionsSeen.keys()].sort()).toEqual([1, 2]);
    expect(positionsSeen.get(1)!.size).toBeGreaterThan(1);
    expect(positionsSeen.get(2)!.size).toBeGreaterThan(1);
  });

  it("keeps only the last fifty ticker events", () => {
    const model = new KioskModel();
    for (let i = 0; i < 130; i++) {
      model.applyEvent({ time_ms: i, seq: i, kind: "BeaconPulse" });
    }
    expect(model.ticker.length).toBe(TICKER_LIMIT);
    expect(model.ticker[0].seq).toBe(130 - TICKER_LIMIT);
  });

  it("resync replaces state and clears staleness", () => {
    const model = new KioskModel();
    model.markDown();
    expect(model.stale).toBe(true);
    model.resync(
      [
        {
          id: 4,
          kind: "retrieve",
          barcode: "x",
          state: "Done",
          submitted_ms: 0,
          completed_ms: 9,
        },
      ],
      [{ id: 1, node: "intake", state: "Standby", carried: null, task_id: null, home: "intake" }],
    );
    expect(model.stale).toBe(false);
    expect(model.taskState(4)).toBe("Done");
    expect(model.arms.get(1)?.node).toBe("intake");
  });

  it("notifies listeners on every applied event", () => {
    const model = new KioskModel();
    let calls = 0;
    model.onChange(() => {
      calls += 1;
    });
    model.applyEvent({ time_ms: 0, seq: 0, kind: "TaskSubmitted", task_id: 1, op: "return" });
    model.applyEvent({ time_ms: 1, seq: 1, kind: "TaskCompleted", task_id: 1 });
    expect(calls).toBe(2);
  });
});

describe("sse parsing", () => {
  it("splits buffered chunks into blocks and a remainder", () => {
    const { blocks, rest } = parseSseChunk("event: A\ndata: {}\n\nevent: B\ndata: {");
    expect(blocks).toEqual(["event: A\ndata: {}"]);
    expect(rest).toBe("event: B\ndata: {");
  });

  it("parses kind and payload", () => {
    const event = parseSseBlock('event: TaskCompleted\ndata: {"time_ms":5,"seq":9,"kind":"TaskCompleted","task_id":3}');
    expect(event).not.toBeNull();
    expect(event!.kind).toBe("TaskCompleted");
    expect((event as any).task_id).toBe(3);
  });

  it("ignores comments and incomplete blocks", () => {
    expect(parseSseBlock(": keepalive")).toBeNull();
    expect(parseSseBlock("event: X")).toBeNull();
  });
});
