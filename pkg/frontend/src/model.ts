/**
 * Kiosk view model.
 *
 * All rendered task and arm state funnels through applyEvent (from the
 * event stream) or resync (fresh snapshots after reconnect); the UI never
 * invents state. The model is plain data so a recorded stream can be
 * replayed against it in tests.
 */

import type { ArmDoc, StreamEvent, TaskDoc } from "./types.js";

export const TICKER_LIMIT = 50;

export interface TaskView {
  id: number;
  kind?: "return" | "retrieve";
  barcode?: string;
  state: string;
  armId?: number;
  address?: { rack: number; level: number; slot: number };
  kioskId?: string;
  reason?: string;
  submittedMs?: number;
  completedMs?: number;
}

export interface ArmView {
  id: number;
  node: string;
  carried: string | null;
  taskId: number | null;
  moving: boolean;
}

export type ModelListener = () => void;

export class KioskModel {
  tasks = new Map<number, TaskView>();
  arms = new Map<number, ArmView>();
  ticker: StreamEvent[] = [];
  stale = true; // until the first snapshot or stream attach
  deadlocks = 0;
  private listeners: ModelListener[] = [];

  onChange(listener: ModelListener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener();
    }
  }

  markDown(): void {
    this.stale = true;
    this.notify();
  }

  markUp(): void {
    this.stale = false;
    this.notify();
  }

  resync(tasks: TaskDoc[], arms: ArmDoc[]): void {
    this.tasks.clear();
    for (const task of tasks) {
      this.tasks.set(task.id, {
        id: task.id,
        kind: task.kind,
        barcode: task.barcode,
        state: task.state,
        armId: task.arm_id,
        address: task.address,
        kioskId: task.kiosk_id,
        reason: task.reason,
        submittedMs: task.submitted_ms,
        completedMs: task.completed_ms,
      });
    }
    this.arms.clear();
    for (const arm of arms) {
      this.arms.set(arm.id, {
        id: arm.id,
        node: arm.node,
        carried: arm.carried,
        taskId: arm.task_id,
        moving: arm.state === "Moving",
      });
    }
    this.stale = false;
    this.notify();
  }

  private task(id: number): TaskView {
    let view = this.tasks.get(id);
    if (!view) {
      view = { id, state: "Pending" };
      this.tasks.set(id, view);
    }
    return view;
  }

  private arm(id: number): ArmView {
    let view = this.arms.get(id);
    if (!view) {
      view = { id, node: "", carried: null, taskId: null, moving: false };
      this.arms.set(id, view);
    }
    return view;
  }

  applyEvent(event: StreamEvent): void {
    const payload = event as Record<string, any>;
    switch (event.kind) {
      case "TaskSubmitted": {
        const task = this.task(payload.task_id);
        task.state = "Pending";
        task.kind = payload.op;
        task.barcode = payload.record?.barcode ?? payload.barcode;
        task.kioskId = payload.kiosk_id;
        task.submittedMs = event.time_ms;
        break;
      }
      case "ArmAssigned": {
        const task = this.task(payload.task_id);
        task.state = "Assigned";
        task.armId = payload.arm_id;
        const arm = this.arm(payload.arm_id);
        arm.taskId = payload.task_id;
        break;
      }
      case "SegmentReserved": {
        if (payload.task_id != null) {
          const task = this.task(payload.task_id);
          if (task.state === "Assigned") {
            task.state = "Active";
          }
        }
        this.arm(payload.arm_id).moving = true;
        break;
      }
      case "PhaseComplete": {
        const arm = this.arm(payload.arm_id);
        if (payload.phase === "travel" && payload.to_node) {
          arm.node = payload.to_node;
        }
        if (payload.task_id != null) {
          const task = this.task(payload.task_id);
          if (task.state === "Assigned") {
            task.state = "Active";
          }
        }
        break;
      }
      case "GripOk": {
        const arm = this.arm(payload.arm_id);
        arm.carried = payload.barcode ?? null;
        break;
      }
      case "BookPicked": {
        const task = this.task(payload.task_id);
        task.state = "Active";
        task.address = payload.address;
        break;
      }
      case "BookPlaced": {
        const task = this.task(payload.task_id);
        task.address = payload.address;
        const arm = this.arm(payload.arm_id);
        arm.carried = null;
        break;
      }
      case "BookDelivered": {
        const task = this.task(payload.task_id);
        task.kioskId = payload.kiosk_id;
        const arm = this.arm(payload.arm_id);
        arm.carried = null;
        break;
      }
      case "TaskCompleted": {
        const task = this.task(payload.task_id);
        task.state = "Done";
        task.completedMs = event.time_ms;
        this.releaseArm(payload.task_id);
        break;
      }
      case "TaskFailed": {
        const task = this.task(payload.task_id);
        task.state = "Failed";
        task.reason = payload.reason;
        task.completedMs = event.time_ms;
        this.releaseArm(payload.task_id);
        break;
      }
      case "DeadlockResolved": {
        this.deadlocks += 1;
        break;
      }
      default:
        break;
    }
    this.ticker.push(event);
    if (this.ticker.length > TICKER_LIMIT) {
      this.ticker.splice(0, this.ticker.length - TICKER_LIMIT);
    }
    this.notify();
  }

  private releaseArm(taskId: number): void {
    for (const arm of this.arms.values()) {
      if (arm.taskId === taskId) {
        arm.taskId = null;
        arm.moving = false;
      }
    }
  }

  taskState(id: number): string | undefined {
    return this.tasks.get(id)?.state;
  }
}
