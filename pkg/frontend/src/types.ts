/** Wire types as served by the library API. */

export interface ShelfAddress {
  rack: number;
  level: number;
  slot: number;
}

export interface BookStateDoc {
  kind: string;
  task_id?: number;
  arm_id?: number;
  address?: ShelfAddress;
  kiosk_id?: string;
}

export interface BookRecordDoc {
  barcode: string;
  title: string;
  author: string;
  genre: string;
  width_mm: number;
  state?: BookStateDoc;
}

export interface BookRow {
  record: BookRecordDoc;
  state: BookStateDoc;
}

export interface TaskDoc {
  id: number;
  kind: "return" | "retrieve";
  barcode: string;
  state: "Pending" | "Assigned" | "Active" | "Done" | "Failed";
  submitted_ms: number;
  completed_ms?: number;
  kiosk_id?: string;
  address?: ShelfAddress;
  arm_id?: number;
  reason?: string;
}

export interface ArmDoc {
  id: number;
  node: string;
  state: string;
  carried: string | null;
  task_id: number | null;
  home: string;
}

export interface RailNodeDoc {
  id: string;
  kind: "turntable" | "station" | "rack_port";
  station?: string;
  rack?: number;
}

export interface RailEdgeDoc {
  id: string;
  a: { node: string; port: number };
  b: { node: string; port: number };
  length_m: number;
}

export interface LayoutDoc {
  racks: { levels: { pitch_mm: number; slot_count: number }[] }[];
  rail: { nodes: RailNodeDoc[]; edges: RailEdgeDoc[] };
  positions: Record<string, [number, number]>;
}

/** One simulation event off the stream; payload fields vary by kind. */
export interface StreamEvent {
  time_ms: number;
  seq: number;
  kind: string;
  [key: string]: unknown;
}
