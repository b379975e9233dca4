/** Canvas rendering of the rail schematic with live arm markers. */

import type { KioskModel } from "./model.js";
import type { LayoutDoc } from "./types.js";

const NODE_COLORS: Record<string, string> = {
  turntable: "#8e6bc6",
  station: "#3b7dd8",
  rack_port: "#3f9d4e",
};
const ARM_COLORS = ["#d62728", "#ff7f0e", "#0fb5ae", "#b5770f"];

export class Board {
  private scale = 80;
  private pad = 50;

  constructor(
    private canvas: HTMLCanvasElement,
    private layout: LayoutDoc,
  ) {}

  private place(node: string): [number, number] {
    const [x, y] = this.layout.positions[node] ?? [0, 0];
    return [this.pad + x * this.scale * 1.6, this.canvas.height / 2 + y * this.scale];
  }

  draw(model: KioskModel): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.font = "11px system-ui, sans-serif";

    for (const edge of this.layout.rail.edges) {
      const [x1, y1] = this.place(edge.a.node);
      const [x2, y2] = this.place(edge.b.node);
      ctx.strokeStyle = "#b9c0c7";
      ctx.lineWidth = 4;
      ctx.beginPath();
      ctx.moveTo(x1, y1);
      ctx.lineTo(x2, y2);
      ctx.stroke();
      ctx.fillStyle = "#7a838c";
      ctx.fillText(edge.id, (x1 + x2) / 2 - 8, (y1 + y2) / 2 - 6);
    }

    for (const node of this.layout.rail.nodes) {
      const [x, y] = this.place(node.id);
      ctx.fillStyle = NODE_COLORS[node.kind] ?? "#666";
      ctx.beginPath();
      if (node.kind === "turntable") {
        ctx.arc(x, y, 13, 0, Math.PI * 2);
      } else {
        ctx.rect(x - 11, y - 11, 22, 22);
      }
      ctx.fill();
      ctx.fillStyle = "#2b2f33";
      ctx.fillText(node.id, x - 14, y + 27);
    }

    let index = 0;
    for (const arm of [...model.arms.values()].sort((a, b) => a.id - b.id)) {
      const [x, y] = this.place(arm.node);
      const offset = index * 8 - 4;
      ctx.fillStyle = ARM_COLORS[index % ARM_COLORS.length];
      ctx.beginPath();
      ctx.moveTo(x + offset, y - 20);
      ctx.lineTo(x + offset - 8, y - 34);
      ctx.lineTo(x + offset + 8, y - 34);
      ctx.closePath();
      ctx.fill();
      ctx.fillText(`A${arm.id}${arm.carried ? " [book]" : ""}`, x + offset - 10, y - 38);
      index += 1;
    }
  }
}
