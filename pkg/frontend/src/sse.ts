/**
 * Server-sent events over fetch streaming.
 *
 * Written against fetch + ReadableStream rather than EventSource so the
 * same code runs in the browser and under Node for tests. Reconnects with
 * a short backoff and tells the caller when the stream drops or resumes so
 * the view can resync from snapshots.
 */

import type { StreamEvent } from "./types.js";

export interface StreamHandlers {
  onEvent: (event: StreamEvent) => void;
  onDown?: () => void;
  onUp?: () => void;
}

export interface StreamHandle {
  close: () => void;
}

export function parseSseChunk(buffer: string): { blocks: string[]; rest: string } {
  const parts = buffer.split("\n\n");
  const rest = parts.pop() ?? "";
  return { blocks: parts, rest };
}

export function parseSseBlock(block: string): StreamEvent | null {
  let kind = "";
  let data = "";
  for (const line of block.split("\n")) {
    if (line.startsWith("event: ")) {
      kind = line.slice(7).trim();
    } else if (line.startsWith("data: ")) {
      data += line.slice(6);
    }
  }
  if (!kind || !data) {
    return null;
  }
  try {
    return JSON.parse(data) as StreamEvent;
  } catch {
    return null;
  }
}

export function subscribeEvents(baseUrl: string, handlers: StreamHandlers): StreamHandle {
  let closed = false;
  let controller: AbortController | null = null;

  const loop = async () => {
    let failures = 0;
    while (!closed) {
      controller = new AbortController();
      try {
        const response = await fetch(`${baseUrl}/api/events`, {
          signal: controller.signal,
          headers: { Accept: "text/event-stream" },
        });
        if (!response.ok || response.body === null) {
          throw new Error(`stream refused: ${response.status}`);
        }
        handlers.onUp?.();
        failures = 0;
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done) {
            break;
          }
          buffer += decoder.decode(value, { stream: true });
          const { blocks, rest } = parseSseChunk(buffer);
          buffer = rest;
          for (const block of blocks) {
            const event = parseSseBlock(block);
            if (event) {
              handlers.onEvent(event);
            }
          }
        }
        throw new Error("stream ended");
      } catch (err) {
        if (closed) {
          return;
        }
        handlers.onDown?.();
        failures += 1;
        await new Promise((resolve) => setTimeout(resolve, Math.min(250 * failures, 3000)));
      }
    }
  };
  void loop();

  return {
    close: () => {
      closed = true;
      controller?.abort();
    },
  };
}
