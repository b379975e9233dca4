/** Thin REST client for the library service. */

import type { ArmDoc, BookRecordDoc, BookRow, LayoutDoc, TaskDoc } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, "NetworkError", String(err));
  }
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, body.error ?? "HttpError", body.detail ?? response.statusText);
  }
  return body as T;
}

export class LibraryApi {
  constructor(public baseUrl: string = "") {}

  searchBooks(filters: { title?: string; author?: string; genre?: string }): Promise<BookRow[]> {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(filters)) {
      if (value) {
        params.set(key, value);
      }
    }
    return request(`${this.baseUrl}/api/books?${params.toString()}`);
  }

  returnBook(record: BookRecordDoc): Promise<{ task_id: number }> {
    return request(`${this.baseUrl}/api/returns`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ record }),
    });
  }

  requestBook(barcode: string, kioskId: string): Promise<{ task_id: number }> {
    return request(`${this.baseUrl}/api/requests`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ barcode, kiosk_id: kioskId }),
    });
  }

  getTask(id: number): Promise<TaskDoc> {
    return request(`${this.baseUrl}/api/tasks/${id}`);
  }

  getTasks(): Promise<TaskDoc[]> {
    return request(`${this.baseUrl}/api/tasks`);
  }

  getArms(): Promise<ArmDoc[]> {
    return request(`${this.baseUrl}/api/arms`);
  }

  getLayout(): Promise<LayoutDoc> {
    return request(`${this.baseUrl}/api/layout`);
  }

  setSpeed(factor: number): Promise<{ factor: number }> {
    return request(`${this.baseUrl}/api/sim/speed`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ factor }),
    });
  }
}
