// Thin fetch client for the /v1 JSON API. Every response either parses as
// JSON or raises an ApiError built from the service's error envelope.

import type {
    DailyMessage,
    DailyRecord,
    PatientProfile,
    ReviewItem,
    ScorePayload,
} from "./model.js";

export class ApiError extends Error {
    constructor(
        readonly status: number,
        readonly errorType: string,
        detail: string,
    ) {
        super(detail);
        this.name = "ApiError";
    }

    get isConflict(): boolean {
        return this.status === 409;
    }
}

type FetchLike = (path: string, init?: RequestInit) => Promise<Response>;

const defaultFetch: FetchLike = (path, init) => globalThis.fetch(path, init);

export class ApiClient {
    constructor(
        private readonly base: string = "",
        private readonly token: string | null = null,
        private readonly fetchFn: FetchLike = defaultFetch,
    ) {}

    private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
        const headers: Record<string, string> = { Accept: "application/json" };
        if (body !== undefined) {
            headers["Content-Type"] = "application/json";
        }
        if (this.token !== null) {
            headers["Authorization"] = `Bearer ${this.token}`;
        }
        const response = await this.fetchFn(`${this.base}${path}`, {
            method,
            headers,
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        if (!response.ok) {
            let errorType = "HttpError";
            let detail = `${response.status} on ${path}`;
            try {
                const doc = await response.json();
                if (doc && doc.error) {
                    errorType = doc.error.type ?? errorType;
                    detail = doc.error.detail ?? detail;
                }
            } catch {
                // non-JSON error body, keep the fallback detail
            }
            throw new ApiError(response.status, errorType, detail);
        }
        return response.json() as Promise<T>;
    }

    health(): Promise<{ status: string }> {
        return this.request("GET", "/v1/health");
    }

    listPatients(): Promise<PatientProfile[]> {
        return this.request("GET", "/v1/patients");
    }

    getRecords(patientId: string): Promise<DailyRecord[]> {
        return this.request("GET", `/v1/patients/${encodeURIComponent(patientId)}/records`);
    }

    getQueue(status?: string, patientId?: string): Promise<ReviewItem[]> {
        const query = new URLSearchParams();
        if (status !== undefined) {
            query.set("status", status);
        }
        if (patientId !== undefined) {
            query.set("patient_id", patientId);
        }
        const qs = query.toString();
        return this.request("GET", `/v1/review-items${qs ? `?${qs}` : ""}`);
    }

    getItem(itemId: string): Promise<ReviewItem> {
        return this.request("GET", `/v1/review-items/${encodeURIComponent(itemId)}`);
    }

    scoreItem(itemId: string, payload: ScorePayload): Promise<ReviewItem> {
        return this.request(
            "POST",
            `/v1/review-items/${encodeURIComponent(itemId)}/score`,
            payload,
        );
    }

    getMessage(patientId: string, date: string): Promise<DailyMessage> {
        const pid = encodeURIComponent(patientId);
        return this.request("GET", `/v1/patients/${pid}/message?date=${encodeURIComponent(date)}`);
    }
}
