// Typed client for the uuaudit labeling service. The UI computes no metrics
// of its own: every number rendered comes out of these response payloads.

export interface DatasetInfo {
    name: string;
    n: number;
    p: number;
    classes: string[];
    has_true_labels: boolean;
}

export interface RunningMetrics {
    steps_taken: number;
    uu_count: number;
    sdr: number | null;
    utility: number;
}

export interface DisplayPayload {
    kind: "uri" | "features";
    uri?: string;
    features?: number[];
}

export interface PendingView {
    point_id: string;
    display: DisplayPayload;
    confidence: number;
    predicted_class: string;
    step: number;
    budget: number;
    classes: string[];
    metrics: RunningMetrics;
}

export interface SessionInfo {
    id: string;
    dataset: string;
    strategy: string;
    status: "awaiting_label" | "complete" | "aborted";
    budget: number;
    steps_taken: number;
    early_stopped: boolean;
}

export interface LabelResult {
    is_uu: boolean;
    utility: number;
    metrics: RunningMetrics;
    done: boolean;
    next_available: boolean;
}

export interface UuEntry {
    id: string;
    confidence: number;
    label: string;
}

export interface TraceStepView {
    b: number;
    id: string;
    c: number;
    phi: number;
    label: string;
    is_uu: boolean;
    W: number;
    gain: number;
}

export interface SessionSummary {
    session: SessionInfo;
    metrics: RunningMetrics;
    steps: TraceStepView[];
    uus: UuEntry[];
    utility_trajectory: number[];
    phi_model: Record<string, unknown>;
}

export interface SessionConfig {
    budget: number;
    strategy?: "fl" | "mu" | "cov" | "bandit";
    tau?: number;
    seed?: number;
    estimator?: "prior" | "logistic" | "cluster" | null;
    clusters?: number;
}

export interface CreateSessionResponse {
    session: SessionInfo;
    pending: PendingView | null;
}

export class ApiError extends Error {
    constructor(
        public status: number,
        message: string,
        public body: unknown = null,
    ) {
        super(message);
    }
}

async function parseError(res: Response): Promise<ApiError> {
    let body: unknown = null;
    let message = `${res.status} ${res.statusText}`;
    try {
        body = await res.json();
        const err = (body as { error?: string }).error;
        if (err) message = err;
    } catch {
        // non-JSON error body; keep the status line
    }
    return new ApiError(res.status, message, body);
}

export class UUAuditApi {
    constructor(private baseUrl: string = "") {}

    private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
        const res = await fetch(this.baseUrl + path, init);
        if (!res.ok) throw await parseError(res);
        return (await res.json()) as T;
    }

    listDatasets(): Promise<DatasetInfo[]> {
        return this.requestJson<DatasetInfo[]>("/datasets");
    }

    listSessions(): Promise<SessionInfo[]> {
        return this.requestJson<SessionInfo[]>("/sessions");
    }

    createSession(dataset: string, config: SessionConfig): Promise<CreateSessionResponse> {
        return this.requestJson<CreateSessionResponse>("/sessions", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ dataset, config }),
        });
    }

    next(sessionId: string): Promise<PendingView> {
        return this.requestJson<PendingView>(`/sessions/${sessionId}/next`);
    }

    label(sessionId: string, pointId: string, label: string): Promise<LabelResult> {
        return this.requestJson<LabelResult>(`/sessions/${sessionId}/label`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ point_id: pointId, label }),
        });
    }

    summary(sessionId: string): Promise<SessionSummary> {
        return this.requestJson<SessionSummary>(`/sessions/${sessionId}/summary`);
    }

    async trace(sessionId: string): Promise<string> {
        const res = await fetch(`${this.baseUrl}/sessions/${sessionId}/trace`);
        if (!res.ok) throw await parseError(res);
        return res.text();
    }
}
