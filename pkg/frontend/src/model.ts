// Session view-model: drives the label-next-label loop against the service
// and holds everything the DOM layer renders. All transitions round-trip to
// the server; a stale-label 409 is absorbed by refreshing from /next.

import {
    ApiError,
    PendingView,
    RunningMetrics,
    SessionConfig,
    SessionSummary,
    UUAuditApi,
    UuEntry,
} from "./api.js";

export type Phase =
    | "idle"
    | "starting"
    | "awaiting_label"
    | "submitting"
    | "complete"
    | "error";

export interface SessionViewState {
    phase: Phase;
    sessionId: string | null;
    dataset: string | null;
    budget: number;
    pending: PendingView | null;
    metrics: RunningMetrics | null;
    utilitySeries: number[];
    uus: UuEntry[];
    lastOutcome: { pointId: string; isUu: boolean } | null;
    error: string | null;
    showModelInfo: boolean;
}

function initialState(): SessionViewState {
    return {
        phase: "idle",
        sessionId: null,
        dataset: null,
        budget: 0,
        pending: null,
        metrics: null,
        utilitySeries: [],
        uus: [],
        lastOutcome: null,
        error: null,
        showModelInfo: true,
    };
}

export class SessionController {
    private state: SessionViewState = initialState();

    constructor(
        private api: UUAuditApi,
        private onChange: (view: SessionViewState) => void = () => {},
    ) {}

    get view(): SessionViewState {
        return this.state;
    }

    private emit(patch: Partial<SessionViewState>): void {
        this.state = { ...this.state, ...patch };
        this.onChange(this.state);
    }

    setShowModelInfo(show: boolean): void {
        this.emit({ showModelInfo: show });
    }

    async start(dataset: string, config: SessionConfig): Promise<void> {
        if (this.state.phase === "starting" || this.state.phase === "submitting") {
            return;
        }
        this.emit({ ...initialState(), phase: "starting", dataset, showModelInfo: this.state.showModelInfo });
        try {
            const created = await this.api.createSession(dataset, config);
            this.emit({
                sessionId: created.session.id,
                budget: created.session.budget,
                pending: created.pending,
                metrics: created.pending ? created.pending.metrics : null,
                phase: created.pending ? "awaiting_label" : "complete",
            });
            if (!created.pending) await this.loadSummary();
        } catch (err) {
            this.fail(err);
        }
    }

    /** Reconnect to an existing session (e.g. after a page reload). */
    async attach(sessionId: string): Promise<void> {
        this.emit({ ...initialState(), sessionId, phase: "starting", showModelInfo: this.state.showModelInfo });
        try {
            await this.loadSummary();
            await this.refreshPending();
        } catch (err) {
            this.fail(err);
        }
    }

    async submitLabel(label: string): Promise<void> {
        const { pending, sessionId, phase } = this.state;
        if (phase !== "awaiting_label" || !pending || !sessionId) return;
        this.emit({ phase: "submitting" });
        try {
            const result = await this.api.label(sessionId, pending.point_id, label);
            this.emit({
                lastOutcome: { pointId: pending.point_id, isUu: result.is_uu },
                metrics: result.metrics,
            });
            await this.loadSummary();
            if (result.done) {
                this.emit({ phase: "complete", pending: null });
            } else {
                await this.refreshPending();
            }
        } catch (err) {
            if (err instanceof ApiError && err.status === 409) {
                // a stale/duplicate submission: recover from the server state
                await this.refresh();
                return;
            }
            this.fail(err);
        }
    }

    /** Re-sync from /summary and /next without losing anything. */
    async refresh(): Promise<void> {
        if (!this.state.sessionId) return;
        try {
            await this.loadSummary();
            await this.refreshPending();
        } catch (err) {
            this.fail(err);
        }
    }

    private async refreshPending(): Promise<void> {
        const sessionId = this.state.sessionId!;
        try {
            const pending = await this.api.next(sessionId);
            this.emit({
                pending,
                metrics: pending.metrics,
                budget: pending.budget,
                phase: "awaiting_label",
            });
        } catch (err) {
            if (err instanceof ApiError && err.status === 409) {
                this.emit({ phase: "complete", pending: null });
                return;
            }
            throw err;
        }
    }

    private async loadSummary(): Promise<void> {
        const sessionId = this.state.sessionId;
        if (!sessionId) return;
        const summary: SessionSummary = await this.api.summary(sessionId);
        this.emit({
            metrics: summary.metrics,
            utilitySeries: summary.utility_trajectory,
            uus: summary.uus,
            budget: summary.session.budget,
        });
    }

    private fail(err: unknown): void {
        const message = err instanceof Error ? err.message : String(err);
        this.emit({ phase: "error", error: message });
    }
}
