import { describe, expect, it } from "vitest";

import {
    ApiError,
    CreateSessionResponse,
    LabelResult,
    PendingView,
    RunningMetrics,
    SessionSummary,
    UUAuditApi,
} from "../src/api.js";
import { SessionController } from "../src/model.js";

function metrics(overrides: Partial<RunningMetrics> = {}): RunningMetrics {
    return { steps_taken: 0, uu_count: 0, sdr: null, utility: -1.0, ...overrides };
}

function pending(step: number, pointId: string): PendingView {
    return {
        point_id: pointId,
        display: { kind: "features", features: [0.1, 0.2] },
        confidence: 0.8,
        predicted_class: "pos",
        step,
        budget: 3,
        classes: ["neg", "pos"],
        metrics: metrics({ steps_taken: step - 1 }),
    };
}

function summary(steps: number, done: boolean): SessionSummary {
    return {
        session: {
            id: "s1",
            dataset: "demo.csv",
            strategy: "fl",
            status: done ? "complete" : "awaiting_label",
            budget: 3,
            steps_taken: steps,
            early_stopped: false,
        },
        metrics: metrics({ steps_taken: steps, uu_count: 1, sdr: 2.0 }),
        steps: [],
        uus: [{ id: "p1", confidence: 0.9, label: "neg" }],
        utility_trajectory: Array.from({ length: steps }, (_, i) => i * 0.5),
        phi_model: { kind: "prior" },
    };
}

interface FakeCall {
    method: string;
    args: unknown[];
}

/** Structural stand-in for UUAuditApi with scripted responses. */
class FakeApi {
    calls: FakeCall[] = [];
    labelQueue: (LabelResult | ApiError)[] = [];
    nextQueue: (PendingView | ApiError)[] = [];
    summaryQueue: SessionSummary[] = [];
    createResponse: CreateSessionResponse | ApiError = {
        session: summary(0, false).session,
        pending: pending(1, "p0"),
    };
    labelDelay: Promise<void> | null = null;

    private take<T>(queue: (T | ApiError)[], what: string): T {
        const item = queue.shift();
        if (item === undefined) throw new Error(`fake ${what} queue empty`);
        if (item instanceof ApiError) throw item;
        return item;
    }

    async createSession(dataset: string, config: unknown): Promise<CreateSessionResponse> {
        this.calls.push({ method: "createSession", args: [dataset, config] });
        if (this.createResponse instanceof ApiError) throw this.createResponse;
        return this.createResponse;
    }

    async label(id: string, pointId: string, label: string): Promise<LabelResult> {
        this.calls.push({ method: "label", args: [id, pointId, label] });
        if (this.labelDelay) await this.labelDelay;
        return this.take(this.labelQueue, "label");
    }

    async next(id: string): Promise<PendingView> {
        this.calls.push({ method: "next", args: [id] });
        return this.take(this.nextQueue, "next");
    }

    async summary(id: string): Promise<SessionSummary> {
        this.calls.push({ method: "summary", args: [id] });
        const s = this.summaryQueue.shift();
        if (!s) throw new Error("fake summary queue empty");
        return s;
    }
}

function controllerWith(api: FakeApi): SessionController {
    return new SessionController(api as unknown as UUAuditApi);
}

describe("SessionController.start", () => {
    it("renders the first pending query from the create response", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 3 });
        expect(ctl.view.phase).toBe("awaiting_label");
        expect(ctl.view.pending?.point_id).toBe("p0");
        expect(ctl.view.sessionId).toBe("s1");
    });

    it("surfaces a server-side rejection as an inline error", async () => {
        const api = new FakeApi();
        api.createResponse = new ApiError(400, "config invalid");
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 0 });
        expect(ctl.view.phase).toBe("error");
        expect(ctl.view.error).toContain("config invalid");
    });

    it("reports a connection failure without creating a session", async () => {
        const api = new FakeApi();
        api.createResponse = new ApiError(0, "fetch failed");
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 3 });
        expect(ctl.view.phase).toBe("error");
        expect(ctl.view.sessionId).toBeNull();
    });
});

describe("SessionController.submitLabel", () => {
    it("updates tallies and advances to the next query", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 3 });
        api.labelQueue.push({
            is_uu: true,
            utility: 0.5,
            metrics: metrics({ steps_taken: 1, uu_count: 1, sdr: 5.0 }),
            done: false,
            next_available: true,
        });
        api.summaryQueue.push(summary(1, false));
        // the server reports the same running metrics on /next
        api.nextQueue.push({
            ...pending(2, "p7"),
            metrics: metrics({ steps_taken: 1, uu_count: 1, sdr: 5.0 }),
        });
        await ctl.submitLabel("neg");
        expect(ctl.view.lastOutcome).toEqual({ pointId: "p0", isUu: true });
        expect(ctl.view.metrics?.uu_count).toBe(1);
        expect(ctl.view.pending?.point_id).toBe("p7");
        expect(ctl.view.uus.length).toBe(1);
    });

    it("completes the session when the server says done", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 3 });
        api.labelQueue.push({
            is_uu: false,
            utility: -1.0,
            metrics: metrics({ steps_taken: 3 }),
            done: true,
            next_available: false,
        });
        api.summaryQueue.push(summary(3, true));
        await ctl.submitLabel("pos");
        expect(ctl.view.phase).toBe("complete");
        expect(ctl.view.pending).toBeNull();
    });

    it("accepts exactly one label per pending query while in flight", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 3 });
        let release!: () => void;
        api.labelDelay = new Promise((resolve) => (release = resolve));
        api.labelQueue.push({
            is_uu: false,
            utility: -1.0,
            metrics: metrics({ steps_taken: 1 }),
            done: false,
            next_available: true,
        });
        api.summaryQueue.push(summary(1, false));
        api.nextQueue.push(pending(2, "p9"));
        const first = ctl.submitLabel("pos");
        const second = ctl.submitLabel("pos"); // double-click: must be ignored
        release();
        await Promise.all([first, second]);
        const labelCalls = api.calls.filter((c) => c.method === "label");
        expect(labelCalls.length).toBe(1);
    });

    it("absorbs a stale-pending 409 by refreshing from the server", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        await ctl.start("demo.csv", { budget: 3 });
        api.labelQueue.push(new ApiError(409, "stale point id"));
        api.summaryQueue.push(summary(1, false));
        api.nextQueue.push(pending(2, "p4"));
        await ctl.submitLabel("neg");
        expect(ctl.view.phase).toBe("awaiting_label");
        expect(ctl.view.pending?.point_id).toBe("p4");
        expect(ctl.view.error).toBeNull();
    });
});

describe("SessionController recovery", () => {
    it("attach() rebuilds the whole view from /summary and /next", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        api.summaryQueue.push(summary(2, false));
        api.nextQueue.push(pending(3, "p2"));
        await ctl.attach("s1");
        expect(ctl.view.phase).toBe("awaiting_label");
        expect(ctl.view.pending?.point_id).toBe("p2");
        expect(ctl.view.utilitySeries.length).toBe(2);
        expect(ctl.view.uus.length).toBe(1);
    });

    it("attach() on a finished session lands in complete", async () => {
        const api = new FakeApi();
        const ctl = controllerWith(api);
        api.summaryQueue.push(summary(3, true));
        api.nextQueue.push(new ApiError(409, "session is complete"));
        await ctl.attach("s1");
        expect(ctl.view.phase).toBe("complete");
    });
});

describe("blinding toggle", () => {
    it("defaults to showing model info and can hide it", () => {
        const ctl = controllerWith(new FakeApi());
        expect(ctl.view.showModelInfo).toBe(true);
        ctl.setShowModelInfo(false);
        expect(ctl.view.showModelInfo).toBe(false);
    });
});
