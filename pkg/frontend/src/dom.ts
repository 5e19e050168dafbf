// DOM rendering for the session view-model. Pure view code: formats what the
// server reported, never derives new numbers.

import { DisplayPayload, UuEntry } from "./api.js";
import { SessionViewState } from "./model.js";

const IMAGE_SUFFIXES = [".png", ".jpg", ".jpeg", ".gif", ".webp"];

export function fmt(value: number | null | undefined, digits = 3): string {
    if (value === null || value === undefined || Number.isNaN(value)) return "–";
    return value.toFixed(digits);
}

function el<K extends keyof HTMLElementTagNameMap>(
    doc: Document,
    tag: K,
    className?: string,
    text?: string,
): HTMLElementTagNameMap[K] {
    const node = doc.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

export function renderDisplayPayload(doc: Document, display: DisplayPayload): HTMLElement {
    if (display.kind === "uri" && display.uri) {
        const uri = display.uri;
        if (IMAGE_SUFFIXES.some((s) => uri.toLowerCase().endsWith(s))) {
            const wrap = el(doc, "div", "item-content");
            const img = el(doc, "img", "item-image");
            img.src = uri;
            img.alt = "item to judge";
            wrap.appendChild(img);
            return wrap;
        }
        const wrap = el(doc, "div", "item-content");
        const link = el(doc, "a", "item-link", uri);
        link.href = uri;
        link.target = "_blank";
        wrap.appendChild(link);
        return wrap;
    }
    // derived features are not human-judgeable; say so instead of pretending
    const wrap = el(doc, "div", "item-content feature-card");
    wrap.appendChild(
        el(doc, "p", "feature-note",
           "No raw content registered for this point (feature vector shown; not human-judgeable).")
    );
    const row = el(doc, "code", "feature-values");
    row.textContent = (display.features ?? []).map((v) => v.toFixed(3)).join(", ");
    wrap.appendChild(row);
    return wrap;
}

export function renderPendingCard(doc: Document, view: SessionViewState): HTMLElement {
    const card = el(doc, "section", "pending-card");
    const pending = view.pending;
    if (!pending) return card;
    card.appendChild(
        el(doc, "h2", "step-counter", `Query ${pending.step} of ${pending.budget}`)
    );
    card.appendChild(renderDisplayPayload(doc, pending.display));
    if (view.showModelInfo) {
        const info = el(doc, "p", "model-info");
        info.textContent =
            `Classifier says: ${pending.predicted_class} ` +
            `(confidence ${fmt(pending.confidence, 3)})`;
        card.appendChild(info);
    }
    const buttons = el(doc, "div", "label-buttons");
    const busy = view.phase === "submitting";
    for (const cls of pending.classes) {
        const btn = el(doc, "button", "label-button", cls);
        btn.dataset.label = cls;
        btn.disabled = busy;
        buttons.appendChild(btn);
    }
    card.appendChild(buttons);
    if (view.lastOutcome) {
        const badge = el(
            doc,
            "p",
            view.lastOutcome.isUu ? "outcome uu-badge" : "outcome ok-badge",
            view.lastOutcome.isUu
                ? `Unknown unknown found (${view.lastOutcome.pointId})`
                : `Prediction confirmed (${view.lastOutcome.pointId})`,
        );
        card.appendChild(badge);
    }
    return card;
}

export function renderSparkline(doc: Document, series: number[]): SVGElement {
    const svg = doc.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("class", "sparkline");
    svg.setAttribute("viewBox", "0 0 100 28");
    svg.setAttribute("preserveAspectRatio", "none");
    if (series.length > 0) {
        const max = Math.max(...series, 1e-9);
        const pts = series.map((v, i) => {
            const x = series.length === 1 ? 100 : (i / (series.length - 1)) * 100;
            const y = 26 - (v / max) * 24;
            return `${x.toFixed(2)},${y.toFixed(2)}`;
        });
        const line = doc.createElementNS("http://www.w3.org/2000/svg", "polyline");
        line.setAttribute("points", pts.join(" "));
        line.setAttribute("fill", "none");
        line.setAttribute("stroke", "currentColor");
        svg.appendChild(line);
    }
    return svg;
}

export function renderSummaryPanel(doc: Document, view: SessionViewState): HTMLElement {
    const panel = el(doc, "section", "summary-panel");
    const m = view.metrics;
    const tally = el(doc, "dl", "tallies");
    const add = (label: string, value: string, cls: string) => {
        tally.appendChild(el(doc, "dt", undefined, label));
        tally.appendChild(el(doc, "dd", cls, value));
    };
    add("Labeled", m ? `${m.steps_taken} / ${view.budget}` : "–", "tally-steps");
    add("Unknown unknowns", m ? String(m.uu_count) : "–", "tally-uu");
    add("SDR", m ? fmt(m.sdr, 3) : "–", "tally-sdr");
    add("Utility W", m ? fmt(m.utility, 3) : "–", "tally-utility");
    panel.appendChild(tally);
    panel.appendChild(renderSparkline(doc, view.utilitySeries));
    panel.appendChild(renderUuList(doc, view.uus));
    return panel;
}

export function renderUuList(doc: Document, uus: UuEntry[]): HTMLElement {
    const wrap = el(doc, "div", "uu-list");
    wrap.appendChild(el(doc, "h3", undefined, "Discovered unknown unknowns"));
    if (uus.length === 0) {
        wrap.appendChild(el(doc, "p", "uu-empty", "None yet."));
        return wrap;
    }
    const list = el(doc, "ol", "uu-items");
    // server sends these sorted by confidence descending: most overconfident first
    for (const uu of uus) {
        list.appendChild(
            el(doc, "li", "uu-item",
               `${uu.id}: confidence ${fmt(uu.confidence, 3)}, oracle said ${uu.label}`)
        );
    }
    wrap.appendChild(list);
    return wrap;
}

export function renderSession(root: HTMLElement, view: SessionViewState): void {
    const doc = root.ownerDocument;
    root.textContent = "";
    if (view.phase === "error") {
        const banner = el(doc, "div", "error-banner", view.error ?? "request failed");
        const retry = el(doc, "button", "retry-button", "Retry");
        banner.appendChild(retry);
        root.appendChild(banner);
        return;
    }
    if (view.phase === "idle" || view.phase === "starting") {
        root.appendChild(el(doc, "p", "status-line",
                            view.phase === "idle" ? "No session." : "Starting session..."));
        return;
    }
    if (view.phase === "complete") {
        root.appendChild(el(doc, "h2", "done-line", "Session complete"));
        root.appendChild(renderSummaryPanel(doc, view));
        return;
    }
    root.appendChild(renderPendingCard(doc, view));
    root.appendChild(renderSummaryPanel(doc, view));
}
