// Bootstrap: dataset picker + session panel wiring.

import { UUAuditApi } from "./api.js";
import { renderSession } from "./dom.js";
import { SessionController } from "./model.js";

function byId<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
}

async function bootstrap(): Promise<void> {
    const api = new UUAuditApi("");
    const sessionRoot = byId<HTMLElement>("session");
    const controller = new SessionController(api, (view) => {
        renderSession(sessionRoot, view);
    });

    sessionRoot.addEventListener("click", (event) => {
        const target = event.target as HTMLElement;
        if (target.matches("button.label-button")) {
            void controller.submitLabel(target.dataset.label ?? "");
        } else if (target.matches("button.retry-button")) {
            void controller.refresh();
        }
    });

    const datasetSelect = byId<HTMLSelectElement>("dataset");
    const budgetInput = byId<HTMLInputElement>("budget");
    const strategySelect = byId<HTMLSelectElement>("strategy");
    const blindToggle = byId<HTMLInputElement>("blind");
    const startButton = byId<HTMLButtonElement>("start");
    const formError = byId<HTMLElement>("form-error");

    try {
        const datasets = await api.listDatasets();
        for (const ds of datasets) {
            const opt = document.createElement("option");
            opt.value = ds.name;
            opt.textContent = `${ds.name} (n=${ds.n}, p=${ds.p})`;
            datasetSelect.appendChild(opt);
        }
    } catch (err) {
        formError.textContent = `Service unreachable: ${(err as Error).message}`;
        return;
    }

    blindToggle.addEventListener("change", () => {
        controller.setShowModelInfo(!blindToggle.checked);
    });

    startButton.addEventListener("click", async () => {
        formError.textContent = "";
        const budget = Number(budgetInput.value);
        try {
            await controller.start(datasetSelect.value, {
                budget,
                strategy: strategySelect.value as "fl" | "mu" | "cov" | "bandit",
            });
            if (controller.view.phase === "error") {
                formError.textContent = controller.view.error ?? "failed to start";
            }
        } catch (err) {
            formError.textContent = (err as Error).message;
        }
    });
}

void bootstrap();
