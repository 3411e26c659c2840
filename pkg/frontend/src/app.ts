// Single-page wiring: queue polling, item detail, rating submission, and
// per-patient trend charts. Served statically by the backend at /console.

import { ApiClient, ApiError } from "./api.js";
import { buildScorePayload, RATINGS } from "./model.js";
import type { PenaltyTerm, Rating, ReviewItem } from "./model.js";
import {
    renderMessagePreview,
    renderQueue,
    renderRatingControls,
    renderReviewGrid,
    renderViolationList,
    escapeHtml,
} from "./review.js";
import { monthlyAggregates, renderTrendsSvg } from "./trends.js";

const POLL_MS = 5000;

const api = new ApiClient();

let selectedItemId: string | null = null;

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (node === null) {
        throw new Error(`missing element #${id}`);
    }
    return node as T;
}

function banner(text: string, kind: "info" | "error" = "info"): void {
    const box = el<HTMLDivElement>("banner");
    box.textContent = text;
    box.className = text === "" ? "banner hidden" : `banner ${kind}`;
}

async function refreshQueue(): Promise<void> {
    try {
        const items = await api.getQueue("PendingReview");
        el<HTMLDivElement>("queue-view").innerHTML = renderQueue(items);
        for (const row of document.querySelectorAll<HTMLLIElement>(".queue-row")) {
            row.addEventListener("click", () => {
                void openItem(row.dataset.itemId ?? "");
            });
        }
    } catch (err) {
        banner(err instanceof Error ? err.message : String(err), "error");
    }
}

async function openItem(itemId: string): Promise<void> {
    if (itemId === "") {
        return;
    }
    selectedItemId = itemId;
    try {
        const item = await api.getItem(itemId);
        renderDetail(item);
        if (item.status === "Dispatched" || item.status === "Scored") {
            await showMessagePreview(item);
        }
    } catch (err) {
        banner(err instanceof Error ? err.message : String(err), "error");
    }
}

function renderDetail(item: ReviewItem): void {
    const detail = el<HTMLDivElement>("detail-view");
    detail.innerHTML = `<h2>${escapeHtml(item.id)}</h2>
${renderReviewGrid(item)}
${renderViolationList(item.violations)}
<p class="penalties">Penalties used this run: [${item.penalties_used.join(", ")}]</p>
${renderRatingControls(item)}
<div id="message-preview"></div>`;
    const form = detail.querySelector<HTMLFormElement>(".rating-form");
    if (form !== null) {
        form.addEventListener("submit", (event) => {
            event.preventDefault();
            void submitRating(form, item);
        });
    }
}

function readOverrides(form: HTMLFormElement): Partial<Record<PenaltyTerm, number>> {
    const overrides: Partial<Record<PenaltyTerm, number>> = {};
    for (const term of ["m1", "m2", "m3"] as const) {
        const input = form.querySelector<HTMLInputElement>(`input[name="override-${term}"]`);
        if (input !== null && input.value.trim() !== "") {
            overrides[term] = Number(input.value);
        }
    }
    return overrides;
}

async function submitRating(form: HTMLFormElement, item: ReviewItem): Promise<void> {
    const chosen = form.querySelector<HTMLInputElement>('input[name="rating"]:checked');
    if (chosen === null) {
        banner("Pick one of the four ratings first.", "error");
        return;
    }
    if (!(RATINGS as readonly string[]).includes(chosen.value)) {
        banner(`Unknown rating ${chosen.value}.`, "error");
        return;
    }
    try {
        const payload = buildScorePayload(chosen.value as Rating, readOverrides(form));
        const updated = await api.scoreItem(item.id, payload);
        banner(`Scored ${updated.id}: ${chosen.value}.`);
        renderDetail(updated);
        await showMessagePreview(updated);
    } catch (err) {
        if (err instanceof ApiError && err.isConflict) {
            banner(`Already scored elsewhere: ${err.message}`, "error");
        } else {
            banner(err instanceof Error ? err.message : String(err), "error");
        }
    }
    await refreshQueue();
}

async function showMessagePreview(item: ReviewItem): Promise<void> {
    const target = document.getElementById("message-preview");
    if (target === null) {
        return;
    }
    try {
        const message = await api.getMessage(item.patient_id, item.date);
        target.innerHTML = `<h3>Outgoing daily message</h3>${renderMessagePreview(message)}`;
    } catch (err) {
        // a 412 here just means the message is not composed yet
        target.innerHTML = `<p class="message-pending">${escapeHtml(
            err instanceof Error ? err.message : String(err),
        )}</p>`;
    }
}

async function loadPatients(): Promise<void> {
    const select = el<HTMLSelectElement>("patient-select");
    const patients = await api.listPatients();
    select.innerHTML = patients
        .map((p) => `<option value="${escapeHtml(p.id)}">${escapeHtml(p.id)} (${escapeHtml(p.diet_group)}, ${escapeHtml(p.arm)})</option>`)
        .join("");
    select.addEventListener("change", () => {
        void drawTrends(select.value);
    });
    if (patients.length > 0) {
        await drawTrends(patients[0].id);
    }
}

async function drawTrends(patientId: string): Promise<void> {
    try {
        const records = await api.getRecords(patientId);
        const series = monthlyAggregates(records);
        el<HTMLDivElement>("trends-view").innerHTML = renderTrendsSvg(series);
    } catch (err) {
        banner(err instanceof Error ? err.message : String(err), "error");
    }
}

function showTab(tab: "queue" | "trends"): void {
    el<HTMLElement>("queue-pane").hidden = tab !== "queue";
    el<HTMLElement>("trends-pane").hidden = tab !== "trends";
    el<HTMLButtonElement>("nav-queue").classList.toggle("active", tab === "queue");
    el<HTMLButtonElement>("nav-trends").classList.toggle("active", tab === "trends");
}

function init(): void {
    el<HTMLButtonElement>("nav-queue").addEventListener("click", () => showTab("queue"));
    el<HTMLButtonElement>("nav-trends").addEventListener("click", () => showTab("trends"));
    showTab("queue");
    void refreshQueue();
    void loadPatients();
    setInterval(() => {
        void refreshQueue();
        if (selectedItemId !== null) {
            void openItem(selectedItemId);
        }
    }, POLL_MS);
}

document.addEventListener("DOMContentLoaded", init);
