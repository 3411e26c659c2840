// HTML builders for the review queue and the per-item detail view. All
// functions return markup strings; the DOM wiring lives in app.ts so these
// stay trivially testable.

import {
    RATINGS,
    RATING_SCORES,
    PENALTY_TERMS,
    importanceClass,
    violationRow,
} from "./model.js";
import type { DailyMessage, ReviewItem, Violation } from "./model.js";

export function escapeHtml(text: string): string {
    return text
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;")
        .replace(/'/g, "&#039;");
}

/** Payload values go on screen verbatim; only null becomes an em cell. */
export function show(value: number | string | null | undefined): string {
    if (value === null || value === undefined) {
        return "";
    }
    return escapeHtml(String(value));
}

const GRID_COLUMNS: readonly { key: string; label: string }[] = [
    { key: "net_carb", label: "Net carb (g)" },
    { key: "fat", label: "Fat (g)" },
    { key: "fiber", label: "Fiber (g)" },
    { key: "protein", label: "Protein (g)" },
    { key: "intake_calories", label: "Intake (kcal)" },
    { key: "activity_calories", label: "Activity (kcal)" },
    { key: "steps", label: "Steps" },
    { key: "glucose", label: "Glucose (mg/dL)" },
    { key: "ketone", label: "Ketone (mmol/L)" },
    { key: "weight", label: "Weight (lb)" },
    { key: "keto_ratio", label: "Keto ratio" },
];

type CellClasses = Map<string, string>;

function highlightClasses(violations: Violation[]): CellClasses {
    const classes: CellClasses = new Map();
    for (const violation of violations) {
        const cls = importanceClass(violation.importance);
        if (cls === "") {
            continue;
        }
        const column = violation.variable === "keto_ratio" ? "keto_ratio" : violation.variable;
        classes.set(`${violationRow(violation.variable)}:${column}`, cls);
    }
    return classes;
}

function cell(row: string, column: string, value: string, classes: CellClasses): string {
    const cls = classes.get(`${row}:${column}`);
    const attr = cls ? ` class="${cls}"` : "";
    return `<td data-cell="${row}:${column}"${attr}>${value}</td>`;
}

/** Three-row observation/suggestion/prediction grid with the keto ratios,
 *  violated cells colored by importance rank. */
export function renderReviewGrid(item: ReviewItem): string {
    const classes = highlightClasses(item.violations);
    const record = item.last_record as unknown as Record<string, number | null>;
    const suggestion = item.suggestion as unknown as Record<string, number>;
    const predicted = item.predicted as unknown as Record<string, number>;

    const header = GRID_COLUMNS.map((c) => `<th>${c.label}</th>`).join("");
    const observed = GRID_COLUMNS.map((c) => {
        const value = c.key === "keto_ratio" ? item.keto_ratio_last : record[c.key];
        return cell("observed", c.key, show(value), classes);
    }).join("");
    const suggested = GRID_COLUMNS.map((c) => {
        if (c.key === "keto_ratio") {
            return cell("ratio", c.key, show(item.keto_ratio_suggested), classes);
        }
        if (c.key in suggestion) {
            return cell("suggestion", c.key, show(suggestion[c.key]), classes);
        }
        return cell("suggestion", c.key, "", classes);
    }).join("");
    const outcome = GRID_COLUMNS.map((c) => {
        if (c.key in predicted) {
            return cell("predicted", c.key, show(predicted[c.key]), classes);
        }
        return cell("predicted", c.key, "", classes);
    }).join("");

    return `<table class="review-grid">
  <thead><tr><th></th>${header}</tr></thead>
  <tbody>
    <tr><th>Last observation (${escapeHtml(item.last_record.date)})</th>${observed}</tr>
    <tr><th>AI suggestion</th>${suggested}</tr>
    <tr><th>Predicted outcome</th>${outcome}</tr>
  </tbody>
</table>`;
}

export function renderViolationList(violations: Violation[]): string {
    if (violations.length === 0) {
        return `<p class="no-violations">No boundary violations.</p>`;
    }
    const rows = violations
        .map(
            (v) => `<li class="${importanceClass(v.importance)}">
  <strong>${escapeHtml(v.variable)}</strong> = ${show(v.observed)},
  boundary ${escapeHtml(v.boundary)} (${escapeHtml(v.importance)})</li>`,
        )
        .join("\n");
    return `<ul class="violations">\n${rows}\n</ul>`;
}

/** Four rating options plus optional per-term multiplier overrides. */
export function renderRatingControls(item: ReviewItem): string {
    const pending = item.status === "PendingReview";
    const options = RATINGS.map(
        (r) => `<label class="rating-option">
  <input type="radio" name="rating" value="${r}" ${pending ? "" : "disabled"}>
  ${r} (${RATING_SCORES[r]})</label>`,
    ).join("\n");
    const overrides = PENALTY_TERMS.map(
        (term) => `<label class="override">${term}
  <input type="number" name="override-${term}" min="1" max="1000" step="any"
         placeholder="rating score" ${pending ? "" : "disabled"}></label>`,
    ).join("\n");
    const status = pending
        ? `<button type="submit" class="submit-rating">Submit rating</button>`
        : `<p class="scored-note">Scored ${escapeHtml(item.rating ?? "(auto)")}` +
          ` by ${escapeHtml(item.scoring_origin ?? "unknown")}, status ${escapeHtml(item.status)}.</p>`;
    return `<form class="rating-form" data-item-id="${escapeHtml(item.id)}">
<fieldset class="ratings">${options}</fieldset>
<fieldset class="overrides"><legend>Per-term overrides (optional)</legend>${overrides}</fieldset>
${status}
</form>`;
}

export function renderQueue(items: ReviewItem[]): string {
    if (items.length === 0) {
        return `<p class="empty-queue">Queue is empty.</p>`;
    }
    const rows = items
        .map((item) => {
            const worst = item.violations.length > 0 ? highestRank(item.violations) : "";
            return `<li class="queue-row ${worst}" data-item-id="${escapeHtml(item.id)}">
  <span class="queue-id">${escapeHtml(item.patient_id)} / ${escapeHtml(item.date)}</span>
  <span class="queue-status">${escapeHtml(item.status)}</span>
  <span class="queue-violations">${item.violations.length} violation(s)</span>
  <span class="queue-glucose">predicted glucose ${show(item.predicted.glucose)}</span>
</li>`;
        })
        .join("\n");
    return `<ul class="queue">\n${rows}\n</ul>`;
}

function highestRank(violations: Violation[]): string {
    const order = ["VeryImportant", "ModeratelyImportant", "LowImportance"];
    for (const importance of order) {
        if (violations.some((v) => v.importance === importance)) {
            return importanceClass(importance);
        }
    }
    return "";
}

export function renderMessagePreview(message: DailyMessage): string {
    const meals = message.meal_plan.selections
        .map(
            (s) => `<tr><td>${escapeHtml(s.food_group)}</td>` +
                `<td>${s.servings} of (${escapeHtml(s.serving)}) ${escapeHtml(s.name)}</td></tr>`,
        )
        .join("\n");
    const body = meals || `<tr><td>no meal change</td><td>keep your current meals today</td></tr>`;
    return `<div class="message-preview">
<table class="meal-plan"><thead><tr><th>Food group</th><th>Meal plan example</th></tr></thead>
<tbody>${body}</tbody></table>
<p class="motivation"><em>${escapeHtml(message.motivation.domain)}:</em>
 ${escapeHtml(message.motivation.text)}</p>
<p class="step-goal">Daily step goal: ${show(message.step_goal)}</p>
</div>`;
}
