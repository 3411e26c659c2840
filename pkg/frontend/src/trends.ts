// Monthly trend charts built as inline SVG strings. Aggregation here is
// chart preparation only: plain means of the daily records the service
// returns, one point per service-defined 28-day month.

import type { DailyRecord } from "./model.js";

export const MONTH_DAYS = 28;

export const TREND_FIELDS: readonly { key: keyof DailyRecord; label: string }[] = [
    { key: "steps", label: "Average daily steps" },
    { key: "intake_calories", label: "Intake calories" },
    { key: "net_carb", label: "Net carbohydrate (g)" },
    { key: "fat", label: "Fat (g)" },
    { key: "weight", label: "Weight (lb)" },
    { key: "glucose", label: "Glucose (mg/dL)" },
];

export type MonthlySeries = Record<string, (number | null)[]>;

/** Mean of each charted field over consecutive month-long windows of the
 *  date-sorted record list. Months with no observed values chart as gaps. */
export function monthlyAggregates(records: DailyRecord[], monthDays: number = MONTH_DAYS): MonthlySeries {
    if (monthDays < 1) {
        throw new Error(`monthDays must be positive, got ${monthDays}`);
    }
    const months = Math.ceil(records.length / monthDays);
    const series: MonthlySeries = {};
    for (const field of TREND_FIELDS) {
        const points: (number | null)[] = [];
        for (let month = 0; month < months; month += 1) {
            const window = records.slice(month * monthDays, (month + 1) * monthDays);
            const values = window
                .map((r) => r[field.key])
                .filter((v): v is number => typeof v === "number");
            points.push(values.length > 0 ? values.reduce((a, b) => a + b, 0) / values.length : null);
        }
        series[field.key as string] = points;
    }
    return series;
}

const WIDTH = 320;
const HEIGHT = 180;
const PAD = 36;

function xPos(month: number, months: number): number {
    // months are centered on their slot: month m sits at (m - 0.5) / months
    return PAD + ((month - 0.5) / months) * (WIDTH - 2 * PAD);
}

function yPos(value: number, lo: number, hi: number): number {
    const span = hi - lo || 1;
    return HEIGHT - PAD - ((value - lo) / span) * (HEIGHT - 2 * PAD);
}

function panel(label: string, points: (number | null)[], observationMonths: number): string {
    const months = points.length;
    const observed = points.filter((p): p is number => p !== null);
    const lo = observed.length > 0 ? Math.min(...observed) : 0;
    const hi = observed.length > 0 ? Math.max(...observed) : 1;

    const circles = points
        .map((value, index) =>
            value === null
                ? ""
                : `<circle cx="${xPos(index + 1, months).toFixed(1)}"` +
                  ` cy="${yPos(value, lo, hi).toFixed(1)}" r="3"/>`,
        )
        .filter((c) => c !== "")
        .join("");
    const path = points
        .map((value, index) =>
            value === null
                ? null
                : `${xPos(index + 1, months).toFixed(1)},${yPos(value, lo, hi).toFixed(1)}`,
        )
        .filter((p): p is string => p !== null)
        .join(" ");

    // the feedback phase starts after the observation months (Figure-style
    // red dashed rule between the two phases)
    const ruleX = PAD + (observationMonths / months) * (WIDTH - 2 * PAD);
    const rule = observationMonths < months
        ? `<line class="phase-rule" x1="${ruleX}" x2="${ruleX}" y1="${PAD / 2}" y2="${HEIGHT - PAD / 2}"` +
          ` stroke="red" stroke-dasharray="5,4"/>`
        : "";

    const axis = `<line x1="${PAD}" x2="${WIDTH - PAD}" y1="${HEIGHT - PAD}" y2="${HEIGHT - PAD}" class="axis"/>`;
    const ticks = points
        .map((_, index) =>
            `<text class="tick" x="${xPos(index + 1, months).toFixed(1)}" y="${HEIGHT - PAD + 16}">${index + 1}</text>`,
        )
        .join("");
    const bounds = observed.length > 0
        ? `<text class="bound" x="4" y="${PAD}">${hi.toFixed(1)}</text>` +
          `<text class="bound" x="4" y="${HEIGHT - PAD}">${lo.toFixed(1)}</text>`
        : "";

    return `<figure class="trend-panel">
<figcaption>${label}</figcaption>
<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" aria-label="${label} by month">
${axis}${ticks}${bounds}
<polyline class="trend-line" fill="none" points="${path}"/>
${circles}
${rule}
</svg>
</figure>`;
}

/** One panel per charted field; a red dashed vertical rule separates the
 *  observation months from the feedback months. */
export function renderTrendsSvg(series: MonthlySeries, observationMonths: number = 3): string {
    const panels = TREND_FIELDS.map((field) =>
        panel(field.label, series[field.key as string] ?? [], observationMonths),
    ).join("\n");
    return `<div class="trend-grid">\n${panels}\n</div>`;
}
