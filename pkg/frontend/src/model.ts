// Wire types for the /v1 JSON API. Field names mirror the service payloads
// exactly; the console displays these values as-is and never recomputes them.

export type Rating = "Bad" | "Okay" | "Good" | "VeryGood";

export const RATINGS: readonly Rating[] = ["Bad", "Okay", "Good", "VeryGood"];

export const RATING_SCORES: Record<Rating, number> = {
    Bad: 1000,
    Okay: 500,
    Good: 100,
    VeryGood: 1,
};

export type PenaltyTerm = "m1" | "m2" | "m3";

export const PENALTY_TERMS: readonly PenaltyTerm[] = ["m1", "m2", "m3"];

export interface PatientProfile {
    id: string;
    diet_group: string;
    condition_group: string;
    arm: string;
    baseline_weight: number;
    weight_goal: number;
    calorie_goal: number | null;
    min_protein: number | null;
    min_fat: number | null;
    max_fat: number | null;
    constraint_overrides: Record<string, number[]>;
}

export interface DailyRecord {
    date: string;
    net_carb: number | null;
    fat: number | null;
    fiber: number | null;
    protein: number | null;
    intake_calories: number | null;
    activity_calories: number | null;
    steps: number | null;
    glucose: number | null;
    ketone: number | null;
    weight: number | null;
    imputed: string[];
}

export interface Suggestion {
    net_carb: number;
    fat: number;
    fiber: number;
    protein: number;
    intake_calories: number;
    activity_calories: number;
    steps: number;
}

export interface PredictedOutcome {
    glucose: number;
    ketone: number;
    weight: number;
}

export interface Violation {
    variable: string;
    observed: number;
    boundary: string;
    importance: string;
}

export interface ReviewItem {
    id: string;
    patient_id: string;
    date: string;
    last_record: DailyRecord;
    suggestion: Suggestion;
    predicted: PredictedOutcome;
    keto_ratio_last: number | null;
    keto_ratio_suggested: number;
    violations: Violation[];
    penalties_used: number[];
    status: string;
    rating: string | null;
    score: number | null;
    overrides: Record<string, number>;
    assigned_penalties: number[] | null;
    scoring_origin: string | null;
}

export interface MealSelection {
    name: string;
    food_group: string;
    serving: string;
    servings: number;
}

export interface DailyMessage {
    meal_plan: {
        selections: MealSelection[];
        totals: Record<string, number>;
    };
    motivation: { domain: string; text: string };
    step_goal: number;
}

export interface ScorePayload {
    rating: Rating;
    score: number;
    overrides?: Record<string, number>;
}

/** The wire body for a rating submission. The score is spelled out so the
 *  payload itself carries the 1000/500/100/1 mapping the service expects. */
export function buildScorePayload(
    rating: Rating,
    overrides?: Partial<Record<PenaltyTerm, number>>,
): ScorePayload {
    const score = RATING_SCORES[rating];
    if (score === undefined) {
        throw new Error(`unknown rating: ${rating}`);
    }
    const payload: ScorePayload = { rating, score };
    if (overrides) {
        const clean: Record<string, number> = {};
        for (const [term, value] of Object.entries(overrides)) {
            if (!PENALTY_TERMS.includes(term as PenaltyTerm)) {
                throw new Error(`unknown penalty term: ${term}`);
            }
            if (value === undefined) {
                continue;
            }
            if (!Number.isFinite(value) || value < 1 || value > 1000) {
                throw new Error(`override ${term} must be in [1, 1000], got ${value}`);
            }
            clean[term] = value;
        }
        if (Object.keys(clean).length > 0) {
            payload.overrides = clean;
        }
    }
    return payload;
}

/** CSS class for a violation's importance rank. */
export function importanceClass(importance: string): string {
    switch (importance) {
        case "VeryImportant":
            return "very-important";
        case "ModeratelyImportant":
            return "moderately-important";
        case "LowImportance":
            return "low-importance";
        default:
            return "";
    }
}

/** Which grid row holds the value a violation refers to: outcomes live on
 *  the predicted row, the keto ratio on its own row, everything else on the
 *  suggestion row. */
export function violationRow(variable: string): "predicted" | "ratio" | "suggestion" {
    if (variable === "glucose" || variable === "ketone" || variable === "weight") {
        return "predicted";
    }
    if (variable === "keto_ratio") {
        return "ratio";
    }
    return "suggestion";
}
