// Model workbench: swap the working model mid-test and compare suggestions.
//
// Changing the model is always legal — it sees only the filtration — and
// never touches the wealth path; it only reorders future bets.

import type { SessionApi } from './api';
import type { ModelConfig, SessionView } from './types';

export interface WorkbenchResult {
    model: ModelConfig;
    /** per-subject old suggestion, new suggestion, and delta */
    deltas: { id: number; before: number | null; after: number; change: number }[];
    error: string | null;
}

export function quadraticTermFor(column: number): ModelConfig {
    return { estimator: 'least-squares', interactions: true, extra_terms: [[column, 2]] };
}

export async function refitAndDiff(
    api: SessionApi,
    sessionId: string,
    view: SessionView,
    model: ModelConfig,
): Promise<WorkbenchResult> {
    const before = new Map<number, number | null>();
    for (const row of view.subjects) {
        if (!row.revealed) {
            before.set(row.id, row.q);
        }
    }
    try {
        const result = await api.refitModel(sessionId, model);
        const deltas = Object.entries(result.suggestions).map(([id, after]) => {
            const prior = before.get(Number(id)) ?? null;
            return {
                id: Number(id),
                before: prior,
                after,
                change: prior === null ? 0 : after - prior,
            };
        });
        deltas.sort((lhs, rhs) => Math.abs(rhs.change) - Math.abs(lhs.change));
        return { model: result.model, deltas, error: null };
    } catch (err) {
        // server keeps the previous fit; surface the message inline
        return { model: view.model, deltas: [], error: String((err as Error).message) };
    }
}
