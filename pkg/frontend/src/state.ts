// Console state: a pure reducer over server payloads.
//
// The state mirrors exactly what the masked view exposes — the client never
// receives an unrevealed assignment, so nothing here could display one.

import type { SessionView, StreamDelta, SubjectRow, WealthPoint } from './types';

export type SortKey = 'confidence' | 'id' | 'outcome';

export interface FeedEntry {
    step: number;
    text: string;
}

export interface ConsoleState {
    view: SessionView | null;
    wealthSeries: WealthPoint[];
    feed: FeedEntry[];
    sortKey: SortKey;
    sortAscending: boolean;
}

export function initialState(): ConsoleState {
    return { view: null, wealthSeries: [], feed: [], sortKey: 'confidence', sortAscending: false };
}

export function applyView(state: ConsoleState, view: SessionView): ConsoleState {
    return { ...state, view };
}

export function applyWealthSeries(state: ConsoleState, series: WealthPoint[]): ConsoleState {
    return { ...state, wealthSeries: series };
}

export function applyDelta(state: ConsoleState, delta: StreamDelta): ConsoleState {
    const feed = delta.event === 'hello'
        ? state.feed
        : [...state.feed, { step: delta.step, text: describeDelta(delta) }];
    const series = delta.event === 'reveal'
        ? [...state.wealthSeries,
           { step: delta.step, logM: delta.log_wealth, p: delta.anytime_p }]
        : state.wealthSeries;
    return { ...state, feed, wealthSeries: series };
}

export function describeDelta(delta: StreamDelta): string {
    switch (delta.event) {
        case 'commit':
            return `bet committed on subject ${delta.subject_id}`;
        case 'reveal':
            return `subject ${delta.subject_id} revealed: a=${delta.a}, ` +
                `log-wealth ${delta.log_wealth.toFixed(3)}`;
        case 'model':
            return 'working model replaced';
        case 'extend':
            return 'session extended with new subjects';
        default:
            return delta.event;
    }
}

export function confidence(row: SubjectRow): number {
    return row.q === null ? -1 : Math.abs(row.q - 0.5);
}

/** Subject table order: stable sort, default by model confidence (descending). */
export function sortedSubjects(state: ConsoleState): SubjectRow[] {
    if (!state.view) {
        return [];
    }
    const rows = [...state.view.subjects];
    const direction = state.sortAscending ? 1 : -1;
    const key = state.sortKey;
    // stable: equal keys keep masked-view order
    return rows
        .map((row, index) => ({ row, index }))
        .sort((lhs, rhs) => {
            let cmp = 0;
            if (key === 'confidence') {
                cmp = confidence(lhs.row) - confidence(rhs.row);
            } else if (key === 'outcome') {
                cmp = lhs.row.y - rhs.row.y;
            } else {
                cmp = lhs.row.id - rhs.row.id;
            }
            if (cmp === 0) {
                return lhs.index - rhs.index;
            }
            return direction * cmp;
        })
        .map((entry) => entry.row);
}

export function toggleSort(state: ConsoleState, key: SortKey): ConsoleState {
    if (state.sortKey === key) {
        return { ...state, sortAscending: !state.sortAscending };
    }
    return { ...state, sortKey: key, sortAscending: false };
}

/** Rejection banner payload, or null while the test is still running. */
export function rejectionBanner(state: ConsoleState): { wealth: number; p: number } | null {
    if (!state.view || !state.view.rejected) {
        return null;
    }
    return { wealth: state.view.wealth, p: state.view.anytime_p };
}
