// Two-phase bet flow: draft -> confirm -> committed -> revealed.
//
// The commit and the reveal are separate explicit actions (no optimistic
// UI): a stake is durably logged by the server before the assignment can
// be disclosed, and the Reveal button only appears after the commit
// round-trips.

import type { SessionApi } from './api';
import type { RevealResult, SubjectRow } from './types';

export type BetPhase = 'idle' | 'drafting' | 'confirming' | 'committed' | 'revealed';

export interface BetFlowState {
    phase: BetPhase;
    subjectId: number | null;
    stake: number;
    bounds: [number, number];
    lastReveal: RevealResult | null;
    error: string | null;
}

export function idleBetFlow(): BetFlowState {
    return { phase: 'idle', subjectId: null, stake: 0, bounds: [-1, 1], lastReveal: null, error: null };
}

export function clampStake(w: number, bounds: [number, number]): number {
    return Math.min(Math.max(w, bounds[0]), bounds[1]);
}

/** Start drafting a bet on an unrevealed subject (slider bounded by server). */
export function startDraft(flow: BetFlowState, subject: SubjectRow): BetFlowState {
    if (flow.phase === 'committed') {
        return { ...flow, error: 'reveal the pending bet first' };
    }
    if (subject.revealed || !subject.bounds) {
        return { ...flow, error: `subject ${subject.id} is already revealed` };
    }
    const suggested = subject.q === null ? 0 : (subject.q > 0.5 ? 0.4 : -0.4);
    return {
        phase: 'drafting',
        subjectId: subject.id,
        stake: clampStake(suggested, subject.bounds),
        bounds: subject.bounds,
        lastReveal: null,
        error: null,
    };
}

export function setStake(flow: BetFlowState, w: number): BetFlowState {
    if (flow.phase !== 'drafting' && flow.phase !== 'confirming') {
        return flow;
    }
    return { ...flow, phase: 'drafting', stake: clampStake(w, flow.bounds) };
}

/** First click: ask for confirmation instead of committing straight away. */
export function requestConfirm(flow: BetFlowState): BetFlowState {
    if (flow.phase !== 'drafting' || flow.subjectId === null) {
        return flow;
    }
    return { ...flow, phase: 'confirming', error: null };
}

export async function commit(flow: BetFlowState, api: SessionApi, sessionId: string):
        Promise<BetFlowState> {
    if (flow.phase !== 'confirming' || flow.subjectId === null) {
        return { ...flow, error: 'confirm the bet before committing' };
    }
    try {
        await api.commitBet(sessionId, flow.subjectId, flow.stake);
        return { ...flow, phase: 'committed', error: null };
    } catch (err) {
        return { ...flow, phase: 'drafting', error: String((err as Error).message) };
    }
}

export async function reveal(flow: BetFlowState, api: SessionApi, sessionId: string):
        Promise<BetFlowState> {
    if (flow.phase !== 'committed') {
        return { ...flow, error: 'no committed bet to reveal' };
    }
    try {
        const result = await api.reveal(sessionId);
        return { ...flow, phase: 'revealed', lastReveal: result, error: null };
    } catch (err) {
        return { ...flow, error: String((err as Error).message) };
    }
}

/** Outcome flash after a reveal: did the stake win, lose, or sit out? */
export function revealFlash(flow: BetFlowState): 'correct' | 'incorrect' | 'neutral' | null {
    if (flow.phase !== 'revealed' || !flow.lastReveal) {
        return null;
    }
    if (flow.lastReveal.factor > 1) {
        return 'correct';
    }
    return flow.lastReveal.factor < 1 ? 'incorrect' : 'neutral';
}
