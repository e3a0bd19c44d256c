// Payload types of the session service API.

export interface SubjectRow {
    id: number;
    y: number;
    x: number[];
    revealed: boolean;
    /** null until the commit-then-reveal protocol discloses it */
    a: number | null;
    /** treatment posterior suggested by the working model; null when revealed */
    q: number | null;
    /** legal stake interval served by the backend; absent once revealed */
    bounds?: [number, number];
}

export interface SessionView {
    session_id: string;
    status: 'warmup' | 'betting' | 'bet-committed' | 'rejected' | 'exhausted';
    alpha: number;
    step: number;
    log_wealth: number;
    wealth: number;
    anytime_p: number;
    rejected: boolean;
    randomization_mode: string;
    pending_bet: { subject_id: number; w: number } | null;
    model: ModelConfig;
    subjects: SubjectRow[];
}

export interface ModelConfig {
    base_features?: number[] | null;
    interactions?: boolean;
    extra_terms?: number[][];
    estimator?: 'least-squares' | 'huber-robust';
    huber_c?: number;
}

export interface BetReceipt {
    session_id: string;
    subject_id: number;
    w: number;
    step: number;
    status: string;
}

export interface RevealResult {
    session_id: string;
    subject_id: number;
    a: number;
    w: number;
    factor: number;
    log_wealth: number;
    wealth: number;
    anytime_p: number;
    rejected: boolean;
    status: string;
    suggestions: Record<string, number>;
}

export interface WealthPoint {
    step: number;
    logM: number;
    p: number;
}

export interface StreamDelta {
    event: 'hello' | 'commit' | 'reveal' | 'model' | 'extend';
    session_id: string;
    status: string;
    step: number;
    log_wealth: number;
    anytime_p: number;
    rejected: boolean;
    subject_id?: number;
    a?: number;
}
