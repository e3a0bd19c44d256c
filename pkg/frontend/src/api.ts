// Typed client for the betting session service (HTTP + WebSocket).
//
// The fetch implementation and WebSocket constructor are injectable so the
// client runs identically in the browser and under node tests.

import type {
    BetReceipt,
    ModelConfig,
    RevealResult,
    SessionView,
    StreamDelta,
    WealthPoint,
} from './types';

export type FetchLike = (url: string, init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
}) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export interface WebSocketLike {
    onmessage: ((event: { data: unknown }) => void) | null;
    onclose: (() => void) | null;
    close(): void;
}

export class ApiError extends Error {
    constructor(public status: number, detail: string) {
        super(detail);
    }
}

export class SessionApi {
    constructor(
        private baseUrl: string,
        private fetchImpl: FetchLike = fetch as unknown as FetchLike,
        private wsFactory?: (url: string) => WebSocketLike,
    ) {}

    private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
        const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
            method,
            headers: { 'content-type': 'application/json' },
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        const payload = (await resp.json()) as Record<string, unknown>;
        if (!resp.ok) {
            throw new ApiError(resp.status, String(payload.detail ?? resp.status));
        }
        return payload as T;
    }

    createSession(csv: string, alpha: number, gamma: number,
                  model?: ModelConfig, seed?: number): Promise<SessionView> {
        return this.request<SessionView>('POST', '/sessions', { csv, alpha, gamma, model, seed });
    }

    getSession(sessionId: string): Promise<SessionView> {
        return this.request<SessionView>('GET', `/sessions/${sessionId}`);
    }

    commitBet(sessionId: string, subjectId: number, w: number): Promise<BetReceipt> {
        return this.request<BetReceipt>('POST', `/sessions/${sessionId}/bets`,
                                        { subject_id: subjectId, w });
    }

    reveal(sessionId: string): Promise<RevealResult> {
        return this.request<RevealResult>('POST', `/sessions/${sessionId}/reveal`);
    }

    refitModel(sessionId: string, model: ModelConfig):
            Promise<{ model: ModelConfig; suggestions: Record<string, number> }> {
        return this.request('POST', `/sessions/${sessionId}/model`, { model });
    }

    extend(sessionId: string, csv: string): Promise<SessionView> {
        return this.request<SessionView>('POST', `/sessions/${sessionId}/extend`, { csv });
    }

    wealthSeries(sessionId: string): Promise<WealthPoint[]> {
        return this.request<WealthPoint[]>('GET', `/sessions/${sessionId}/wealth`);
    }

    /** Subscribe to state deltas; returns a handle that closes the socket. */
    stream(sessionId: string, onDelta: (delta: StreamDelta) => void): { close(): void } {
        if (!this.wsFactory) {
            throw new Error('no WebSocket factory configured');
        }
        const wsUrl = this.baseUrl.replace(/^http/, 'ws');
        const socket = this.wsFactory(`${wsUrl}/sessions/${sessionId}/stream`);
        socket.onmessage = (event) => {
            onDelta(JSON.parse(String(event.data)) as StreamDelta);
        };
        return { close: () => socket.close() };
    }
}
