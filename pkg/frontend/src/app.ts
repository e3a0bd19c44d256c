// DOM wiring for the betting console.
//
// The server is the source of truth: every commit/reveal/model action
// round-trips and the screen re-renders from the returned state (plus the
// WebSocket deltas). Nothing is rendered that the masked view does not
// contain.

import { SessionApi, type WebSocketLike } from './api';
import * as betflow from './betflow';
import { buildChart, currentP, pathAttribute } from './chart';
import * as state from './state';
import type { SortKey } from './state';

import { refitAndDiff } from './workbench';

const api = new SessionApi(window.location.origin, fetch.bind(window),
                           (url) => new WebSocket(url) as unknown as WebSocketLike);

let consoleState = state.initialState();
let flow = betflow.idleBetFlow();
let streamHandle: { close(): void } | null = null;

function el<T extends HTMLElement>(id: string): T {
    return document.getElementById(id) as T;
}

async function refresh(sessionId: string): Promise<void> {
    const view = await api.getSession(sessionId);
    consoleState = state.applyView(consoleState, view);
    consoleState = state.applyWealthSeries(consoleState, await api.wealthSeries(sessionId));
    render();
}

function sessionId(): string {
    return consoleState.view ? consoleState.view.session_id : '';
}

// -- rendering ---------------------------------------------------------------

function render(): void {
    renderStatus();
    renderSubjects();
    renderBetPanel();
    renderChart();
    renderFeed();
}

function renderStatus(): void {
    const view = consoleState.view;
    if (!view) {
        return;
    }
    el('status-line').textContent =
        `session ${view.session_id} · ${view.status} · step ${view.step} · ` +
        `wealth ${view.wealth.toExponential(3)} · anytime p ${view.anytime_p.toPrecision(3)} · ` +
        `${view.randomization_mode}`;
    const banner = state.rejectionBanner(consoleState);
    const bannerEl = el('rejection-banner');
    if (banner) {
        bannerEl.textContent =
            `NULL REJECTED — wealth ${banner.wealth.toFixed(2)} reached 1/alpha; ` +
            `final anytime p = ${banner.p.toPrecision(3)}`;
        bannerEl.style.display = 'block';
    } else {
        bannerEl.style.display = 'none';
    }
}

function renderSubjects(): void {
    const rows = state.sortedSubjects(consoleState);
    const body = el<HTMLTableSectionElement>('subject-rows');
    body.innerHTML = '';
    for (const row of rows) {
        const tr = document.createElement('tr');
        const qBar = row.q === null
            ? ''
            : `<div class="qbar"><div class="qfill" style="width:${(row.q * 100).toFixed(0)}%"></div></div>`;
        tr.innerHTML =
            `<td>${row.id}</td>` +
            `<td>${row.y.toFixed(3)}</td>` +
            `<td>${row.revealed ? `<span class="badge">a=${row.a}</span>` : 'masked'}</td>` +
            `<td>${row.q === null ? '—' : row.q.toFixed(3)} ${qBar}</td>` +
            `<td></td>`;
        if (!row.revealed) {
            const button = document.createElement('button');
            button.textContent = 'select';
            button.onclick = () => {
                flow = betflow.startDraft(flow, row);
                renderBetPanel();
            };
            tr.lastElementChild!.appendChild(button);
        }
        body.appendChild(tr);
    }
}

function renderBetPanel(): void {
    const panel = el('bet-panel');
    const slider = el<HTMLInputElement>('stake-slider');
    const readout = el('stake-readout');
    const confirmBtn = el<HTMLButtonElement>('confirm-btn');
    const revealBtn = el<HTMLButtonElement>('reveal-btn');
    const flash = el('reveal-flash');

    panel.style.display = flow.phase === 'idle' ? 'none' : 'block';
    el('bet-subject').textContent = flow.subjectId === null ? '' : `subject ${flow.subjectId}`;
    slider.min = String(flow.bounds[0]);
    slider.max = String(flow.bounds[1]);
    slider.step = '0.01';
    slider.value = String(flow.stake);
    slider.disabled = flow.phase === 'committed';
    readout.textContent = `stake ${flow.stake.toFixed(2)} in [${flow.bounds[0].toFixed(2)}, ` +
        `${flow.bounds[1].toFixed(2)}]`;
    confirmBtn.textContent = flow.phase === 'confirming' ? 'commit bet (click to confirm)' : 'place bet';
    confirmBtn.disabled = flow.phase === 'committed' || flow.phase === 'idle';
    revealBtn.style.display = flow.phase === 'committed' ? 'inline-block' : 'none';
    el('bet-error').textContent = flow.error ?? '';

    const outcome = betflow.revealFlash(flow);
    flash.className = outcome ?? '';
    flash.textContent =
        outcome === 'correct' ? 'correct guess — wealth up' :
        outcome === 'incorrect' ? 'incorrect guess — wealth down' :
        outcome === 'neutral' ? 'zero stake — wealth unchanged' : '';
}

function renderChart(): void {
    const view = consoleState.view;
    if (!view) {
        return;
    }
    const model = buildChart(consoleState.wealthSeries, view.alpha);
    el('wealth-path').setAttribute('d', pathAttribute(model));
    const line = el('threshold-line');
    line.setAttribute('y1', String(model.thresholdY));
    line.setAttribute('y2', String(model.thresholdY));
    line.setAttribute('class', model.crossed ? 'threshold crossed' : 'threshold');
    el('p-readout').textContent = `anytime p = ${currentP(consoleState.wealthSeries).toPrecision(3)}`;
}

function renderFeed(): void {
    const feed = el('event-feed');
    feed.innerHTML = consoleState.feed
        .slice(-12)
        .map((entry) => `<li>step ${entry.step}: ${entry.text}</li>`)
        .join('');
}

// -- actions -----------------------------------------------------------------

async function onCreate(): Promise<void> {
    const csv = el<HTMLTextAreaElement>('csv-input').value;
    const alpha = Number(el<HTMLInputElement>('alpha-input').value);
    const gamma = Number(el<HTMLInputElement>('gamma-input').value);
    try {
        const view = await api.createSession(csv, alpha, gamma);
        consoleState = state.applyView(state.initialState(), view);
        consoleState = state.applyWealthSeries(
            consoleState, await api.wealthSeries(view.session_id));
        streamHandle?.close();
        streamHandle = api.stream(view.session_id, async (delta) => {
            consoleState = state.applyDelta(consoleState, delta);
            if (delta.event === 'reveal' || delta.event === 'model' || delta.event === 'extend') {
                consoleState = state.applyView(consoleState, await api.getSession(delta.session_id));
            }
            render();
        });
        window.location.hash = view.session_id;
        render();
    } catch (err) {
        el('create-error').textContent = String((err as Error).message);
    }
}

async function onConfirm(): Promise<void> {
    if (flow.phase === 'drafting') {
        flow = betflow.requestConfirm(flow);
    } else if (flow.phase === 'confirming') {
        flow = await betflow.commit(flow, api, sessionId());
    }
    renderBetPanel();
}

async function onReveal(): Promise<void> {
    flow = await betflow.reveal(flow, api, sessionId());
    await refresh(sessionId());
    renderBetPanel();
}

async function onRefit(): Promise<void> {
    const view = consoleState.view;
    if (!view) {
        return;
    }
    const estimator = el<HTMLSelectElement>('estimator-select').value as
        'least-squares' | 'huber-robust';
    const quadratic = el<HTMLInputElement>('quadratic-check').checked;
    const model = {
        estimator,
        interactions: true,
        extra_terms: quadratic ? [[2, 2]] : [],
    };
    const result = await refitAndDiff(api, sessionId(), view, model);
    el('workbench-error').textContent = result.error ?? '';
    el('workbench-deltas').innerHTML = result.deltas
        .slice(0, 8)
        .map((d) => `<li>subject ${d.id}: ${d.before?.toFixed(3) ?? '—'} → ` +
                    `${d.after.toFixed(3)} (${d.change >= 0 ? '+' : ''}${d.change.toFixed(3)})</li>`)
        .join('');
    if (!result.error) {
        await refresh(sessionId());
    }
}

export function boot(): void {
    el('create-btn').onclick = () => void onCreate();
    el('confirm-btn').onclick = () => void onConfirm();
    el('reveal-btn').onclick = () => void onReveal();
    el('refit-btn').onclick = () => void onRefit();
    el<HTMLInputElement>('stake-slider').oninput = (event) => {
        flow = betflow.setStake(flow, Number((event.target as HTMLInputElement).value));
        renderBetPanel();
    };
    for (const key of ['confidence', 'id', 'outcome'] as SortKey[]) {
        el(`sort-${key}`).onclick = () => {
            consoleState = state.toggleSort(consoleState, key);
            renderSubjects();
        };
    }
    // refresh mid-session: the hash carries the session id and the server
    // restores the exact state
    const existing = window.location.hash.replace('#', '');
    if (existing) {
        void refresh(existing).then(() => {
            streamHandle = api.stream(existing, async (delta) => {
                consoleState = state.applyDelta(consoleState, delta);
                render();
            });
        });
    }
}

boot();
