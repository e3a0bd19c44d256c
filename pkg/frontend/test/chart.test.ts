import { describe, expect, it } from 'vitest';

import { buildChart, currentP, pathAttribute } from '../src/chart';
import type { WealthPoint } from '../src/types';

function series(logs: number[]): WealthPoint[] {
    let best = 0;
    return logs.map((logM, step) => {
        best = Math.max(best, logM);
        return { step, logM, p: Math.min(1, Math.exp(-best)) };
    });
}

describe('wealth chart', () => {
    it('zero bets draw a flat line at log-wealth zero', () => {
        const model = buildChart(series([0, 0, 0, 0]), 0.05);
        const ys = new Set(model.path.map((pt) => pt.y.toFixed(6)));
        expect(ys.size).toBe(1);
        expect(model.crossed).toBe(false);
    });

    it('threshold line sits at log(1/alpha) and crossing is flagged', () => {
        const below = buildChart(series([0, 1, 2.5]), 0.05);
        expect(below.crossed).toBe(false);
        const above = buildChart(series([0, 1, 2.5, Math.log(21)]), 0.05);
        expect(above.crossed).toBe(true);
        // threshold maps to the same y as a path point of equal value
        const boundary = buildChart(series([Math.log(20)]), 0.05);
        expect(boundary.path[0].y).toBeCloseTo(boundary.thresholdY, 6);
    });

    it('x spacing is uniform in steps and the svg path is well formed', () => {
        const model = buildChart(series([0, 0.3, 0.7, 1.1]), 0.05);
        const xs = model.path.map((pt) => pt.x);
        const gaps = xs.slice(1).map((x, i) => x - xs[i]);
        for (const gap of gaps) {
            expect(gap).toBeCloseTo(gaps[0], 6);
        }
        expect(pathAttribute(model)).toMatch(/^M[\d.]+,[\d.]+( L[\d.]+,[\d.]+)+$/);
    });

    it('the anytime p readout is the latest running minimum and is monotone', () => {
        const pts = series([0, 0.34, 0.1, 1.2]);
        expect(currentP(pts)).toBeCloseTo(Math.exp(-1.2));
        const ps = pts.map((pt) => pt.p);
        for (let i = 1; i < ps.length; i += 1) {
            expect(ps[i]).toBeLessThanOrEqual(ps[i - 1] + 1e-12);
        }
    });

    it('an absorbed (minus infinity) wealth still yields finite geometry', () => {
        const pts: WealthPoint[] = [
            { step: 0, logM: 0, p: 1 },
            { step: 1, logM: Number.NEGATIVE_INFINITY, p: 1 },
        ];
        const model = buildChart(pts, 0.05);
        for (const pt of model.path) {
            expect(Number.isFinite(pt.y)).toBe(true);
        }
    });
});
