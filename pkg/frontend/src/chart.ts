// Wealth chart geometry: pure math from series to SVG coordinates.
//
// Wealth is drawn on the log scale (sessions can reach 1e15) with a
// horizontal line at log(1/alpha); crossing it is the rejection event.

import type { WealthPoint } from './types';

export interface ChartGeometry {
    width: number;
    height: number;
    pad: number;
}

export interface ChartModel {
    /** SVG polyline points for the log-wealth path */
    path: { x: number; y: number }[];
    /** y pixel of the log(1/alpha) rejection threshold */
    thresholdY: number;
    /** whether any point sits on or above the threshold */
    crossed: boolean;
    yMin: number;
    yMax: number;
}

export function buildChart(series: WealthPoint[], alpha: number,
                           geom: ChartGeometry = { width: 640, height: 240, pad: 24 }): ChartModel {
    const threshold = Math.log(1 / alpha);
    const logs = series.map((pt) => pt.logM).filter((v) => Number.isFinite(v));
    const yMin = Math.min(0, ...logs);
    const yMax = Math.max(threshold * 1.1, ...logs);
    const span = yMax - yMin || 1;
    const stepMax = Math.max(1, series.length - 1);

    const toX = (step: number) =>
        geom.pad + (step / stepMax) * (geom.width - 2 * geom.pad);
    const toY = (logM: number) =>
        geom.height - geom.pad - ((logM - yMin) / span) * (geom.height - 2 * geom.pad);

    const floor = yMin - span; // absorbed-at-zero sentinel drawn below the axis
    const path = series.map((pt) => ({
        x: toX(pt.step),
        y: toY(Number.isFinite(pt.logM) ? pt.logM : floor),
    }));
    return {
        path,
        thresholdY: toY(threshold),
        crossed: series.some((pt) => pt.logM >= threshold - 1e-12),
        yMin,
        yMax,
    };
}

export function pathAttribute(model: ChartModel): string {
    return model.path
        .map((pt, i) => `${i === 0 ? 'M' : 'L'}${pt.x.toFixed(2)},${pt.y.toFixed(2)}`)
        .join(' ');
}

/** The monotone anytime p-value readout for the latest step. */
export function currentP(series: WealthPoint[]): number {
    return series.length ? series[series.length - 1].p : 1;
}
