/* tslint:disable */
/* eslint-disable */

/**
 * Log-mel frames, row-major `[frames, bands]`.
 */
export class MelView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly bands: number;
    readonly frames: number;
    /**
     * Blind SNR estimate of the noisy waveform; NaN when it is too short.
     */
    readonly snr_db: number;
    readonly values: Float64Array;
}

/**
 * EER in percent of explicit score lists.
 */
export function eer(genuine: Float64Array, spoof: Float64Array): number;

/**
 * EER in percent of two unit-variance Gaussian score sets whose means are
 * `separation` apart.
 */
export function gaussian_eer(separation: number, count: number, seed: bigint): number;

/**
 * `points` amplitudes in [-1, 1] interleaved with their `bits`-bit
 * mu-law round trip: `[x0, y0, x1, y1, ...]`.
 */
export function mulaw_curve(bits: number, points: number): Float64Array;

/**
 * A random toy utterance from `seed`, with white noise at `snr_db`.
 */
export function noisy_mel(seed: bigint, phones: number, snr_db: number, bands: number): MelView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_melview_free: (a: number, b: number) => void;
    readonly eer: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly gaussian_eer: (a: number, b: number, c: bigint) => [number, number, number];
    readonly melview_bands: (a: number) => number;
    readonly melview_frames: (a: number) => number;
    readonly melview_snr_db: (a: number) => number;
    readonly melview_values: (a: number) => [number, number];
    readonly mulaw_curve: (a: number, b: number) => [number, number, number, number];
    readonly noisy_mel: (a: bigint, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
