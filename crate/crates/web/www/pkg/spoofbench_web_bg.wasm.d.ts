/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_melview_free: (a: number, b: number) => void;
export const eer: (a: number, b: number, c: number, d: number) => [number, number, number];
export const gaussian_eer: (a: number, b: number, c: bigint) => [number, number, number];
export const melview_bands: (a: number) => number;
export const melview_frames: (a: number) => number;
export const melview_snr_db: (a: number) => number;
export const melview_values: (a: number) => [number, number];
export const mulaw_curve: (a: number, b: number) => [number, number, number, number];
export const noisy_mel: (a: bigint, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
