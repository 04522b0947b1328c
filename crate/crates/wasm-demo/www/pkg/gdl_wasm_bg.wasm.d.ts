/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_squeezeview_free: (a: number, b: number) => void;
export const peakinessAt: (a: number, b: number, c: number) => [number, number, number];
export const residualStrength: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const softmaxAt: (a: number, b: number, c: number) => [number, number, number, number];
export const squeeze: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const squeezeview_after: (a: number) => [number, number];
export const squeezeview_alpha: (a: number) => [number, number];
export const squeezeview_before: (a: number) => [number, number];
export const squeezeview_decreased: (a: number) => number;
export const squeezeview_etaPrime: (a: number) => number;
export const squeezeview_target: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
