/* tslint:disable */
/* eslint-disable */

/**
 * Result of one readout step on a generated scenario.
 */
export class SqueezeView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly after: Float64Array;
    readonly alpha: Float64Array;
    readonly before: Float64Array;
    /**
     * Classes whose probability went down.
     */
    readonly decreased: number;
    readonly etaPrime: number;
    readonly target: number;
}

/**
 * `‖A‖²_F` of the softmax Jacobian at `logits / temperature`.
 */
export function peakinessAt(logits: Float64Array, temperature: number): number;

/**
 * Chosen-side residual coefficient for `n` gaps spread over `[lo, hi]`.
 *
 * The gap is placed on the policy chosen log-prob with zero reference terms.
 */
export function residualStrength(kind: string, beta: number, lo: number, hi: number, n: number): Float64Array;

/**
 * Softmax of `logits / temperature`.
 */
export function softmaxAt(logits: Float64Array, temperature: number): Float64Array;

/**
 * `kind` is one of flat, mild, multimode, valley_target, peak_target.
 */
export function squeeze(kind: string, vocab: number, eta: number, seed: bigint): SqueezeView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_squeezeview_free: (a: number, b: number) => void;
    readonly peakinessAt: (a: number, b: number, c: number) => [number, number, number];
    readonly residualStrength: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly softmaxAt: (a: number, b: number, c: number) => [number, number, number, number];
    readonly squeeze: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly squeezeview_after: (a: number) => [number, number];
    readonly squeezeview_alpha: (a: number) => [number, number];
    readonly squeezeview_before: (a: number) => [number, number];
    readonly squeezeview_decreased: (a: number) => number;
    readonly squeezeview_etaPrime: (a: number) => number;
    readonly squeezeview_target: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
