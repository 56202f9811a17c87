/* tslint:disable */
/* eslint-disable */

/**
 * Synthetic 2-D data and the classifier fitted to it.
 */
export class ClassifierDemo {
    free(): void;
    [Symbol.dispose](): void;
    fit(strategy: string, m: number, iters: number, length_scale: number): Float64Array;
    /**
     * Rows of `[z1, z2]` of the fitted inducing inputs, flattened.
     */
    inducing(): Float64Array;
    constructor(layout: string, seed: number, n_per_class: number, noise: number);
    /**
     * Rows of `[x1, x2, label]`, flattened.
     */
    points(): Float64Array;
    probabilityGrid(nx: number, ny: number, x_min: number, x_max: number, y_min: number, y_max: number): Float64Array;
}

export function bound_curves(xi: number, t_min: number, t_max: number, n: number): Float64Array;

export function kernel_profile(family: string, variance: number, length_scale: number, smoothness: number, r_max: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_classifierdemo_free: (a: number, b: number) => void;
    readonly bound_curves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly classifierdemo_fit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly classifierdemo_inducing: (a: number) => [number, number];
    readonly classifierdemo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly classifierdemo_points: (a: number) => [number, number];
    readonly classifierdemo_probabilityGrid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly kernel_profile: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
