/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_classifierdemo_free: (a: number, b: number) => void;
export const bound_curves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const classifierdemo_fit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const classifierdemo_inducing: (a: number) => [number, number];
export const classifierdemo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const classifierdemo_points: (a: number) => [number, number];
export const classifierdemo_probabilityGrid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const kernel_profile: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
