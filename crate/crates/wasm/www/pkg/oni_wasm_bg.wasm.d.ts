/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const convergence_curves: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const group_deltas: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const singular_spectrum: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
