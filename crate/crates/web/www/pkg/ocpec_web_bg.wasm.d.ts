/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const gap_at: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const gap_regions: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const solve_benchmark: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
