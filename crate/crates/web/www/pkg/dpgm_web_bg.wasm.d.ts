/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_poissonview_free: (a: number, b: number) => void;
export const compare_mixed: (a: number, b: number, c: bigint) => [number, number, number, number];
export const feature_slice: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
export const poissonview_columns: (a: number) => number;
export const poissonview_e_h1: (a: number) => number;
export const poissonview_e_l2: (a: number) => number;
export const poissonview_error: (a: number) => [number, number];
export const poissonview_rank: (a: number) => number;
export const poissonview_resolution: (a: number) => number;
export const poissonview_rows: (a: number) => number;
export const poissonview_u_rho: (a: number) => [number, number];
export const solve_poisson: (a: number, b: number, c: bigint, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
