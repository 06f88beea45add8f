/* tslint:disable */
/* eslint-disable */

/**
 * Poisson solve on `h = 2^-level` sampled for a heatmap.
 */
export class PoissonView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `|u - u_ρ|`, same layout as [`PoissonView::u_rho`].
     */
    error(): Float64Array;
    /**
     * Row-major with `y` fastest.
     */
    u_rho(): Float64Array;
    readonly columns: number;
    readonly e_h1: number;
    readonly e_l2: number;
    readonly rank: number;
    readonly resolution: number;
    readonly rows: number;
}

/**
 * JSON array of per-form results.
 */
export function compare_mixed(level: number, dof: number, seed: bigint): string;

export function feature_slice(resnet: boolean, width: number, depth: number, seed: bigint, index: number, derivative: boolean, resolution: number): Float64Array;

export function solve_poisson(level: number, dof: number, seed: bigint, resolution: number): PoissonView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_poissonview_free: (a: number, b: number) => void;
    readonly compare_mixed: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly feature_slice: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
    readonly poissonview_columns: (a: number) => number;
    readonly poissonview_e_h1: (a: number) => number;
    readonly poissonview_e_l2: (a: number) => number;
    readonly poissonview_error: (a: number) => [number, number];
    readonly poissonview_rank: (a: number) => number;
    readonly poissonview_resolution: (a: number) => number;
    readonly poissonview_rows: (a: number) => number;
    readonly poissonview_u_rho: (a: number) => [number, number];
    readonly solve_poisson: (a: number, b: number, c: bigint, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
