/* tslint:disable */
/* eslint-disable */

/**
 * Fano factor against stationary mean over a log-spaced range of loading rates.
 */
export function fanoCurve(gamma: number, beta: number, removed: number, mean_lo: number, mean_hi: number, points: number): string;

/**
 * Mean and Fano factor after an empty start, with the expansion for comparison.
 */
export function loadingTransient(r: number, gamma: number, beta: number, removed: number, relaxations: number): string;

/**
 * Stationary distribution next to the Poisson law with the same mean.
 */
export function steadyDistribution(r: number, gamma: number, beta: number, removed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fanoCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly loadingTransient: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly steadyDistribution: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
