/* tslint:disable */
/* eslint-disable */

export class Lab {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Smallest Dirichlet eigenvalue of the second variation; JSON summary.
     */
    certify(): string;
    energy(): number;
    /**
     * `kind` is one of `flat`, `circle`, `double`, `junction`.
     */
    constructor(kind: string, eps: number);
    /**
     * Flow and Newton to a critical point; JSON summary.
     */
    relax(): string;
    /**
     * Nodes per side.
     */
    size(): number;
    /**
     * Level curves `{u = level}` with curvature data; JSON array.
     */
    slice(level: number): string;
    /**
     * Row-major nodal values; the second coordinate varies fastest.
     */
    values(): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_lab_free: (a: number, b: number) => void;
    readonly lab_certify: (a: number) => [number, number, number, number];
    readonly lab_energy: (a: number) => number;
    readonly lab_new: (a: number, b: number, c: number) => [number, number, number];
    readonly lab_relax: (a: number) => [number, number, number, number];
    readonly lab_size: (a: number) => number;
    readonly lab_slice: (a: number, b: number) => [number, number, number, number];
    readonly lab_values: (a: number) => [number, number];
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
