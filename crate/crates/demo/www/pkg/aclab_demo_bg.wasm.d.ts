/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_lab_free: (a: number, b: number) => void;
export const lab_certify: (a: number) => [number, number, number, number];
export const lab_energy: (a: number) => number;
export const lab_new: (a: number, b: number, c: number) => [number, number, number];
export const lab_relax: (a: number) => [number, number, number, number];
export const lab_size: (a: number) => number;
export const lab_slice: (a: number, b: number) => [number, number, number, number];
export const lab_values: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
