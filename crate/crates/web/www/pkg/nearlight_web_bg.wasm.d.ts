/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_frame_free: (a: number, b: number) => void;
export const __wbg_refinementdemo_free: (a: number, b: number) => void;
export const fit_gamma: (a: number, b: number, c: bigint) => [number, number, number, number];
export const frame_height: (a: number) => number;
export const frame_rgba: (a: number) => [number, number];
export const frame_width: (a: number) => number;
export const refinementdemo_error: (a: number) => [number, number, number];
export const refinementdemo_iterations: (a: number) => number;
export const refinementdemo_new: (a: bigint, b: number, c: number) => [number, number, number];
export const refinementdemo_observed: (a: number, b: number) => [number, number, number];
export const refinementdemo_profile: (a: number) => [number, number];
export const refinementdemo_rendered: (a: number, b: number) => [number, number, number];
export const refinementdemo_step: (a: number) => [number, number, number];
export const refinementdemo_truth_profile: (a: number) => [number, number];
export const refinementdemo_views: (a: number) => number;
export const render_sphere: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
