/* tslint:disable */
/* eslint-disable */

/**
 * Grayscale image as RGBA bytes for a canvas `ImageData`.
 */
export class Frame {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    rgba(): Uint8Array;
    readonly height: number;
    readonly width: number;
}

/**
 * Interactive refinement of a Laplacian-smoothed relief plane.
 */
export class RefinementDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Mean distance (mm) from the current mesh to the true surface.
     */
    error(): number;
    iterations(): number;
    constructor(seed: bigint, lambda1: number, lambda2: number);
    /**
     * The captured image of `view`.
     */
    observed(view: number): Frame;
    /**
     * Height of the current surface along the middle row of the grid, for
     * plotting against `truth_profile`.
     */
    profile(): Float64Array;
    /**
     * The current mesh rendered into `view`.
     */
    rendered(view: number): Frame;
    /**
     * One outer iteration; returns false once converged.
     */
    step(): boolean;
    truth_profile(): Float64Array;
    views(): number;
}

/**
 * Renders a sphere with `gamma` and Gaussian noise, then recovers gamma
 * with RANSAC. Returns `[gamma, inlier_ratio, samples]`.
 */
export function fit_gamma(gamma: number, noise: number, seed: bigint): Float64Array;

/**
 * A 100 mm sphere seen from `distance` mm with the light displaced by
 * (`light_x`, `light_y`) mm from the camera.
 */
export function render_sphere(gamma: number, albedo: number, distance: number, light_x: number, light_y: number): Frame;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_frame_free: (a: number, b: number) => void;
    readonly __wbg_refinementdemo_free: (a: number, b: number) => void;
    readonly fit_gamma: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly frame_height: (a: number) => number;
    readonly frame_rgba: (a: number) => [number, number];
    readonly frame_width: (a: number) => number;
    readonly refinementdemo_error: (a: number) => [number, number, number];
    readonly refinementdemo_iterations: (a: number) => number;
    readonly refinementdemo_new: (a: bigint, b: number, c: number) => [number, number, number];
    readonly refinementdemo_observed: (a: number, b: number) => [number, number, number];
    readonly refinementdemo_profile: (a: number) => [number, number];
    readonly refinementdemo_rendered: (a: number, b: number) => [number, number, number];
    readonly refinementdemo_step: (a: number) => [number, number, number];
    readonly refinementdemo_truth_profile: (a: number) => [number, number];
    readonly refinementdemo_views: (a: number) => number;
    readonly render_sphere: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
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
