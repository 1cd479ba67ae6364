/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Row-major `resolution²` probabilities of class 1, top row first,
     * over `[-EXTENT, EXTENT]²`.
     */
    decisionGrid(resolution: number): Float64Array;
    /**
     * JSON list of per-layer five-number gain summaries on both splits.
     */
    gainBoxes(): string;
    /**
     * Fresh spiral splits (`n` points each) and an untrained network.
     */
    constructor(seed: number, n: number, noise: number);
    /**
     * Flat `[x, y, label, ...]` of the training points.
     */
    points(): Float64Array;
    setLearningRate(lr: number): void;
    /**
     * JSON sweep rows, one fresh training per γ.
     */
    sweep(gammas: Float64Array, epochs: number): string;
    /**
     * Retrains from the same initialisation; returns a JSON summary.
     */
    train(gamma: number, epochs: number): string;
}

export function extent(): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_decisionGrid: (a: number, b: number) => [number, number, number, number];
    readonly demo_gainBoxes: (a: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_points: (a: number) => [number, number];
    readonly demo_setLearningRate: (a: number, b: number) => void;
    readonly demo_sweep: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_train: (a: number, b: number, c: number) => [number, number, number, number];
    readonly extent: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
