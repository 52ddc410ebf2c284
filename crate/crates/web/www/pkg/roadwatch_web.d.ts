/* tslint:disable */
/* eslint-disable */

/**
 * Class names in matrix order.
 */
export function class_names(): string;

/**
 * Ego-vehicle crop window for a `width`×`height` frame:
 * `{x, y, width, height}`.
 */
export function crop_window(width: number, height: number): string;

/**
 * Metrics for a 9×9 count matrix given as JSON rows in [`class_names`]
 * order. Returns `{accuracy, macro_f1, n, per_class: [{class, precision,
 * recall, f1, support}]}`.
 */
export function matrix_metrics(rows_json: string): string;

/**
 * The published full test-set confusion matrix, rows = true class.
 */
export function reference_matrix(): string;

/**
 * Projects `k` Gaussian clusters of `per_cluster` points in `dim`
 * dimensions. Returns `{coords, labels, kl, silhouette}`. Small sets need
 * a learning rate well below the 500 used for full embedding sets.
 */
export function tsne_clusters(k: number, per_cluster: number, dim: number, separation: number, perplexity: number, learning_rate: number, iterations: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly class_names: () => [number, number];
    readonly crop_window: (a: number, b: number) => [number, number, number, number];
    readonly matrix_metrics: (a: number, b: number) => [number, number, number, number];
    readonly reference_matrix: () => [number, number];
    readonly tsne_clusters: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
