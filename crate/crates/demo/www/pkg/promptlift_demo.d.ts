/* tslint:disable */
/* eslint-disable */

/**
 * One synthetic world plus (optionally) a training run in progress.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Greedy action histogram and mean action probabilities of the current
     * policy over the eval templates' warm-start states.
     */
    action_profile(): string;
    /**
     * Attacks one template with the trained policy and, for contrast, runs
     * the random-mutation baseline from the same seed. Both trajectories
     * come back step by step with their r1 scores and evaluation averages.
     */
    attack_template(id: string, seed: number): string;
    /**
     * Runs both arms over the whole eval split for `seeds` matched trials
     * and returns per-seed benchmark averages.
     */
    compare(seeds: number): string;
    /**
     * Builds a fresh synthetic world: `n_train` + `n_eval` easy templates
     * with the given describe-dropout and image noise.
     */
    constructor(seed: number, n_train: number, n_eval: number, dropout: number, sigma: number);
    /**
     * Starts (or restarts) a training run over the train split.
     */
    start_training(seed: number, iterations: number, lr: number, hidden: number): void;
    /**
     * Advances training one iteration. Returns the stats row as JSON, or
     * `{"done":true}` once the configured iterations have run.
     */
    train_step(): string;
    /**
     * Describe + summarize + normalize one template's exemplars.
     */
    warm_start(id: string): string;
    /**
     * Ground truth of every template, tagged train/eval.
     */
    world_info(): string;
}

export function start(): void;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_action_profile: (a: number) => [number, number, number, number];
    readonly demo_attack_template: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_compare: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_start_training: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly demo_train_step: (a: number) => [number, number, number, number];
    readonly demo_warm_start: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_world_info: (a: number) => [number, number, number, number];
    readonly start: () => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
