//! wasm-bindgen surface for the browser demo.
//!
//! The whole pipeline is deterministic, dependency-free CPU code, so it runs
//! unchanged in the browser against the simulator backends. The page drives
//! three operations: inspect a warm start, watch training move the reward
//! curve, and attack templates head-to-head against the random baseline.
//! Everything crosses the JS boundary as JSON strings.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use promptlift_core::dataset::{
    gen_synth_dataset, stratified_split, DatasetManifest, DatasetSplit,
};
use promptlift_core::environment::{attack, Env, EnvConfig, PromptAssets};
use promptlift_core::evalbench::{evaluate_template, mean_scores, random_attack, Domain};
use promptlift_core::gateway::{Gateway, UsageMeter};
use promptlift_core::policy::{select_action, SelectionMode, ACTION_COUNT};
use promptlift_core::ppo::{NetConfig, PpoConfig, Trainer};
use promptlift_core::rng::Rng;
use promptlift_core::simworld::{SimConfig, SimWorld};
use promptlift_core::template::PromptTemplate;

const EMBED_DIM: usize = 128;

fn err_to_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(err_to_js)
}

#[wasm_bindgen(start)]
pub fn start() {
    console_error_panic_hook::set_once();
}

#[derive(Serialize)]
struct TemplateInfo {
    id: String,
    modifiers: Vec<String>,
    supplement: Vec<String>,
    subjects: Vec<String>,
    split: &'static str,
}

#[derive(Serialize)]
struct WarmStartView {
    template_id: String,
    truth_body: String,
    fragments: Vec<FragmentView>,
    summary: FragmentView,
    initial_body: String,
    initial_r1: f64,
    truth_r1: f64,
}

#[derive(Serialize)]
struct FragmentView {
    subject: String,
    modifiers: Vec<String>,
    supplement: Vec<String>,
}

#[derive(Serialize)]
struct StepView {
    step: usize,
    action: Option<usize>,
    r1: f64,
    body: String,
}

#[derive(Serialize)]
struct AttackView {
    template_id: String,
    truth_body: String,
    policy: Vec<StepView>,
    policy_best: StepView,
    random: Vec<StepView>,
    random_best: StepView,
    policy_eval_average: f64,
    random_eval_average: f64,
}

#[derive(Serialize)]
struct CompareSeedView {
    seed: u64,
    policy: f64,
    random: f64,
}

#[derive(Serialize)]
struct ActionProfile {
    greedy_histogram: [usize; ACTION_COUNT],
    mean_probs: [f64; ACTION_COUNT],
}

/// One synthetic world plus (optionally) a training run in progress.
#[wasm_bindgen]
pub struct Demo {
    manifest: DatasetManifest,
    split: DatasetSplit,
    gateway: Arc<Gateway>,
    assets: Arc<PromptAssets>,
    env_cfg: EnvConfig,
    trainer: Option<Trainer>,
    train_iterations: usize,
}

#[wasm_bindgen]
impl Demo {
    /// Builds a fresh synthetic world: `n_train` + `n_eval` easy templates
    /// with the given describe-dropout and image noise.
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        n_train: u32,
        n_eval: u32,
        dropout: f64,
        sigma: f64,
    ) -> Result<Demo, JsValue> {
        let manifest = gen_synth_dataset(u64::from(seed), (n_train + n_eval) as usize, 0)
            .map_err(err_to_js)?;
        let split =
            stratified_split(&manifest, n_train as usize, 0, u64::from(seed)).map_err(err_to_js)?;
        let sim = SimConfig {
            embed_dim: EMBED_DIM,
            dropout_easy: dropout,
            sigma_easy: sigma,
            sigma_gen: sigma,
            ..SimConfig::default()
        };
        let world = Arc::new(SimWorld::from_manifest(sim, &manifest).map_err(err_to_js)?);
        let gateway = Arc::new(SimWorld::bind_gateway(
            &world,
            UsageMeter::with_default_costs(),
        ));
        Ok(Demo {
            manifest,
            split,
            gateway,
            assets: Arc::new(PromptAssets::default()),
            env_cfg: EnvConfig::default(),
            trainer: None,
            train_iterations: 0,
        })
    }

    /// Ground truth of every template, tagged train/eval.
    pub fn world_info(&self) -> Result<String, JsValue> {
        let world_view: Vec<TemplateInfo> = self
            .manifest
            .records
            .iter()
            .map(|r| {
                let in_train = self.split.train_ids.contains(&r.id);
                let tokens: Vec<String> = promptlift_core::simworld::tokenize(&r.template)
                    .into_iter()
                    .filter(|t| t != "subject")
                    .collect();
                // Modifier/supplement split is cosmetic here; show the body tokens.
                TemplateInfo {
                    id: r.id.clone(),
                    modifiers: tokens,
                    supplement: vec![],
                    subjects: r.exemplars.iter().map(|e| e.subject.clone()).collect(),
                    split: if in_train { "train" } else { "eval" },
                }
            })
            .collect();
        to_json(&world_view)
    }

    fn env_for(&self, id: &str) -> Result<Env, JsValue> {
        let record = self
            .manifest
            .record(id)
            .ok_or_else(|| err_to_js(format!("unknown template {id}")))?;
        Ok(Env::new(
            record.clone(),
            self.gateway.clone(),
            self.assets.clone(),
            self.env_cfg.clone(),
        ))
    }

    /// Describe + summarize + normalize one template's exemplars.
    pub fn warm_start(&self, id: &str) -> Result<String, JsValue> {
        let env = self.env_for(id)?;
        let record = env.record().clone();
        let state = env.warm_start(&mut Rng::seed(0)).map_err(err_to_js)?;
        let as_view = |f: &promptlift_core::template::FragmentedDescription| FragmentView {
            subject: f.subject.clone(),
            modifiers: f.modifiers.clone(),
            supplement: f.supplement.clone(),
        };
        let truth =
            PromptTemplate::new(record.template.clone(), vec![], vec![]).map_err(err_to_js)?;
        let view = WarmStartView {
            template_id: record.id.clone(),
            truth_body: record.template.clone(),
            fragments: state.fragment_pool.iter().map(as_view).collect(),
            summary: as_view(&state.current),
            initial_body: state.current_template.body().to_string(),
            initial_r1: env.score_r1(&state.current_template).map_err(err_to_js)?,
            truth_r1: env.score_r1(&truth).map_err(err_to_js)?,
        };
        to_json(&view)
    }

    /// Starts (or restarts) a training run over the train split.
    pub fn start_training(
        &mut self,
        seed: u32,
        iterations: u32,
        lr: f64,
        hidden: u32,
    ) -> Result<(), JsValue> {
        let envs: Vec<Env> = self
            .split
            .train_ids
            .iter()
            .map(|id| self.env_for(id))
            .collect::<Result<_, _>>()?;
        let config = PpoConfig {
            batch_size: self.split.train_ids.len().max(1),
            updates_per_batch: 32,
            train_iterations: iterations as usize,
            lr,
            gamma: 0.5,
            include_immediate_reward: true,
            value_loss_weight: 1.0,
            entropy_coef: 0.01,
            ..PpoConfig::default()
        };
        self.train_iterations = iterations as usize;
        self.trainer = Some(
            Trainer::new(
                envs,
                self.gateway.clone(),
                &config,
                &NetConfig {
                    hidden: hidden as usize,
                },
                u64::from(seed),
            )
            .map_err(err_to_js)?,
        );
        Ok(())
    }

    /// Advances training one iteration. Returns the stats row as JSON, or
    /// `{"done":true}` once the configured iterations have run.
    pub fn train_step(&mut self) -> Result<String, JsValue> {
        let trainer = self
            .trainer
            .as_mut()
            .ok_or_else(|| err_to_js("call start_training first"))?;
        if trainer.iteration() >= self.train_iterations {
            return Ok("{\"done\":true}".to_string());
        }
        let stats = trainer.step().map_err(err_to_js)?;
        to_json(&stats)
    }

    /// Greedy action histogram and mean action probabilities of the current
    /// policy over the eval templates' warm-start states.
    pub fn action_profile(&self) -> Result<String, JsValue> {
        let trainer = self
            .trainer
            .as_ref()
            .ok_or_else(|| err_to_js("no trained policy yet"))?;
        let mut histogram = [0usize; ACTION_COUNT];
        let mut mean_probs = [0.0f64; ACTION_COUNT];
        let mut count = 0usize;
        for id in &self.split.eval_ids {
            let env = self.env_for(id)?;
            let state = env.warm_start(&mut Rng::seed(0)).map_err(err_to_js)?;
            let choice = select_action(
                trainer.policy(),
                &state.embedding,
                &mut Rng::seed(0),
                SelectionMode::Greedy,
            )
            .map_err(err_to_js)?;
            histogram[choice.action_id] += 1;
            for (acc, p) in mean_probs.iter_mut().zip(choice.probs.values()) {
                *acc += p;
            }
            count += 1;
        }
        if count > 0 {
            for p in &mut mean_probs {
                *p /= count as f64;
            }
        }
        to_json(&ActionProfile {
            greedy_histogram: histogram,
            mean_probs,
        })
    }

    /// Attacks one template with the trained policy and, for contrast, runs
    /// the random-mutation baseline from the same seed. Both trajectories
    /// come back step by step with their r1 scores and evaluation averages.
    pub fn attack_template(&self, id: &str, seed: u32) -> Result<String, JsValue> {
        let trainer = self
            .trainer
            .as_ref()
            .ok_or_else(|| err_to_js("no trained policy yet"))?;
        let record = self
            .manifest
            .record(id)
            .ok_or_else(|| err_to_js(format!("unknown template {id}")))?;

        let result = attack(
            record,
            trainer.policy(),
            self.gateway.clone(),
            self.assets.clone(),
            &self.env_cfg,
            u64::from(seed),
        )
        .map_err(err_to_js)?;
        let policy_steps: Vec<StepView> = result
            .visited
            .iter()
            .map(|v| StepView {
                step: v.step,
                action: v.action_id,
                r1: v.r1,
                body: v.template.body().to_string(),
            })
            .collect();
        let policy_best = StepView {
            step: 0,
            action: None,
            r1: result.r1,
            body: result.template.body().to_string(),
        };

        let mut walk_rng = Rng::seed(u64::from(seed)).split("demo-random").split(id);
        let random = random_attack(
            record,
            self.gateway.clone(),
            self.assets.clone(),
            &self.env_cfg,
            &mut walk_rng,
        )
        .map_err(err_to_js)?;
        let random_steps: Vec<StepView> = random
            .pool
            .iter()
            .map(|v| StepView {
                step: v.step,
                action: v.action_id,
                r1: v.r1,
                body: v.template.body().to_string(),
            })
            .collect();
        let random_best = StepView {
            step: 0,
            action: None,
            r1: random.r1,
            body: random.template.body().to_string(),
        };

        let eval_avg = |stolen: &PromptTemplate, tag: &str| -> Result<f64, JsValue> {
            let mut rows = Vec::new();
            for domain in [Domain::InDomain, Domain::OutDomain] {
                let mut rng = Rng::seed(u64::from(seed))
                    .split(tag)
                    .split(&format!("{id}/{domain}"));
                rows.push(
                    evaluate_template(&self.gateway, stolen, record, domain, 0, &mut rng)
                        .map_err(err_to_js)?
                        .scores,
                );
            }
            Ok(mean_scores(&rows).expect("two rows").average)
        };

        let view = AttackView {
            template_id: id.to_string(),
            truth_body: record.template.clone(),
            policy_eval_average: eval_avg(&result.template, "demo-eval-policy")?,
            random_eval_average: eval_avg(&random.template, "demo-eval-random")?,
            policy: policy_steps,
            policy_best,
            random: random_steps,
            random_best,
        };
        to_json(&view)
    }

    /// Runs both arms over the whole eval split for `seeds` matched trials
    /// and returns per-seed benchmark averages.
    pub fn compare(&self, seeds: u32) -> Result<String, JsValue> {
        let trainer = self
            .trainer
            .as_ref()
            .ok_or_else(|| err_to_js("no trained policy yet"))?;
        let mut out = Vec::with_capacity(seeds as usize);
        for trial in 0..u64::from(seeds) {
            let root = Rng::seed(trial).split("demo-compare");
            let mut policy_scores = Vec::new();
            let mut random_scores = Vec::new();
            for id in &self.split.eval_ids {
                let record = self.manifest.record(id).expect("split ids exist");
                let result = attack(
                    record,
                    trainer.policy(),
                    self.gateway.clone(),
                    self.assets.clone(),
                    &self.env_cfg,
                    trial,
                )
                .map_err(err_to_js)?;
                let mut rows = Vec::new();
                for domain in [Domain::InDomain, Domain::OutDomain] {
                    let mut rng = root.split(&format!("p/{id}/{domain}"));
                    rows.push(
                        evaluate_template(
                            &self.gateway,
                            &result.template,
                            record,
                            domain,
                            0,
                            &mut rng,
                        )
                        .map_err(err_to_js)?
                        .scores,
                    );
                }
                policy_scores.push(mean_scores(&rows).expect("two rows"));

                let mut walk_rng = root.split(&format!("walk/{id}"));
                let random = random_attack(
                    record,
                    self.gateway.clone(),
                    self.assets.clone(),
                    &self.env_cfg,
                    &mut walk_rng,
                )
                .map_err(err_to_js)?;
                let mut rows = Vec::new();
                for domain in [Domain::InDomain, Domain::OutDomain] {
                    let mut rng = root.split(&format!("r/{id}/{domain}"));
                    rows.push(
                        evaluate_template(
                            &self.gateway,
                            &random.template,
                            record,
                            domain,
                            0,
                            &mut rng,
                        )
                        .map_err(err_to_js)?
                        .scores,
                    );
                }
                random_scores.push(mean_scores(&rows).expect("two rows"));
            }
            out.push(CompareSeedView {
                seed: trial,
                policy: mean_scores(&policy_scores).expect("non-empty").average,
                random: mean_scores(&random_scores).expect("non-empty").average,
            });
        }
        to_json(&out)
    }
}
