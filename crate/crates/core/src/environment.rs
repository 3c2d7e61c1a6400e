//! The MDP the agent lives in.
//!
//! An episode over one template record: warm start (describe each sampled
//! exemplar, summarize the fragments into the initial description), then a
//! fixed number of editing steps. Each step sends one of the four action
//! prompts to the mutation backend with the current description and a second
//! operand drawn from the warm-start fragment pool, normalizes the result
//! into a template, embeds it as the next state, and scores it. Episodes
//! never terminate early.
//!
//! [`attack`] runs the trained policy greedily with image sampling disabled,
//! so stealing a template costs zero generation queries; the returned
//! template is the r1-best of everything visited, including the warm start.

use std::sync::{Arc, Mutex};

use crate::dataset::TemplateRecord;
use crate::error::Error;
use crate::gateway::{BackendRole, ChatPayload, ChatRequest, Gateway, ImageRef};
use crate::numerics::Vector;
use crate::policy::{select_action, PolicyNet, SelectionMode, ACTION_COUNT};
use crate::reward::{evaluate_breakdown, reward_text_image, RewardBreakdown, RewardWeights};
use crate::rng::Rng;
use crate::template::{parse_fragment_block, FragmentedDescription, PromptTemplate};
use crate::Result;

// ---------------------------------------------------------------------------
// Prompt assets
// ---------------------------------------------------------------------------

/// The instruction texts sent to the mutation backend, one per operation.
/// Built-in assets ship with the crate; a directory of `describe.txt`,
/// `summarize.txt`, `action0.txt`..`action3.txt`, `normalize.txt` overrides
/// them.
#[derive(Debug, Clone)]
pub struct PromptAssets {
    pub describe: String,
    pub summarize: String,
    pub actions: [String; ACTION_COUNT],
    pub normalize: String,
}

impl Default for PromptAssets {
    fn default() -> Self {
        PromptAssets {
            describe: include_str!("../assets/prompts/describe.txt").to_string(),
            summarize: include_str!("../assets/prompts/summarize.txt").to_string(),
            actions: [
                include_str!("../assets/prompts/action0.txt").to_string(),
                include_str!("../assets/prompts/action1.txt").to_string(),
                include_str!("../assets/prompts/action2.txt").to_string(),
                include_str!("../assets/prompts/action3.txt").to_string(),
            ],
            normalize: include_str!("../assets/prompts/normalize.txt").to_string(),
        }
    }
}

impl PromptAssets {
    pub fn from_dir(dir: impl AsRef<std::path::Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::Config(format!("prompt asset {name}: {e}")))
        };
        Ok(PromptAssets {
            describe: read("describe.txt")?,
            summarize: read("summarize.txt")?,
            actions: [
                read("action0.txt")?,
                read("action1.txt")?,
                read("action2.txt")?,
                read("action3.txt")?,
            ],
            normalize: read("normalize.txt")?,
        })
    }

    fn render_describe(&self, image: &ImageRef) -> String {
        self.describe.replace("{image}", image.as_str())
    }

    fn render_summarize(&self, fragments: &[FragmentedDescription]) -> String {
        let blocks: Vec<String> = fragments.iter().map(|f| f.to_block()).collect();
        self.summarize
            .replace("{n}", &fragments.len().to_string())
            .replace("{fragments}", &blocks.join("\n\n"))
    }

    fn render_action(
        &self,
        action_id: usize,
        a: &FragmentedDescription,
        b: &FragmentedDescription,
        exemplar: Option<&FragmentedDescription>,
    ) -> String {
        let mut text = self.actions[action_id]
            .replace("{a}", &a.to_block())
            .replace("{b}", &b.to_block());
        if let Some(ex) = exemplar {
            text = text.replace("{exemplar}", &ex.to_block());
        }
        text
    }

    fn render_normalize(&self, fragment: &FragmentedDescription) -> String {
        self.normalize.replace("{fragment}", &fragment.to_block())
    }
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

/// Episode configuration.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    /// Steps per episode (T).
    pub horizon: usize,
    /// Warm-start sample size n; `None` means every in-domain exemplar.
    pub warm_start_n: Option<usize>,
    pub weights: RewardWeights,
    /// When false, env_step skips image sampling (r2) entirely.
    pub r2_enabled: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 8,
            warm_start_n: None,
            weights: RewardWeights::default(),
            r2_enabled: true,
        }
    }
}

/// Agent-visible state of one episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub current: FragmentedDescription,
    pub current_template: PromptTemplate,
    /// State embedding of the current template text.
    pub embedding: Vector,
    /// Completed steps, 0 right after warm start.
    pub step: usize,
    /// The warm-start fragments e_1..e_n; immutable for the whole episode.
    pub fragment_pool: Vec<FragmentedDescription>,
}

/// One template's environment: dynamics on top of the gateway.
pub struct Env {
    record: TemplateRecord,
    gateway: Arc<Gateway>,
    assets: Arc<PromptAssets>,
    cfg: EnvConfig,
    /// Warm start is deterministic when it uses every exemplar, so cache it
    /// across episodes (live backends are priced per call).
    warm_cache: Mutex<Option<EnvState>>,
}

impl Env {
    pub fn new(
        record: TemplateRecord,
        gateway: Arc<Gateway>,
        assets: Arc<PromptAssets>,
        cfg: EnvConfig,
    ) -> Self {
        Env {
            record,
            gateway,
            assets,
            cfg,
            warm_cache: Mutex::new(None),
        }
    }

    pub fn record(&self) -> &TemplateRecord {
        &self.record
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn is_terminal(&self, state: &EnvState) -> bool {
        state.step >= self.cfg.horizon
    }

    /// Describes one exemplar image into a fragmented description.
    pub fn describe_image(&self, image: &ImageRef) -> Result<FragmentedDescription> {
        let request = ChatRequest {
            prompt: self.assets.render_describe(image),
            payload: ChatPayload::Describe {
                image: image.clone(),
            },
        };
        let raw = self.gateway.mutate_text(&request)?;
        let fragment = parse_fragment_block(&raw)?;
        if fragment.modifiers.is_empty() && fragment.supplement.is_empty() {
            return Err(Error::DescriptionParse {
                message: "description has neither modifiers nor supplement".into(),
                raw,
            });
        }
        Ok(fragment)
    }

    /// Produces the initial state: describe `n` sampled exemplars, summarize
    /// the fragments, normalize, embed.
    pub fn warm_start(&self, rng: &mut Rng) -> Result<EnvState> {
        let exemplars = self.record.in_domain();
        let n = self.cfg.warm_start_n.unwrap_or(exemplars.len());
        if n == 0 || n > exemplars.len() {
            return Err(Error::Config(format!(
                "warm_start_n {n} out of range 1..={}",
                exemplars.len()
            ))
            .in_warm_start(&self.record.id));
        }
        let full_pool = n == exemplars.len();
        if full_pool {
            if let Some(cached) = self.warm_cache.lock().expect("not poisoned").as_ref() {
                return Ok(cached.clone());
            }
        }
        let picked: Vec<usize> = if full_pool {
            (0..exemplars.len()).collect()
        } else {
            let mut idx = rng.sample_indices(exemplars.len(), n);
            idx.sort_unstable();
            idx
        };
        let state = self
            .warm_start_from(&picked)
            .map_err(|e| e.in_warm_start(&self.record.id))?;
        if full_pool {
            *self.warm_cache.lock().expect("not poisoned") = Some(state.clone());
        }
        Ok(state)
    }

    fn warm_start_from(&self, picked: &[usize]) -> Result<EnvState> {
        let exemplars = self.record.in_domain();
        let mut pool = Vec::with_capacity(picked.len());
        for &i in picked {
            pool.push(self.describe_image(&exemplars[i].image)?);
        }
        let request = ChatRequest {
            prompt: self.assets.render_summarize(&pool),
            payload: ChatPayload::Summarize {
                fragments: pool.clone(),
            },
        };
        let raw = self.gateway.mutate_text(&request)?;
        let summary = parse_fragment_block(&raw)?;
        if summary.modifiers.is_empty() {
            return Err(Error::DescriptionParse {
                message: "initial summarised description has no modifiers".into(),
                raw,
            });
        }
        let template = self.normalize_to_template(&summary)?;
        let embedding = self.embed_state(&template)?;
        Ok(EnvState {
            current: summary,
            current_template: template,
            embedding,
            step: 0,
            fragment_pool: pool,
        })
    }

    /// Executes one editing action against the mutation backend. The second
    /// operand and (for actions 2–3) the exemplar context are drawn from the
    /// fragment pool.
    pub fn apply_action(
        &self,
        state: &EnvState,
        action_id: usize,
        rng: &mut Rng,
    ) -> Result<FragmentedDescription> {
        if action_id >= ACTION_COUNT {
            return Err(Error::Misuse(format!("action id {action_id} out of range")));
        }
        if state.fragment_pool.is_empty() {
            return Err(Error::Misuse("empty fragment pool".into()));
        }
        let operand = &state.fragment_pool[rng.below(state.fragment_pool.len())];
        let exemplar = if action_id >= 2 {
            Some(state.fragment_pool[rng.below(state.fragment_pool.len())].clone())
        } else {
            None
        };
        let seed = rng.next_u64();
        let request = ChatRequest {
            prompt: self.assets.render_action(
                action_id,
                &state.current,
                operand,
                exemplar.as_ref(),
            ),
            payload: ChatPayload::Mutate {
                action_id,
                a: state.current.clone(),
                b: operand.clone(),
                exemplar,
                seed,
            },
        };
        let raw = self.gateway.mutate_text(&request)?;
        match parse_fragment_block(&raw) {
            Ok(fragment) => Ok(fragment),
            Err(_) => {
                // One corrective retry, then give up.
                let retry = ChatRequest {
                    prompt: format!(
                        "{}\n\nYour previous reply could not be parsed. Reply with exactly one \
                         ```fragment``` block and nothing else.",
                        request.prompt
                    ),
                    payload: request.payload.clone(),
                };
                let raw = self.gateway.mutate_text(&retry)?;
                parse_fragment_block(&raw)
            }
        }
        .map_err(|e| e.in_action(&self.record.id, state.step + 1, action_id))
    }

    /// Converts a fragmented description into an executable template. Retries
    /// once with a corrective instruction if the placeholder contract is
    /// violated.
    pub fn normalize_to_template(
        &self,
        fragment: &FragmentedDescription,
    ) -> Result<PromptTemplate> {
        let request = ChatRequest {
            prompt: self.assets.render_normalize(fragment),
            payload: ChatPayload::Normalize {
                fragment: fragment.clone(),
            },
        };
        let raw = self.gateway.mutate_text(&request)?;
        match Self::template_from_reply(&raw, fragment) {
            Ok(t) => Ok(t),
            Err(_) => {
                let retry = ChatRequest {
                    prompt: format!(
                        "{}\n\nYour previous reply was invalid: the body must contain the \
                         placeholder [SUBJECT] exactly once, inside one ```template``` block.",
                        request.prompt
                    ),
                    payload: request.payload.clone(),
                };
                let raw = self.gateway.mutate_text(&retry)?;
                Self::template_from_reply(&raw, fragment)
            }
        }
    }

    fn template_from_reply(raw: &str, fragment: &FragmentedDescription) -> Result<PromptTemplate> {
        let body = extract_template_body(raw)?;
        PromptTemplate::new(
            body,
            fragment.modifiers.clone(),
            fragment.supplement.clone(),
        )
    }

    fn embed_state(&self, template: &PromptTemplate) -> Result<Vector> {
        Ok(self
            .gateway
            .embed_text(BackendRole::TextEmbedderState, template.body())?)
    }

    /// One full MDP step: mutate, normalize, embed, score.
    pub fn step(
        &self,
        state: &EnvState,
        action_id: usize,
        rng: &mut Rng,
    ) -> Result<(EnvState, RewardBreakdown)> {
        if self.is_terminal(state) {
            return Err(Error::Misuse(format!(
                "episode for {} already ran its {} steps",
                self.record.id, self.cfg.horizon
            )));
        }
        let fragment = self.apply_action(state, action_id, rng)?;
        let template = self.normalize_to_template(&fragment)?;
        let embedding = self.embed_state(&template)?;
        let breakdown = evaluate_breakdown(
            &self.gateway,
            &template,
            self.record.in_domain(),
            &self.record.template,
            &self.cfg.weights,
            self.cfg.r2_enabled,
            rng,
        )?;
        let next = EnvState {
            current: fragment,
            current_template: template,
            embedding,
            step: state.step + 1,
            fragment_pool: state.fragment_pool.clone(),
        };
        Ok((next, breakdown))
    }

    /// r1 of an arbitrary template against this record's public exemplars.
    pub fn score_r1(&self, template: &PromptTemplate) -> Result<f64> {
        reward_text_image(&self.gateway, template, self.record.in_domain())
    }
}

// ---------------------------------------------------------------------------
// Pool walks: greedy attack and the random baseline share this skeleton
// ---------------------------------------------------------------------------

/// Everything a walk visited, scored by r1.
#[derive(Debug, Clone)]
pub struct VisitedTemplate {
    pub step: usize,
    pub action_id: Option<usize>,
    pub template: PromptTemplate,
    pub r1: f64,
}

/// Walks `horizon` steps from the warm start, choosing actions with `pick`,
/// and pools every visited template (warm start included) with its r1.
/// No image sampling happens on this path.
pub fn pooled_walk(
    env: &Env,
    rng: &mut Rng,
    mut pick: impl FnMut(&EnvState, &mut Rng) -> Result<usize>,
) -> Result<Vec<VisitedTemplate>> {
    let mut state = env.warm_start(rng)?;
    let mut visited = vec![VisitedTemplate {
        step: 0,
        action_id: None,
        template: state.current_template.clone(),
        r1: env.score_r1(&state.current_template)?,
    }];
    for step in 1..=env.config().horizon {
        let action_id = pick(&state, rng)?;
        let fragment = env.apply_action(&state, action_id, rng)?;
        let template = env.normalize_to_template(&fragment)?;
        let embedding = env
            .gateway
            .embed_text(BackendRole::TextEmbedderState, template.body())?;
        let r1 = env.score_r1(&template)?;
        visited.push(VisitedTemplate {
            step,
            action_id: Some(action_id),
            template: template.clone(),
            r1,
        });
        state = EnvState {
            current: fragment,
            current_template: template,
            embedding,
            step: state.step + 1,
            fragment_pool: state.fragment_pool.clone(),
        };
    }
    Ok(visited)
}

/// Index of the r1-argmax, ties resolved toward the earliest visit.
pub fn best_of_pool(visited: &[VisitedTemplate]) -> usize {
    let mut best = 0;
    for (i, v) in visited.iter().enumerate().skip(1) {
        if v.r1 > visited[best].r1 {
            best = i;
        }
    }
    best
}

/// Outcome of one attack.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub template_id: String,
    /// The stolen template: r1-best over everything visited.
    pub template: PromptTemplate,
    pub r1: f64,
    pub visited: Vec<VisitedTemplate>,
    /// Image-generation queries spent during the attack. Always 0.
    pub image_queries: u64,
}

/// Steals one template with the trained policy: warm start, then `horizon`
/// greedy steps with image sampling disabled, returning the r1-best visited
/// template. Performs zero image-generation queries.
pub fn attack(
    record: &TemplateRecord,
    policy: &PolicyNet,
    gateway: Arc<Gateway>,
    assets: Arc<PromptAssets>,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<AttackResult> {
    let cfg = EnvConfig {
        r2_enabled: false,
        ..cfg.clone()
    };
    let env = Env::new(record.clone(), gateway.clone(), assets, cfg);
    let before = gateway.usage().count(BackendRole::ImageGenerator);
    let mut rng = Rng::seed(seed).split("attack").split(&record.id);
    let visited = pooled_walk(&env, &mut rng, |state, walk_rng| {
        Ok(select_action(policy, &state.embedding, walk_rng, SelectionMode::Greedy)?.action_id)
    })
    .map_err(|e| Error::Attack {
        template_id: record.id.clone(),
        source: Box::new(e),
    })?;
    let image_queries = gateway.usage().count(BackendRole::ImageGenerator) - before;
    debug_assert_eq!(image_queries, 0);
    let best = best_of_pool(&visited);
    Ok(AttackResult {
        template_id: record.id.clone(),
        template: visited[best].template.clone(),
        r1: visited[best].r1,
        visited,
        image_queries,
    })
}

fn extract_template_body(raw: &str) -> Result<String> {
    let err = |message: &str| Error::Normalization {
        message: message.to_string(),
        raw: raw.to_string(),
    };
    let start = raw
        .find("```template")
        .ok_or_else(|| err("no ```template fence"))?;
    let rest = &raw[start + "```template".len()..];
    let end = rest.find("```").ok_or_else(|| err("unterminated fence"))?;
    let body = rest[..end].trim();
    if body.is_empty() {
        return Err(err("empty template body"));
    }
    Ok(body.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::GatewayError;
    use crate::gateway::{ChatBackend, UsageMeter};
    use crate::policy::policy_init;
    use crate::simworld::{generate_templates, SimConfig, SimWorld};

    fn sim_setup(sigma: f64, dropout: f64) -> (Arc<SimWorld>, Arc<Gateway>, Vec<TemplateRecord>) {
        let cfg = SimConfig {
            sigma_easy: sigma,
            sigma_hard: sigma,
            sigma_gen: sigma,
            dropout_easy: dropout,
            dropout_hard: dropout,
            ..SimConfig::default()
        };
        let templates = generate_templates(5, 3, 0);
        let records: Vec<TemplateRecord> = templates.iter().map(|t| t.to_record()).collect();
        let world = Arc::new(SimWorld::new(cfg, templates));
        let gw = Arc::new(SimWorld::bind_gateway(
            &world,
            UsageMeter::with_default_costs(),
        ));
        (world, gw, records)
    }

    fn env_for(gw: &Arc<Gateway>, record: &TemplateRecord, r2_enabled: bool) -> Env {
        Env::new(
            record.clone(),
            gw.clone(),
            Arc::new(PromptAssets::default()),
            EnvConfig {
                r2_enabled,
                ..EnvConfig::default()
            },
        )
    }

    #[test]
    fn warm_start_uses_every_exemplar_and_caches() {
        let (_, gw, records) = sim_setup(0.0, 0.0);
        let env = env_for(&gw, &records[0], true);
        let mutator_before = gw.usage().count(BackendRole::Mutator);
        let state = env.warm_start(&mut Rng::seed(1)).unwrap();
        assert_eq!(state.fragment_pool.len(), 5);
        assert_eq!(state.step, 0);
        assert!(!state.current.modifiers.is_empty());
        let calls_first = gw.usage().count(BackendRole::Mutator) - mutator_before;
        // 5 describes + 1 summarize + 1 normalize.
        assert_eq!(calls_first, 7);
        let again = env.warm_start(&mut Rng::seed(2)).unwrap();
        assert_eq!(again.current_template.body(), state.current_template.body());
        // Cached: no further mutator traffic.
        assert_eq!(gw.usage().count(BackendRole::Mutator) - mutator_before, 7);
    }

    #[test]
    fn warm_start_subset_is_seeded() {
        let (_, gw, records) = sim_setup(0.0, 0.0);
        let cfg = EnvConfig {
            warm_start_n: Some(3),
            ..EnvConfig::default()
        };
        let env = Env::new(
            records[0].clone(),
            gw.clone(),
            Arc::new(PromptAssets::default()),
            cfg,
        );
        let a = env.warm_start(&mut Rng::seed(9)).unwrap();
        let b = env.warm_start(&mut Rng::seed(9)).unwrap();
        assert_eq!(a.fragment_pool, b.fragment_pool);
        assert_eq!(a.fragment_pool.len(), 3);
    }

    #[test]
    fn warm_start_rejects_out_of_range_n() {
        let (_, gw, records) = sim_setup(0.0, 0.0);
        let cfg = EnvConfig {
            warm_start_n: Some(6),
            ..EnvConfig::default()
        };
        let env = Env::new(
            records[0].clone(),
            gw.clone(),
            Arc::new(PromptAssets::default()),
            cfg,
        );
        assert!(matches!(
            env.warm_start(&mut Rng::seed(1)),
            Err(Error::WarmStart { .. })
        ));
    }

    #[test]
    fn zero_noise_warm_start_recovers_ground_truth() {
        let (world, gw, records) = sim_setup(0.0, 0.0);
        let env = env_for(&gw, &records[0], false);
        let state = env.warm_start(&mut Rng::seed(1)).unwrap();
        let truth = world.template(&records[0].id).unwrap();
        assert_eq!(state.current.modifiers, truth.modifiers);
        assert_eq!(state.current_template.body(), records[0].template);
    }

    #[test]
    fn describe_rejects_malformed_backend_reply() {
        struct Hello;
        impl ChatBackend for Hello {
            fn complete(&self, _r: &ChatRequest) -> Result<String, GatewayError> {
                Ok("hello".into())
            }
        }
        let (_, _, records) = sim_setup(0.0, 0.0);
        let gw = Arc::new(Gateway::builder().mutator(Arc::new(Hello)).build());
        let env = env_for(&gw, &records[0], false);
        let err = env
            .describe_image(&records[0].exemplars[0].image)
            .unwrap_err();
        assert!(matches!(err, Error::DescriptionParse { .. }));
    }

    #[test]
    fn describe_is_deterministic() {
        let (_, gw, records) = sim_setup(0.05, 0.3);
        let env = env_for(&gw, &records[1], false);
        let image = &records[1].exemplars[2].image;
        assert_eq!(
            env.describe_image(image).unwrap(),
            env.describe_image(image).unwrap()
        );
    }

    #[test]
    fn normalized_template_has_placeholder_and_renders_clean() {
        let (_, gw, records) = sim_setup(0.05, 0.2);
        let env = env_for(&gw, &records[0], false);
        let state = env.warm_start(&mut Rng::seed(3)).unwrap();
        let body = state.current_template.body();
        assert_eq!(body.matches("[SUBJECT]").count(), 1);
        assert!(!body.contains(&state.current.subject));
        let rendered = state.current_template.render("a stone bridge");
        assert!(rendered.contains("a stone bridge"));
        assert!(!rendered.contains("[SUBJECT]"));
    }

    #[test]
    fn episode_runs_exactly_horizon_steps_and_rewards_stay_bounded() {
        let (_, gw, records) = sim_setup(0.05, 0.2);
        let env = env_for(&gw, &records[0], true);
        let mut rng = Rng::seed(7);
        let mut state = env.warm_start(&mut rng).unwrap();
        for t in 1..=8 {
            assert!(!env.is_terminal(&state));
            let (next, breakdown) = env.step(&state, t % ACTION_COUNT, &mut rng).unwrap();
            assert_eq!(next.step, t);
            assert_eq!(next.fragment_pool, state.fragment_pool);
            assert!(breakdown.r1 >= -1.0 && breakdown.r1 <= 1.0);
            assert!(breakdown.r3 >= -1.0 && breakdown.r3 <= 1.0);
            assert!(breakdown.total >= -1.0 && breakdown.total <= 1.0);
            assert!(breakdown.r2_enabled());
            state = next;
        }
        assert!(env.is_terminal(&state));
        assert!(matches!(
            env.step(&state, 0, &mut rng),
            Err(Error::Misuse(_))
        ));
    }

    #[test]
    fn env_step_is_bit_deterministic_for_fixed_seeds() {
        let run = || {
            let (_, gw, records) = sim_setup(0.05, 0.25);
            let env = env_for(&gw, &records[2], true);
            let mut rng = Rng::seed(40);
            let mut state = env.warm_start(&mut rng).unwrap();
            let mut rewards = Vec::new();
            for t in 0..8 {
                let (next, b) = env
                    .step(&state, (t * 2 + 1) % ACTION_COUNT, &mut rng)
                    .unwrap();
                rewards.push(b.total.to_bits());
                state = next;
            }
            (state.embedding.values().to_vec(), rewards)
        };
        let (emb_a, rew_a) = run();
        let (emb_b, rew_b) = run();
        assert_eq!(rew_a, rew_b);
        let bits_a: Vec<u64> = emb_a.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = emb_b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn attack_spends_zero_image_queries_and_beats_warm_start() {
        let (_, gw, records) = sim_setup(0.05, 0.3);
        let (policy, _) = policy_init(5, 768, 16).unwrap();
        let result = attack(
            &records[0],
            &policy,
            gw.clone(),
            Arc::new(PromptAssets::default()),
            &EnvConfig::default(),
            77,
        )
        .unwrap();
        assert_eq!(result.image_queries, 0);
        assert_eq!(gw.usage().count(BackendRole::ImageGenerator), 0);
        assert_eq!(result.visited.len(), 9);
        // Pool argmax can never lose to the warm start it contains.
        assert!(result.r1 >= result.visited[0].r1);
        let max_r1 = result
            .visited
            .iter()
            .map(|v| v.r1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.r1, max_r1);
    }

    #[test]
    fn attack_is_deterministic() {
        let (_, gw, records) = sim_setup(0.05, 0.3);
        let (policy, _) = policy_init(6, 768, 16).unwrap();
        let assets = Arc::new(PromptAssets::default());
        let a = attack(
            &records[1],
            &policy,
            gw.clone(),
            assets.clone(),
            &EnvConfig::default(),
            9,
        )
        .unwrap();
        let b = attack(&records[1], &policy, gw, assets, &EnvConfig::default(), 9).unwrap();
        assert_eq!(a.template.body(), b.template.body());
        assert_eq!(a.r1.to_bits(), b.r1.to_bits());
    }

    #[test]
    fn best_of_pool_breaks_ties_earliest() {
        let t = PromptTemplate::new("[SUBJECT], x", vec![], vec![]).unwrap();
        let visited = vec![
            VisitedTemplate {
                step: 0,
                action_id: None,
                template: t.clone(),
                r1: 0.7,
            },
            VisitedTemplate {
                step: 1,
                action_id: Some(0),
                template: t.clone(),
                r1: 0.7,
            },
            VisitedTemplate {
                step: 2,
                action_id: Some(1),
                template: t,
                r1: 0.5,
            },
        ];
        assert_eq!(best_of_pool(&visited), 0);
    }
}
