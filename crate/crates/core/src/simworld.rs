//! Closed, deterministic synthetic implementation of every gateway role.
//!
//! Templates are token sets over a style vocabulary, images are seeded noisy
//! indicator vectors over that vocabulary, and the chat operations
//! (describe, summarize, the four mutation actions, normalize) are explicit
//! rules. This gives the full pipeline a desk-scale ground truth: the exact
//! hidden template is known, reward signals are computable in closed form,
//! and identical seeds reproduce identical runs byte for byte.
//!
//! The world model:
//! - An image generated from a prompt has feature weight 1 on each prompt
//!   token plus zero-mean Gaussian noise (σ by difficulty) on every style
//!   vocabulary dimension.
//! - Text and image embeddings are hashed term-frequency projections into a
//!   common basis per role pair, so cross-modal cosines are meaningful.
//! - Describing an image thresholds features at 0.5 and then drops style
//!   tokens with a seeded per-image dropout, which is what makes warm starts
//!   imperfect and leaves the agent something to recover.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::dataset::{DatasetManifest, Difficulty, Exemplar, TemplateRecord};
use crate::error::GatewayError;
use crate::gateway::{
    BackendRole, ChatBackend, ChatPayload, ChatRequest, EmbedBackend, Gateway, ImageBackend,
    ImageRef, RetryPolicy, UsageMeter,
};
use crate::rng::{hash_str, Rng};
use crate::template::FragmentedDescription;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Style words usable in the Modifiers field. The easy vocabulary is the
/// first [`EASY_MODIFIERS`] entries, the hard vocabulary the first
/// [`HARD_MODIFIERS`].
pub const MODIFIER_WORDS: &[&str] = &[
    "watercolor",
    "impasto",
    "charcoal",
    "gouache",
    "ukiyoe",
    "baroque",
    "cubist",
    "surreal",
    "minimalist",
    "brutalist",
    "pastel",
    "neon",
    "monochrome",
    "sepia",
    "vaporwave",
    "steampunk",
    "cyberpunk",
    "solarpunk",
    "artdeco",
    "fauvist",
    "pointillist",
    "woodcut",
    "linocut",
    "fresco",
    "grisaille",
    "chiaroscuro",
    "lowpoly",
    "voxel",
    "isometric",
    "holographic",
    "iridescent",
    "luminous",
    "gothic",
    "romanesque",
    "rococo",
    "tribal",
    "graffiti",
    "stencil",
    "collage",
    "origami",
    "papercraft",
    "embroidered",
    "stitched",
    "glazed",
    "enamel",
    "lacquered",
    "gilded",
    "marbled",
    "crystalline",
    "prismatic",
    "geometric",
    "organic",
    "flowing",
    "angular",
    "dreamy",
    "ethereal",
    "moody",
    "vivid",
    "muted",
    "airy",
    "dense",
    "ornate",
    "sparse",
    "retro",
    "futurist",
    "naive",
    "painterly",
    "sketchy",
    "inky",
    "dappled",
    "mosaic",
    "stained",
    "weathered",
    "polished",
    "burnished",
];

/// Rendering/lighting/camera words usable in the Supplement field.
pub const SUPPLEMENT_WORDS: &[&str] = &[
    "bokeh",
    "backlit",
    "rimlight",
    "candlelit",
    "moonlit",
    "sunlit",
    "overcast",
    "foggy",
    "misty",
    "hazy",
    "glowing",
    "shimmering",
    "softfocus",
    "sharpfocus",
    "grainy",
    "filmic",
    "cinematic",
    "anamorphic",
    "telephoto",
    "macro",
    "wideangle",
    "fisheye",
    "tiltshift",
    "longexposure",
    "hdr",
    "raytraced",
    "volumetric",
    "ambient",
    "specular",
    "matte",
    "glossy",
    "textured",
    "layered",
    "symmetrical",
    "centered",
    "closeup",
    "panoramic",
    "aerial",
    "underwater",
    "dusk",
    "dawn",
    "twilight",
    "stormy",
    "radiant",
    "serene",
];

/// Subjects substituted into templates. Never overlaps the style vocabulary.
pub const SUBJECT_WORDS: &[&str] = &[
    "fox",
    "lighthouse",
    "astronaut",
    "dragon",
    "castle",
    "owl",
    "whale",
    "violin",
    "bonsai",
    "lantern",
    "samurai",
    "mermaid",
    "clocktower",
    "airship",
    "phoenix",
    "tiger",
    "raven",
    "butterfly",
    "cottage",
    "glacier",
    "volcano",
    "library",
    "market",
    "bridge",
    "submarine",
    "robot",
    "wizard",
    "knight",
    "garden",
    "waterfall",
    "desert",
    "comet",
    "island",
    "train",
    "carousel",
    "jellyfish",
    "falcon",
    "temple",
    "windmill",
    "harbor",
];

const EASY_MODIFIERS: usize = 25;
const EASY_SUPPLEMENTS: usize = 15;
const HARD_MODIFIERS: usize = 75;
const HARD_SUPPLEMENTS: usize = 45;

/// Which field a token belongs to when splitting a described image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Modifier,
    Supplement,
    Subject,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Knobs of the synthetic world. Defaults are tuned so that guided search
/// closes most of the warm-start gap within an 8-step episode while random
/// search plateaus.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Output dimension of every embedder role.
    pub embed_dim: usize,
    /// Seed of the shared hash basis.
    pub hash_seed: u64,
    /// Image noise per difficulty.
    pub sigma_easy: f64,
    pub sigma_hard: f64,
    /// Noise for ad-hoc generations (the generator is difficulty-blind).
    pub sigma_gen: f64,
    /// Feature weight above which a token is visible to `describe`.
    pub describe_threshold: f64,
    /// Probability that `describe` misses a visible style token.
    pub dropout_easy: f64,
    pub dropout_hard: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            embed_dim: 768,
            hash_seed: 0x5EED,
            sigma_easy: 0.05,
            sigma_hard: 0.15,
            sigma_gen: 0.05,
            describe_threshold: 0.5,
            dropout_easy: 0.25,
            dropout_hard: 0.35,
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic templates and images
// ---------------------------------------------------------------------------

/// Ground truth for one synthetic listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthTemplate {
    pub id: String,
    pub difficulty: Difficulty,
    /// Sorted, disjoint from `supplement`.
    pub modifiers: Vec<String>,
    pub supplement: Vec<String>,
    /// Nine exemplar subjects.
    pub subjects: Vec<String>,
    /// Per-exemplar generation seeds, baked into the `synth:` URIs.
    pub exemplar_seeds: Vec<u64>,
}

impl SynthTemplate {
    /// Canonical template body: placeholder, then modifiers, then supplement.
    pub fn ground_truth_body(&self) -> String {
        join_body(&self.modifiers, &self.supplement)
    }

    /// Style tokens of the hidden template (modifiers ∪ supplement).
    pub fn style_tokens(&self) -> Vec<String> {
        let mut v = self.modifiers.clone();
        v.extend(self.supplement.iter().cloned());
        v
    }

    pub fn exemplar_uri(&self, index: usize) -> ImageRef {
        ImageRef(format!(
            "synth:{}/{}/{}",
            self.id, index, self.exemplar_seeds[index]
        ))
    }

    /// Renders the record the standard dataset schema expects.
    pub fn to_record(&self) -> TemplateRecord {
        TemplateRecord {
            id: self.id.clone(),
            difficulty: self.difficulty,
            template: self.ground_truth_body(),
            exemplars: (0..self.subjects.len())
                .map(|i| Exemplar {
                    subject: self.subjects[i].clone(),
                    image: self.exemplar_uri(i),
                })
                .collect(),
        }
    }
}

fn join_body(modifiers: &[String], supplement: &[String]) -> String {
    let mut parts: Vec<&str> = vec![crate::template::SUBJECT_PLACEHOLDER];
    parts.extend(modifiers.iter().map(String::as_str));
    parts.extend(supplement.iter().map(String::as_str));
    parts.join(", ")
}

/// Seeded noisy feature vector standing in for an actual image.
#[derive(Debug, Clone)]
pub struct SynthImage {
    /// Token → feature weight. Prompt tokens sit near 1, absent style
    /// vocabulary tokens near 0.
    pub features: BTreeMap<String, f64>,
    /// The URI this image resolves from.
    pub provenance: String,
}

/// Samples `count` synthetic templates per difficulty, deterministically.
pub fn generate_templates(seed: u64, n_easy: usize, n_hard: usize) -> Vec<SynthTemplate> {
    let root = Rng::seed(seed).split("synth-templates");
    let mut out = Vec::with_capacity(n_easy + n_hard);
    let plan = [
        (Difficulty::Easy, n_easy, "easy"),
        (Difficulty::Hard, n_hard, "hard"),
    ];
    let mut global = 0u64;
    for (difficulty, count, prefix) in plan {
        let (mod_vocab, supp_vocab) = vocab_for(difficulty);
        for i in 0..count {
            let mut rng = root.split_index("template", global);
            global += 1;
            let n_mods = 3 + rng.below(6); // 3..=8
            let n_supp = 1 + rng.below(4); // 1..=4
            let modifiers = pick_sorted(&mut rng, mod_vocab, n_mods);
            let supplement = pick_sorted(&mut rng, supp_vocab, n_supp);
            let subjects: Vec<String> = rng
                .sample_indices(SUBJECT_WORDS.len(), crate::dataset::EXEMPLARS_PER_TEMPLATE)
                .into_iter()
                .map(|j| SUBJECT_WORDS[j].to_string())
                .collect();
            let exemplar_seeds: Vec<u64> = (0..subjects.len()).map(|_| rng.next_u64()).collect();
            out.push(SynthTemplate {
                id: format!("{prefix}-{i:03}"),
                difficulty,
                modifiers,
                supplement,
                subjects,
                exemplar_seeds,
            });
        }
    }
    out
}

fn vocab_for(difficulty: Difficulty) -> (&'static [&'static str], &'static [&'static str]) {
    match difficulty {
        Difficulty::Easy => (
            &MODIFIER_WORDS[..EASY_MODIFIERS],
            &SUPPLEMENT_WORDS[..EASY_SUPPLEMENTS],
        ),
        Difficulty::Hard => (
            &MODIFIER_WORDS[..HARD_MODIFIERS],
            &SUPPLEMENT_WORDS[..HARD_SUPPLEMENTS],
        ),
    }
}

fn pick_sorted(rng: &mut Rng, vocab: &[&str], k: usize) -> Vec<String> {
    let mut v: Vec<String> = rng
        .sample_indices(vocab.len(), k)
        .into_iter()
        .map(|i| vocab[i].to_string())
        .collect();
    v.sort();
    v
}

// ---------------------------------------------------------------------------
// The world
// ---------------------------------------------------------------------------

/// Deterministic backend for every gateway role.
pub struct SimWorld {
    cfg: SimConfig,
    templates: BTreeMap<String, SynthTemplate>,
    class: BTreeMap<&'static str, TokenClass>,
}

impl SimWorld {
    pub fn new(cfg: SimConfig, templates: Vec<SynthTemplate>) -> Self {
        let mut class = BTreeMap::new();
        for w in MODIFIER_WORDS {
            class.insert(*w, TokenClass::Modifier);
        }
        for w in SUPPLEMENT_WORDS {
            class.insert(*w, TokenClass::Supplement);
        }
        for w in SUBJECT_WORDS {
            class.insert(*w, TokenClass::Subject);
        }
        SimWorld {
            cfg,
            templates: templates.into_iter().map(|t| (t.id.clone(), t)).collect(),
            class,
        }
    }

    /// Reconstructs the world from a synthetic manifest (the reverse of
    /// [`SynthTemplate::to_record`]), so a dataset file is all a sim run needs.
    pub fn from_manifest(cfg: SimConfig, manifest: &DatasetManifest) -> crate::Result<Self> {
        let mut templates = Vec::with_capacity(manifest.records.len());
        for record in &manifest.records {
            templates.push(template_from_record(record)?);
        }
        Ok(SimWorld::new(cfg, templates))
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn template(&self, id: &str) -> Option<&SynthTemplate> {
        self.templates.get(id)
    }

    fn token_class(&self, token: &str) -> TokenClass {
        self.class
            .get(token)
            .copied()
            .unwrap_or(TokenClass::Modifier)
    }

    /// Binds every role of a fresh gateway to this world.
    pub fn bind_gateway(world: &Arc<SimWorld>, meter: UsageMeter) -> Gateway {
        let dim = world.cfg.embed_dim;
        let mut builder = Gateway::builder()
            .mutator(world.clone())
            .image_generator(world.clone())
            .meter(meter)
            .retry(RetryPolicy::immediate());
        for role in [
            BackendRole::TextEmbedderState,
            BackendRole::TextEmbedderReward,
            BackendRole::ImageEmbedderReward,
            BackendRole::EvalDino,
            BackendRole::EvalClipImage,
            BackendRole::EvalClipText,
            BackendRole::EvalSiglipImage,
            BackendRole::EvalSiglipText,
        ] {
            builder = builder.embedder(role, world.clone(), dim);
        }
        builder.build()
    }

    // -- images -------------------------------------------------------------

    /// Feature vector for a prompt: indicator over prompt tokens plus seeded
    /// zero-mean noise on every style-vocabulary dimension.
    pub fn synth_image(
        &self,
        prompt_tokens: &[String],
        difficulty: Option<Difficulty>,
        provenance: String,
    ) -> SynthImage {
        let mut features: BTreeMap<String, f64> = BTreeMap::new();
        for t in prompt_tokens {
            features.insert(t.clone(), 1.0);
        }
        let sigma = match difficulty {
            Some(Difficulty::Easy) => self.cfg.sigma_easy,
            Some(Difficulty::Hard) => self.cfg.sigma_hard,
            None => self.cfg.sigma_gen,
        };
        if sigma > 0.0 {
            let (mod_vocab, supp_vocab) = vocab_for(difficulty.unwrap_or(Difficulty::Easy));
            let mut noise = Rng::seed(hash_str(&provenance)).split("image-noise");
            for w in mod_vocab.iter().chain(supp_vocab.iter()) {
                let eps = noise.normal() * sigma;
                *features.entry((*w).to_string()).or_insert(0.0) += eps;
            }
        }
        SynthImage {
            features,
            provenance,
        }
    }

    /// Resolves `synth:` and `synthgen:` URIs into images.
    pub fn resolve_image(&self, image: &ImageRef) -> Result<SynthImage, GatewayError> {
        let unresolvable = |message: String| GatewayError::DegenerateInput {
            role: BackendRole::ImageEmbedderReward,
            message,
        };
        if let Some(rest) = image.as_str().strip_prefix("synth:") {
            let parts: Vec<&str> = rest.split('/').collect();
            if parts.len() != 3 {
                return Err(unresolvable(format!(
                    "malformed synth uri {:?}",
                    image.as_str()
                )));
            }
            let template = self
                .templates
                .get(parts[0])
                .ok_or_else(|| unresolvable(format!("unknown template {:?}", parts[0])))?;
            let index: usize = parts[1]
                .parse()
                .map_err(|_| unresolvable(format!("bad exemplar index {:?}", parts[1])))?;
            if index >= template.subjects.len() {
                return Err(unresolvable(format!("exemplar index {index} out of range")));
            }
            let mut tokens = template.style_tokens();
            tokens.extend(tokenize(&template.subjects[index]));
            Ok(self.synth_image(
                &tokens,
                Some(template.difficulty),
                image.as_str().to_string(),
            ))
        } else if let Some(rest) = image.as_str().strip_prefix("synthgen:") {
            let (_seed, toks) = rest.split_once(':').ok_or_else(|| {
                unresolvable(format!("malformed synthgen uri {:?}", image.as_str()))
            })?;
            let tokens: Vec<String> = toks.split('+').map(str::to_string).collect();
            if tokens.is_empty() || tokens.iter().all(|t| t.is_empty()) {
                return Err(unresolvable("empty synthgen token set".into()));
            }
            Ok(self.synth_image(&tokens, None, image.as_str().to_string()))
        } else {
            Err(unresolvable(format!(
                "simulator cannot resolve image ref {:?}",
                image.as_str()
            )))
        }
    }

    // -- chat rules ----------------------------------------------------------

    /// Tokens visible above the describe threshold, minus seeded dropout,
    /// split into fields by vocabulary class.
    pub fn describe(&self, image: &ImageRef) -> Result<FragmentedDescription, GatewayError> {
        let img = self.resolve_image(image)?;
        let difficulty = self.difficulty_of(image);
        let dropout = match difficulty {
            Some(Difficulty::Hard) => self.cfg.dropout_hard,
            _ => self.cfg.dropout_easy,
        };
        let mut modifiers = Vec::new();
        let mut supplement = Vec::new();
        let mut subject_tokens = Vec::new();
        for (token, weight) in &img.features {
            if *weight <= self.cfg.describe_threshold {
                continue;
            }
            match self.token_class(token) {
                TokenClass::Modifier => modifiers.push(token.clone()),
                TokenClass::Supplement => supplement.push(token.clone()),
                TokenClass::Subject => subject_tokens.push(token.clone()),
            }
        }
        // Seeded per-image dropout over style tokens. A description never
        // loses its last modifier.
        let mut drng = Rng::seed(hash_str(image.as_str())).split("describe-dropout");
        let full_modifiers = modifiers.clone();
        modifiers.retain(|_| drng.next_f64() >= dropout);
        supplement.retain(|_| drng.next_f64() >= dropout);
        if modifiers.is_empty() {
            if let Some(first) = full_modifiers.first() {
                modifiers.push(first.clone());
            }
        }
        if subject_tokens.is_empty() {
            return Err(GatewayError::DegenerateInput {
                role: BackendRole::Mutator,
                message: format!("image {:?} has no visible subject", image.as_str()),
            });
        }
        Ok(FragmentedDescription {
            subject: subject_tokens.join(" "),
            modifiers,
            supplement,
        })
    }

    fn difficulty_of(&self, image: &ImageRef) -> Option<Difficulty> {
        image
            .as_str()
            .strip_prefix("synth:")
            .and_then(|rest| rest.split('/').next())
            .and_then(|id| self.templates.get(id))
            .map(|t| t.difficulty)
    }

    /// Majority vote: tokens present in at least ⌈n/2⌉ fragments. If the
    /// modifier majority is empty, falls back to the most frequent modifier
    /// token (ties lexicographic). Subject is the most frequent subject.
    pub fn summarize(&self, fragments: &[FragmentedDescription]) -> FragmentedDescription {
        let n = fragments.len();
        let quorum = n.div_ceil(2);
        let majority = |lists: Vec<&[String]>| -> (Vec<String>, Option<String>) {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for list in &lists {
                for token in BTreeSet::from_iter(list.iter().map(String::as_str)) {
                    *counts.entry(token).or_insert(0) += 1;
                }
            }
            let kept: Vec<String> = counts
                .iter()
                .filter(|(_, c)| **c >= quorum)
                .map(|(t, _)| (*t).to_string())
                .collect();
            let top = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(t, _)| (*t).to_string());
            (kept, top)
        };
        let (mut modifiers, top_mod) =
            majority(fragments.iter().map(|f| f.modifiers.as_slice()).collect());
        if modifiers.is_empty() {
            modifiers.extend(top_mod);
        }
        let (supplement, _) = majority(fragments.iter().map(|f| f.supplement.as_slice()).collect());

        let mut subject_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for f in fragments {
            *subject_counts.entry(f.subject.as_str()).or_insert(0) += 1;
        }
        let subject = subject_counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(s, _)| (*s).to_string())
            .unwrap_or_default();
        FragmentedDescription {
            subject,
            modifiers,
            supplement,
        }
    }

    /// Executes one of the four editing actions as an explicit rule.
    pub fn mutate(
        &self,
        action_id: usize,
        a: &FragmentedDescription,
        b: &FragmentedDescription,
        exemplar: Option<&FragmentedDescription>,
        seed: u64,
    ) -> FragmentedDescription {
        let empty = FragmentedDescription::new(a.subject.clone(), vec![], vec![]);
        let ex = exemplar.unwrap_or(&empty);
        let mut rng = Rng::seed(seed).split("mutate");
        let out = match action_id {
            0 => self.act_intersect(a, b),
            1 => self.act_intersect_random_supplement(a, b, &mut rng),
            2 => self.act_differential(a, b, ex, &mut rng),
            _ => self.act_cross_fusion(a, b, ex, &mut rng),
        };
        FragmentedDescription {
            subject: a.subject.clone(),
            modifiers: sorted_unique(out.0),
            supplement: sorted_unique(out.1),
        }
    }

    /// Action 0: keep what the two descriptions agree on, in both fields.
    fn act_intersect(
        &self,
        a: &FragmentedDescription,
        b: &FragmentedDescription,
    ) -> (Vec<String>, Vec<String>) {
        (
            intersect(&a.modifiers, &b.modifiers),
            intersect(&a.supplement, &b.supplement),
        )
    }

    /// Action 1: modifier intersection, supplement taken wholesale from one
    /// operand (seeded coin).
    fn act_intersect_random_supplement(
        &self,
        a: &FragmentedDescription,
        b: &FragmentedDescription,
        rng: &mut Rng,
    ) -> (Vec<String>, Vec<String>) {
        let supplement = if rng.below(2) == 0 {
            a.supplement.clone()
        } else {
            b.supplement.clone()
        };
        (intersect(&a.modifiers, &b.modifiers), supplement)
    }

    /// Action 2: pick one token where the operands differ and replace it with
    /// style material drawn from the exemplar's description.
    fn act_differential(
        &self,
        a: &FragmentedDescription,
        b: &FragmentedDescription,
        ex: &FragmentedDescription,
        rng: &mut Rng,
    ) -> (Vec<String>, Vec<String>) {
        let mut mods = sorted_unique(a.modifiers.clone());
        let mut supp = sorted_unique(a.supplement.clone());
        let diff: Vec<(TokenClass, String)> = minus(&mods, &b.modifiers)
            .into_iter()
            .map(|t| (TokenClass::Modifier, t))
            .chain(
                minus(&supp, &b.supplement)
                    .into_iter()
                    .map(|t| (TokenClass::Supplement, t)),
            )
            .collect();
        if !diff.is_empty() {
            let (class, victim) = diff[rng.below(diff.len())].clone();
            let (field, source): (&mut Vec<String>, &[String]) = match class {
                TokenClass::Modifier => (&mut mods, &ex.modifiers),
                _ => (&mut supp, &ex.supplement),
            };
            field.retain(|t| *t != victim);
            let candidates = minus(&sorted_unique(source.to_vec()), field);
            if !candidates.is_empty() {
                field.push(candidates[rng.below(candidates.len())].clone());
            }
        } else {
            // Operands agree; pull one fresh exemplar token instead.
            let cand_mods = minus(&sorted_unique(ex.modifiers.clone()), &mods);
            let cand_supp = minus(&sorted_unique(ex.supplement.clone()), &supp);
            if !cand_mods.is_empty() {
                mods.push(cand_mods[rng.below(cand_mods.len())].clone());
            } else if !cand_supp.is_empty() {
                supp.push(cand_supp[rng.below(cand_supp.len())].clone());
            }
        }
        (mods, supp)
    }

    /// Action 3: seeded crossover of the two operands with exemplar tokens
    /// mixed into both fields.
    fn act_cross_fusion(
        &self,
        a: &FragmentedDescription,
        b: &FragmentedDescription,
        ex: &FragmentedDescription,
        rng: &mut Rng,
    ) -> (Vec<String>, Vec<String>) {
        let fuse = |xs: &[String], ys: &[String], ex_field: &[String], rng: &mut Rng| {
            let xs = sorted_unique(xs.to_vec());
            let ys = sorted_unique(ys.to_vec());
            let mut out = intersect(&xs, &ys);
            for t in minus(&xs, &ys).into_iter().chain(minus(&ys, &xs)) {
                if rng.below(2) == 0 {
                    out.push(t);
                }
            }
            let candidates = minus(&sorted_unique(ex_field.to_vec()), &out);
            if !candidates.is_empty() {
                out.push(candidates[rng.below(candidates.len())].clone());
                if candidates.len() > 1 && rng.below(2) == 0 {
                    let rest: Vec<String> = minus(&candidates, &out);
                    if !rest.is_empty() {
                        out.push(rest[rng.below(rest.len())].clone());
                    }
                }
            }
            out
        };
        (
            fuse(&a.modifiers, &b.modifiers, &ex.modifiers, rng),
            fuse(&a.supplement, &b.supplement, &ex.supplement, rng),
        )
    }

    /// Canonical normalization: `[SUBJECT]`, modifiers, supplement,
    /// comma-joined.
    pub fn normalize_body(&self, fragment: &FragmentedDescription) -> String {
        join_body(
            &sorted_unique(fragment.modifiers.clone()),
            &sorted_unique(fragment.supplement.clone()),
        )
    }

    // -- embeddings ----------------------------------------------------------

    fn role_salt(&self, role: BackendRole) -> u64 {
        let tag = match role {
            BackendRole::TextEmbedderReward | BackendRole::ImageEmbedderReward => "reward",
            BackendRole::TextEmbedderState => "state",
            other => other.name(),
        };
        self.cfg.hash_seed ^ hash_str(tag)
    }

    /// Dimension a token lands on under a role's hash basis.
    pub fn token_dim(&self, role: BackendRole, token: &str) -> usize {
        (hash_str(token) ^ self.role_salt(role)) as usize % self.cfg.embed_dim
    }

    fn project(&self, role: BackendRole, weights: &BTreeMap<String, f64>) -> Vec<f64> {
        let mut v = vec![0.0; self.cfg.embed_dim];
        for (token, w) in weights {
            v[self.token_dim(role, token)] += w;
        }
        v
    }
}

fn template_from_record(record: &TemplateRecord) -> crate::Result<SynthTemplate> {
    let class_of = |token: &str| -> TokenClass {
        if MODIFIER_WORDS.contains(&token) {
            TokenClass::Modifier
        } else if SUPPLEMENT_WORDS.contains(&token) {
            TokenClass::Supplement
        } else if SUBJECT_WORDS.contains(&token) {
            TokenClass::Subject
        } else {
            TokenClass::Modifier
        }
    };
    let mut modifiers = Vec::new();
    let mut supplement = Vec::new();
    for token in tokenize(&record.template) {
        if token == "subject" {
            continue; // the placeholder
        }
        match class_of(&token) {
            TokenClass::Supplement => supplement.push(token),
            _ => modifiers.push(token),
        }
    }
    let mut exemplar_seeds = Vec::with_capacity(record.exemplars.len());
    for ex in &record.exemplars {
        let seed = ex
            .image
            .as_str()
            .strip_prefix("synth:")
            .and_then(|rest| rest.split('/').nth(2))
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| crate::Error::Dataset {
                record_id: record.id.clone(),
                field: "exemplars.image".into(),
                message: format!("not a synth uri: {:?}", ex.image.as_str()),
            })?;
        exemplar_seeds.push(seed);
    }
    Ok(SynthTemplate {
        id: record.id.clone(),
        difficulty: record.difficulty,
        modifiers: sorted_unique(modifiers),
        supplement: sorted_unique(supplement),
        subjects: record.exemplars.iter().map(|e| e.subject.clone()).collect(),
        exemplar_seeds,
    })
}

// ---------------------------------------------------------------------------
// Token helpers
// ---------------------------------------------------------------------------

/// Lowercase alphanumeric word split, duplicates preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn sorted_unique(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v.dedup();
    v
}

fn intersect(a: &[String], b: &[String]) -> Vec<String> {
    let bs: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    sorted_unique(
        a.iter()
            .filter(|t| bs.contains(t.as_str()))
            .cloned()
            .collect(),
    )
}

fn minus(a: &[String], b: &[String]) -> Vec<String> {
    let bs: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    sorted_unique(
        a.iter()
            .filter(|t| !bs.contains(t.as_str()))
            .cloned()
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Backend trait implementations
// ---------------------------------------------------------------------------

impl ChatBackend for SimWorld {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        match &request.payload {
            ChatPayload::Describe { image } => Ok(self.describe(image)?.to_block()),
            ChatPayload::Summarize { fragments } => Ok(self.summarize(fragments).to_block()),
            ChatPayload::Mutate {
                action_id,
                a,
                b,
                exemplar,
                seed,
            } => Ok(self
                .mutate(*action_id, a, b, exemplar.as_ref(), *seed)
                .to_block()),
            ChatPayload::Normalize { fragment } => Ok(format!(
                "```template\n{}\n```",
                self.normalize_body(fragment)
            )),
        }
    }
}

impl ImageBackend for SimWorld {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef, GatewayError> {
        let tokens = sorted_unique(tokenize(prompt));
        if tokens.is_empty() {
            return Err(GatewayError::DegenerateInput {
                role: BackendRole::ImageGenerator,
                message: "prompt has no tokens".into(),
            });
        }
        Ok(ImageRef(format!("synthgen:{seed}:{}", tokens.join("+"))))
    }
}

impl EmbedBackend for SimWorld {
    fn embed_text(&self, role: BackendRole, text: &str) -> Result<Vec<f64>, GatewayError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(GatewayError::DegenerateInput {
                role,
                message: "text has no tokens".into(),
            });
        }
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_insert(0.0) += 1.0;
        }
        Ok(self.project(role, &counts))
    }

    fn embed_image(&self, role: BackendRole, image: &ImageRef) -> Result<Vec<f64>, GatewayError> {
        let img = self.resolve_image(image)?;
        Ok(self.project(role, &img.features))
    }
}
