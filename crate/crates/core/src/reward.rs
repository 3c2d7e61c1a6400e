//! The three reward components and their weighted combination.
//!
//! - r1 (text–image matching): mean cosine between the embeddings of the
//!   template rendered with each exemplar subject and the exemplar images.
//! - r2 (sampled-image matching): one exemplar drawn at random, one image
//!   generated from the rendered template, cosine between the two images.
//!   This is the only component that spends generation queries.
//! - r3 (target-template approximation): cosine between the candidate
//!   template body and the ground-truth template text. Training only.
//!
//! Cosines are kept raw in [-1, 1]; no affine rescaling.

use serde::{Deserialize, Serialize};

use crate::dataset::Exemplar;
use crate::error::Error;
use crate::gateway::{BackendRole, Gateway};
use crate::numerics::cosine_similarity;
use crate::rng::Rng;
use crate::template::PromptTemplate;
use crate::Result;

/// Weighting coefficients of the combined reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda1: 0.4,
            lambda2: 0.4,
            lambda3: 0.2,
        }
    }
}

impl RewardWeights {
    fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-step reward components plus the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    /// `None` when image sampling is disabled (attack time).
    pub r2: Option<f64>,
    pub r3: f64,
    pub weights: RewardWeights,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn r2_enabled(&self) -> bool {
        self.r2.is_some()
    }
}

/// r1: average text–image cosine over the exemplar set.
pub fn reward_text_image(
    gateway: &Gateway,
    template: &PromptTemplate,
    exemplars: &[Exemplar],
) -> Result<f64> {
    if exemplars.is_empty() {
        return Err(Error::Degenerate("r1 needs at least one exemplar".into()));
    }
    let mut total = 0.0;
    for exemplar in exemplars {
        let prompt = template.render(&exemplar.subject);
        let text = gateway.embed_text(BackendRole::TextEmbedderReward, &prompt)?;
        let image = gateway.embed_image(BackendRole::ImageEmbedderReward, &exemplar.image)?;
        total += cosine_similarity(&text, &image)?;
    }
    Ok(total / exemplars.len() as f64)
}

/// r2: generate one image from the template rendered with one randomly
/// selected exemplar subject, and compare it with that exemplar. Spends
/// exactly one generation query.
pub fn reward_sampled_image(
    gateway: &Gateway,
    template: &PromptTemplate,
    exemplars: &[Exemplar],
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    if exemplars.is_empty() {
        return Err(Error::Degenerate("r2 needs at least one exemplar".into()));
    }
    let picked = rng.below(exemplars.len());
    let exemplar = &exemplars[picked];
    let prompt = template.render(&exemplar.subject);
    let generated = gateway.generate_image(&prompt, rng.next_u64())?;
    let gen_vec = gateway.embed_image(BackendRole::ImageEmbedderReward, &generated)?;
    let ref_vec = gateway.embed_image(BackendRole::ImageEmbedderReward, &exemplar.image)?;
    Ok((cosine_similarity(&gen_vec, &ref_vec)?, picked))
}

/// r3: closeness of the candidate template text to the ground truth.
pub fn reward_template_approx(
    gateway: &Gateway,
    template: &PromptTemplate,
    ground_truth: &str,
) -> Result<f64> {
    if ground_truth.trim().is_empty() {
        return Err(Error::Misuse(
            "r3 requires the ground-truth template (training phase only)".into(),
        ));
    }
    let candidate = gateway.embed_text(BackendRole::TextEmbedderReward, template.body())?;
    let truth = gateway.embed_text(BackendRole::TextEmbedderReward, ground_truth)?;
    cosine_similarity(&candidate, &truth)
}

/// Weighted combination. With r2 disabled the remaining weights are
/// renormalized so the total stays in the same range.
pub fn combine(r1: f64, r2: Option<f64>, r3: f64, weights: &RewardWeights) -> Result<f64> {
    weights.validate()?;
    match r2 {
        Some(r2) => {
            if weights.lambda1 + weights.lambda2 + weights.lambda3 == 0.0 {
                return Err(Error::Config("all reward weights are zero".into()));
            }
            Ok(weights.lambda1 * r1 + weights.lambda2 * r2 + weights.lambda3 * r3)
        }
        None => {
            let denom = weights.lambda1 + weights.lambda3;
            if denom == 0.0 {
                return Err(Error::Config(
                    "lambda1 + lambda3 must be positive when r2 is disabled".into(),
                ));
            }
            Ok((weights.lambda1 * r1 + weights.lambda3 * r3) / denom)
        }
    }
}

/// Computes the full breakdown for one candidate template.
pub fn evaluate_breakdown(
    gateway: &Gateway,
    template: &PromptTemplate,
    exemplars: &[Exemplar],
    ground_truth: &str,
    weights: &RewardWeights,
    r2_enabled: bool,
    rng: &mut Rng,
) -> Result<RewardBreakdown> {
    let r1 = reward_text_image(gateway, template, exemplars)?;
    let r2 = if r2_enabled {
        Some(reward_sampled_image(gateway, template, exemplars, rng)?.0)
    } else {
        None
    };
    let r3 = reward_template_approx(gateway, template, ground_truth)?;
    let total = combine(r1, r2, r3, weights)?;
    Ok(RewardBreakdown {
        r1,
        r2,
        r3,
        weights: *weights,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::GatewayError;
    use crate::gateway::{EmbedBackend, ImageRef, UsageMeter};
    use crate::simworld::{generate_templates, SimConfig, SimWorld};
    use std::sync::Arc;

    fn quiet_world() -> (Arc<SimWorld>, Gateway) {
        let cfg = SimConfig {
            sigma_easy: 0.0,
            sigma_hard: 0.0,
            sigma_gen: 0.0,
            dropout_easy: 0.0,
            dropout_hard: 0.0,
            ..SimConfig::default()
        };
        let world = Arc::new(SimWorld::new(cfg, generate_templates(3, 2, 0)));
        let gw = SimWorld::bind_gateway(&world, UsageMeter::with_default_costs());
        (world, gw)
    }

    fn ground_truth_template(
        world: &SimWorld,
        id: &str,
    ) -> (PromptTemplate, Vec<Exemplar>, String) {
        let t = world.template(id).unwrap();
        let record = t.to_record();
        let template = PromptTemplate::new(
            record.template.clone(),
            t.modifiers.clone(),
            t.supplement.clone(),
        )
        .unwrap();
        (template, record.in_domain().to_vec(), record.template)
    }

    #[test]
    fn perfect_template_maxes_r1_and_r3() {
        let (world, gw) = quiet_world();
        let (template, exemplars, truth) = ground_truth_template(&world, "easy-000");
        let r1 = reward_text_image(&gw, &template, &exemplars).unwrap();
        assert!((r1 - 1.0).abs() < 1e-12, "r1 {r1}");
        let r3 = reward_template_approx(&gw, &template, &truth).unwrap();
        assert!((r3 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn r1_is_exemplar_order_invariant() {
        let (world, gw) = quiet_world();
        let (_, exemplars, _) = ground_truth_template(&world, "easy-000");
        let partial = PromptTemplate::new("[SUBJECT], pastel, neon", vec![], vec![]).unwrap();
        let forward = reward_text_image(&gw, &partial, &exemplars).unwrap();
        let mut reversed = exemplars.clone();
        reversed.reverse();
        let backward = reward_text_image(&gw, &partial, &reversed).unwrap();
        assert!((forward - backward).abs() < 1e-15);
    }

    /// Fixture embedder that pins the text vector and two image vectors to
    /// chosen cosines (0.4 and 0.8 against the text).
    struct ForcedCosines;

    impl EmbedBackend for ForcedCosines {
        fn embed_text(&self, _role: BackendRole, _text: &str) -> Result<Vec<f64>, GatewayError> {
            Ok(vec![1.0, 0.0, 0.0])
        }
        fn embed_image(
            &self,
            _role: BackendRole,
            image: &ImageRef,
        ) -> Result<Vec<f64>, GatewayError> {
            match image.as_str() {
                "fixture:a" => Ok(vec![0.4, (1.0f64 - 0.16).sqrt(), 0.0]),
                _ => Ok(vec![0.8, 0.0, 0.6]),
            }
        }
    }

    #[test]
    fn r1_is_the_arithmetic_mean_of_pair_cosines() {
        let gw = Gateway::builder()
            .embedder(BackendRole::TextEmbedderReward, Arc::new(ForcedCosines), 3)
            .embedder(BackendRole::ImageEmbedderReward, Arc::new(ForcedCosines), 3)
            .build();
        let template = PromptTemplate::new("[SUBJECT], x", vec![], vec![]).unwrap();
        let exemplars = vec![
            Exemplar {
                subject: "s1".into(),
                image: ImageRef("fixture:a".into()),
            },
            Exemplar {
                subject: "s2".into(),
                image: ImageRef("fixture:b".into()),
            },
        ];
        let r1 = reward_text_image(&gw, &template, &exemplars).unwrap();
        assert!((r1 - 0.6).abs() < 1e-12, "r1 {r1}");
    }

    #[test]
    fn r2_spends_exactly_one_generation_query() {
        let (world, gw) = quiet_world();
        let (template, exemplars, _) = ground_truth_template(&world, "easy-000");
        let before = gw.usage().count(BackendRole::ImageGenerator);
        let mut rng = Rng::seed(4);
        reward_sampled_image(&gw, &template, &exemplars, &mut rng).unwrap();
        assert_eq!(gw.usage().count(BackendRole::ImageGenerator), before + 1);
    }

    #[test]
    fn r2_of_ground_truth_is_above_noise_floor() {
        // Default noise this time: generated and exemplar images share the
        // same token set, so the cosine stays >= 0.9 at sigma 0.05.
        let world = Arc::new(SimWorld::new(
            SimConfig::default(),
            generate_templates(3, 2, 0),
        ));
        let gw = SimWorld::bind_gateway(&world, UsageMeter::with_default_costs());
        let (template, exemplars, _) = ground_truth_template(&world, "easy-000");
        let mut rng = Rng::seed(11);
        let (r2, _) = reward_sampled_image(&gw, &template, &exemplars, &mut rng).unwrap();
        assert!(r2 >= 0.9, "r2 {r2}");
    }

    #[test]
    fn r2_exemplar_pick_is_seed_deterministic() {
        let (world, gw) = quiet_world();
        let (template, exemplars, _) = ground_truth_template(&world, "easy-000");
        let (_, pick_a) =
            reward_sampled_image(&gw, &template, &exemplars, &mut Rng::seed(21)).unwrap();
        let (_, pick_b) =
            reward_sampled_image(&gw, &template, &exemplars, &mut Rng::seed(21)).unwrap();
        assert_eq!(pick_a, pick_b);
    }

    #[test]
    fn r3_fixtures() {
        let (_, gw) = quiet_world();
        let same = PromptTemplate::new("[SUBJECT], pastel, neon", vec![], vec![]).unwrap();
        assert!(
            (reward_template_approx(&gw, &same, "[SUBJECT], pastel, neon").unwrap() - 1.0).abs()
                < 1e-15
        );

        let a = PromptTemplate::new("[SUBJECT], pastel, neon", vec![], vec![]).unwrap();
        let err = reward_template_approx(&gw, &a, "  ").unwrap_err();
        assert!(matches!(err, Error::Misuse(_)));
    }

    #[test]
    fn r3_partial_overlap_is_exact_tf_cosine() {
        let (_, gw) = quiet_world();
        // {subject,pastel,neon} vs {subject,neon,sepia}: 2 shared of 3 each.
        let a = PromptTemplate::new("[SUBJECT], pastel, neon", vec![], vec![]).unwrap();
        let r3 = reward_template_approx(&gw, &a, "[SUBJECT], neon, sepia").unwrap();
        assert!((r3 - 2.0 / 3.0).abs() < 1e-12, "r3 {r3}");
    }

    #[test]
    fn combine_fixtures() {
        let w = RewardWeights::default();
        assert_eq!(w.lambda1, 0.4);
        assert_eq!(w.lambda2, 0.4);
        assert_eq!(w.lambda3, 0.2);

        assert!((combine(1.0, Some(1.0), 1.0, &w).unwrap() - 1.0).abs() < 1e-15);
        assert!((combine(0.5, Some(0.25), 0.1, &w).unwrap() - 0.32).abs() < 1e-15);
    }

    #[test]
    fn combine_renormalizes_when_r2_disabled() {
        let w = RewardWeights::default();
        let total = combine(0.6, None, 0.6, &w).unwrap();
        assert!((total - 0.6).abs() < 1e-15);
        let uneven = combine(1.0, None, 0.0, &w).unwrap();
        assert!((uneven - 0.4 / 0.6000000000000001).abs() < 1e-12);
    }

    #[test]
    fn combine_rejects_degenerate_weights() {
        let zero = RewardWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        };
        assert!(combine(1.0, Some(1.0), 1.0, &zero).is_err());
        let only_r2 = RewardWeights {
            lambda1: 0.0,
            lambda2: 1.0,
            lambda3: 0.0,
        };
        assert!(combine(1.0, None, 1.0, &only_r2).is_err());
        let negative = RewardWeights {
            lambda1: -0.1,
            lambda2: 0.6,
            lambda3: 0.5,
        };
        assert!(combine(1.0, Some(1.0), 1.0, &negative).is_err());
    }

    #[test]
    fn convex_total_stays_within_component_range() {
        let mut rng = Rng::seed(8);
        for _ in 0..200 {
            let r1 = rng.uniform(-1.0, 1.0);
            let r2 = rng.uniform(-1.0, 1.0);
            let r3 = rng.uniform(-1.0, 1.0);
            let a = rng.uniform(0.0, 1.0);
            let b = rng.uniform(0.0, 1.0 - a);
            let w = RewardWeights {
                lambda1: a,
                lambda2: b,
                lambda3: 1.0 - a - b,
            };
            let total = combine(r1, Some(r2), r3, &w).unwrap();
            let lo = r1.min(r2).min(r3) - 1e-12;
            let hi = r1.max(r2).max(r3) + 1e-12;
            assert!(total >= lo && total <= hi);
        }
    }

    #[test]
    fn breakdown_total_matches_combine() {
        let (world, gw) = quiet_world();
        let (template, exemplars, truth) = ground_truth_template(&world, "easy-001");
        let weights = RewardWeights::default();
        let mut rng = Rng::seed(2);
        let b = evaluate_breakdown(&gw, &template, &exemplars, &truth, &weights, true, &mut rng)
            .unwrap();
        assert!(b.r2_enabled());
        let expect = combine(b.r1, b.r2, b.r3, &weights).unwrap();
        assert_eq!(b.total, expect);
        assert!(b.total >= -1.0 && b.total <= 1.0);
    }
}
