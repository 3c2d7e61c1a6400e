//! Five-metric evaluation, the random-mutation baseline, and reporting.
//!
//! A stolen template is scored the way the benchmark tables lay it out:
//! three image metrics (subject features plus two style feature spaces)
//! comparing images generated from the stolen template against the original
//! exemplars, and two text metrics comparing the stolen template text with
//! the ground truth. The Queries column counts generation calls spent to
//! *obtain* the template (zero for the policy attack and for the random
//! baseline — both rank candidates by embeddings only); evaluation's own
//! generation usage shows up in the usage report instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Difficulty, TemplateRecord};
use crate::environment::{
    best_of_pool, pooled_walk, Env, EnvConfig, PromptAssets, VisitedTemplate,
};
use crate::error::{Error, GatewayError};
use crate::gateway::{BackendRole, Gateway};
use crate::numerics::cosine_similarity;
use crate::policy::ACTION_COUNT;
use crate::rng::Rng;
use crate::template::PromptTemplate;
use crate::Result;

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// One table row: five similarity metrics, their mean, and the number of
/// generation queries the attack spent to obtain the template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub dino: f64,
    pub clip_img: f64,
    pub clip_txt: f64,
    pub siglip_img: f64,
    pub siglip_txt: f64,
    pub average: f64,
    pub queries: u64,
}

impl MetricScores {
    pub fn new(
        dino: f64,
        clip_img: f64,
        clip_txt: f64,
        siglip_img: f64,
        siglip_txt: f64,
        queries: u64,
    ) -> Self {
        let average = (dino + clip_img + clip_txt + siglip_img + siglip_txt) / 5.0;
        MetricScores {
            dino,
            clip_img,
            clip_txt,
            siglip_img,
            siglip_txt,
            average,
            queries,
        }
    }

    pub const METRIC_NAMES: [&'static str; 6] = [
        "dino",
        "clip_img",
        "clip_txt",
        "siglip_img",
        "siglip_txt",
        "average",
    ];

    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "dino" => self.dino,
            "clip_img" => self.clip_img,
            "clip_txt" => self.clip_txt,
            "siglip_img" => self.siglip_img,
            "siglip_txt" => self.siglip_txt,
            "average" => self.average,
            other => panic!("unknown metric {other}"),
        }
    }
}

/// Which exemplar slice an evaluation ran against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    InDomain,
    OutDomain,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::InDomain => "in",
            Domain::OutDomain => "out",
        })
    }
}

/// Scores plus evaluation bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub scores: MetricScores,
    /// Generation queries spent by the evaluation itself.
    pub eval_generations: u64,
    /// Exemplars skipped because the generator refused the prompt.
    pub skipped: usize,
}

/// Evaluates one stolen template against one record's exemplars for the
/// requested domain. `attack_queries` is carried into the Queries column.
pub fn evaluate_template(
    gateway: &Gateway,
    stolen: &PromptTemplate,
    record: &TemplateRecord,
    domain: Domain,
    attack_queries: u64,
    rng: &mut Rng,
) -> Result<EvalOutcome> {
    let exemplars = match domain {
        Domain::InDomain => record.in_domain(),
        Domain::OutDomain => record.out_domain(),
    };
    if exemplars.is_empty() {
        return Err(Error::Degenerate(format!(
            "record {} has no {domain}-domain exemplars",
            record.id
        )));
    }

    let image_roles = [
        BackendRole::EvalDino,
        BackendRole::EvalClipImage,
        BackendRole::EvalSiglipImage,
    ];
    let mut sums = [0.0f64; 3];
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut generations = 0u64;
    for exemplar in exemplars {
        let prompt = stolen.render(&exemplar.subject);
        let generated = match gateway.generate_image(&prompt, rng.next_u64()) {
            Ok(image) => {
                generations += 1;
                image
            }
            Err(GatewayError::Refused { .. }) => {
                generations += 1; // refusals are counted and costed
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for (sum, role) in sums.iter_mut().zip(image_roles) {
            let gen_vec = gateway.embed_image(role, &generated)?;
            let ref_vec = gateway.embed_image(role, &exemplar.image)?;
            *sum += cosine_similarity(&gen_vec, &ref_vec)?;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(format!(
            "every generation was refused for record {}",
            record.id
        )));
    }

    let text_metric = |role: BackendRole| -> Result<f64> {
        let a = gateway.embed_text(role, stolen.body())?;
        let b = gateway.embed_text(role, &record.template)?;
        cosine_similarity(&a, &b)
    };

    let scores = MetricScores::new(
        sums[0] / used as f64,
        sums[1] / used as f64,
        text_metric(BackendRole::EvalClipText)?,
        sums[2] / used as f64,
        text_metric(BackendRole::EvalSiglipText)?,
        attack_queries,
    );
    Ok(EvalOutcome {
        scores,
        eval_generations: generations,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Random-mutation baseline
// ---------------------------------------------------------------------------

/// Outcome of the fitness-pooling random baseline.
#[derive(Debug, Clone)]
pub struct RandomAttackOutcome {
    pub template_id: String,
    pub template: PromptTemplate,
    pub r1: f64,
    pub pool: Vec<VisitedTemplate>,
}

/// The ablation baseline: starting from the warm start, take `horizon`
/// uniformly random actions, pool every candidate with its r1 fitness, and
/// return the argmax (ties toward the earliest). No image generation.
pub fn random_attack(
    record: &TemplateRecord,
    gateway: Arc<Gateway>,
    assets: Arc<PromptAssets>,
    cfg: &EnvConfig,
    rng: &mut Rng,
) -> Result<RandomAttackOutcome> {
    let cfg = EnvConfig {
        r2_enabled: false,
        ..cfg.clone()
    };
    let env = Env::new(record.clone(), gateway, assets, cfg);
    let pool = pooled_walk(&env, rng, |_, walk_rng| Ok(walk_rng.below(ACTION_COUNT)))?;
    let best = best_of_pool(&pool);
    Ok(RandomAttackOutcome {
        template_id: record.id.clone(),
        template: pool[best].template.clone(),
        r1: pool[best].r1,
        pool,
    })
}

// ---------------------------------------------------------------------------
// Benchmark report
// ---------------------------------------------------------------------------

/// One evaluated (template, domain) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub template_id: String,
    pub difficulty: Difficulty,
    pub domain: Domain,
    pub scores: MetricScores,
    pub skipped: usize,
}

/// Distribution statistics for one metric across rows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistributionStats {
    pub median: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

/// All per-template results of one evaluation run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
}

impl BenchmarkReport {
    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    fn section(&self, difficulty: Difficulty, domain: Domain) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.difficulty == difficulty && r.domain == domain)
            .collect()
    }

    /// Mean scores over one difficulty × domain section.
    pub fn aggregate(&self, difficulty: Difficulty, domain: Domain) -> Option<MetricScores> {
        let rows = self.section(difficulty, domain);
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricScores) -> f64| rows.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
        let queries: u64 = rows.iter().map(|r| r.scores.queries).sum();
        Some(MetricScores::new(
            mean(|s| s.dino),
            mean(|s| s.clip_img),
            mean(|s| s.clip_txt),
            mean(|s| s.siglip_img),
            mean(|s| s.siglip_txt),
            queries,
        ))
    }

    /// Median/IQR/min/max of one metric over every row.
    pub fn distribution(&self, metric: &str) -> Option<DistributionStats> {
        if self.rows.is_empty() {
            return None;
        }
        let values: Vec<f64> = self.rows.iter().map(|r| r.scores.metric(metric)).collect();
        Some(DistributionStats {
            median: quantile(&values, 0.5),
            iqr: quantile(&values, 0.75) - quantile(&values, 0.25),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// CSV with one row per evaluated template plus AGGREGATE rows, grouped
    /// into the four difficulty × domain sections. Floats keep their shortest
    /// round-trip representation, so parsing the file back reproduces the
    /// report exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "section,template_id,dino,clip_img,clip_txt,siglip_img,siglip_txt,average,queries\n",
        );
        for (difficulty, domain) in SECTION_ORDER {
            let rows = self.section(difficulty, domain);
            for row in &rows {
                let s = &row.scores;
                let _ = writeln!(
                    out,
                    "{difficulty}/{domain},{},{},{},{},{},{},{},{}",
                    row.template_id,
                    s.dino,
                    s.clip_img,
                    s.clip_txt,
                    s.siglip_img,
                    s.siglip_txt,
                    s.average,
                    s.queries
                );
            }
            if let Some(agg) = self.aggregate(difficulty, domain) {
                let _ = writeln!(
                    out,
                    "{difficulty}/{domain},AGGREGATE,{},{},{},{},{},{},{}",
                    agg.dino,
                    agg.clip_img,
                    agg.clip_txt,
                    agg.siglip_img,
                    agg.siglip_txt,
                    agg.average,
                    agg.queries
                );
            }
        }
        out
    }

    /// Aligned-text rendering of the four sections.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (difficulty, domain) in SECTION_ORDER {
            let rows = self.section(difficulty, domain);
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(out, "== {difficulty} benchmark, {domain}-domain ==");
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>8} {:>8} {:>10} {:>10} {:>8} {:>7}",
                "template",
                "DINO",
                "CLIPimg",
                "CLIPtxt",
                "SigLIPimg",
                "SigLIPtxt",
                "Average",
                "Queries"
            );
            for row in &rows {
                let s = &row.scores;
                let _ = writeln!(
                    out,
                    "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>8.4} {:>7}",
                    row.template_id,
                    s.dino,
                    s.clip_img,
                    s.clip_txt,
                    s.siglip_img,
                    s.siglip_txt,
                    s.average,
                    s.queries
                );
            }
            if let Some(s) = self.aggregate(difficulty, domain) {
                let _ = writeln!(
                    out,
                    "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>8.4} {:>7}",
                    "AGGREGATE",
                    s.dino,
                    s.clip_img,
                    s.clip_txt,
                    s.siglip_img,
                    s.siglip_txt,
                    s.average,
                    s.queries
                );
            }
            out.push('\n');
        }
        out
    }

    /// Parses a CSV produced by [`Self::to_csv`] (AGGREGATE rows excluded).
    pub fn from_csv(text: &str) -> Result<BenchmarkReport> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(Error::Config(format!(
                    "csv line {} has {} fields, expected 9",
                    i + 1,
                    fields.len()
                )));
            }
            if fields[1] == "AGGREGATE" {
                continue;
            }
            let (difficulty, domain) = fields[0]
                .split_once('/')
                .ok_or_else(|| Error::Config(format!("bad section {:?}", fields[0])))?;
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
            };
            rows.push(ReportRow {
                template_id: fields[1].to_string(),
                difficulty: difficulty.parse()?,
                domain: match domain {
                    "in" => Domain::InDomain,
                    "out" => Domain::OutDomain,
                    other => return Err(Error::Config(format!("bad domain {other:?}"))),
                },
                scores: MetricScores {
                    dino: parse(fields[2])?,
                    clip_img: parse(fields[3])?,
                    clip_txt: parse(fields[4])?,
                    siglip_img: parse(fields[5])?,
                    siglip_txt: parse(fields[6])?,
                    average: parse(fields[7])?,
                    queries: fields[8]
                        .parse()
                        .map_err(|e| Error::Config(format!("bad queries: {e}")))?,
                },
                skipped: 0,
            });
        }
        Ok(BenchmarkReport { rows })
    }
}

const SECTION_ORDER: [(Difficulty, Domain); 4] = [
    (Difficulty::Easy, Domain::InDomain),
    (Difficulty::Easy, Domain::OutDomain),
    (Difficulty::Hard, Domain::InDomain),
    (Difficulty::Hard, Domain::OutDomain),
];

/// Linear-interpolation quantile (the numpy default).
fn quantile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

// ---------------------------------------------------------------------------
// Strategy comparison
// ---------------------------------------------------------------------------

/// Per-seed aggregate of one strategy arm: the mean scores over the
/// benchmark templates obtained with that seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seed: u64,
    pub scores: MetricScores,
}

/// Median/IQR comparison for one metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub policy_median: f64,
    pub random_median: f64,
    pub policy_iqr: f64,
    pub random_iqr: f64,
    pub policy_median_higher: bool,
    pub policy_iqr_smaller: bool,
}

/// Output of [`compare_runs`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: usize,
    pub per_metric: Vec<MetricComparison>,
}

impl ComparisonReport {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.per_metric.iter().find(|m| m.metric == name)
    }
}

/// Compares the trained-policy arm against the random baseline arm over
/// matched seeds: per-metric medians and IQRs, with flags for the claims
/// "higher median" and "smaller IQR".
pub fn compare_runs(
    policy: &[SeedAggregate],
    random: &[SeedAggregate],
) -> Result<ComparisonReport> {
    if policy.len() != random.len() || policy.is_empty() {
        return Err(Error::Config(format!(
            "comparison needs matched non-empty arms, got {} vs {}",
            policy.len(),
            random.len()
        )));
    }
    let per_metric = MetricScores::METRIC_NAMES
        .iter()
        .map(|name| {
            let pv: Vec<f64> = policy.iter().map(|s| s.scores.metric(name)).collect();
            let rv: Vec<f64> = random.iter().map(|s| s.scores.metric(name)).collect();
            let policy_median = quantile(&pv, 0.5);
            let random_median = quantile(&rv, 0.5);
            let policy_iqr = quantile(&pv, 0.75) - quantile(&pv, 0.25);
            let random_iqr = quantile(&rv, 0.75) - quantile(&rv, 0.25);
            MetricComparison {
                metric: (*name).to_string(),
                policy_median,
                random_median,
                policy_iqr,
                random_iqr,
                policy_median_higher: policy_median > random_median,
                policy_iqr_smaller: policy_iqr < random_iqr,
            }
        })
        .collect();
    Ok(ComparisonReport {
        seeds: policy.len(),
        per_metric,
    })
}

/// Long-format distribution CSV (`seed,arm,metric,value`) for external
/// plotting tools.
pub fn distribution_csv(policy: &[SeedAggregate], random: &[SeedAggregate]) -> String {
    let mut out = String::from("seed,arm,metric,value\n");
    for (arm, aggregates) in [("policy", policy), ("random", random)] {
        for agg in aggregates {
            for name in MetricScores::METRIC_NAMES {
                let _ = writeln!(out, "{},{arm},{name},{}", agg.seed, agg.scores.metric(name));
            }
        }
    }
    out
}

/// Mean of per-template scores, used to fold one seed's results into a
/// [`SeedAggregate`].
pub fn mean_scores(scores: &[MetricScores]) -> Option<MetricScores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&MetricScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Some(MetricScores::new(
        mean(|s| s.dino),
        mean(|s| s.clip_img),
        mean(|s| s.clip_txt),
        mean(|s| s.siglip_img),
        mean(|s| s.siglip_txt),
        scores.iter().map(|s| s.queries).sum(),
    ))
}

/// Published baseline rows for side-by-side display (scores on the 0–100
/// scale), keyed by method name.
pub type ManualRows = BTreeMap<String, MetricScores>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synth_dataset;
    use crate::gateway::UsageMeter;
    use crate::simworld::{SimConfig, SimWorld};

    fn sim_gateway(sigma: f64, dropout: f64) -> (Arc<Gateway>, Vec<TemplateRecord>) {
        let manifest = gen_synth_dataset(17, 3, 1).unwrap();
        let cfg = SimConfig {
            sigma_easy: sigma,
            sigma_hard: sigma,
            sigma_gen: sigma,
            dropout_easy: dropout,
            dropout_hard: dropout,
            ..SimConfig::default()
        };
        let world = Arc::new(SimWorld::from_manifest(cfg, &manifest).unwrap());
        let gw = Arc::new(SimWorld::bind_gateway(
            &world,
            UsageMeter::with_default_costs(),
        ));
        (gw, manifest.records)
    }

    fn truth_template(record: &TemplateRecord) -> PromptTemplate {
        PromptTemplate::new(record.template.clone(), vec![], vec![]).unwrap()
    }

    #[test]
    fn ground_truth_scores_one_on_quiet_simulator() {
        let (gw, records) = sim_gateway(0.0, 0.0);
        let record = &records[0];
        let outcome = evaluate_template(
            &gw,
            &truth_template(record),
            record,
            Domain::InDomain,
            0,
            &mut Rng::seed(5),
        )
        .unwrap();
        let s = outcome.scores;
        for v in [
            s.dino,
            s.clip_img,
            s.clip_txt,
            s.siglip_img,
            s.siglip_txt,
            s.average,
        ] {
            assert!((v - 1.0).abs() < 1e-9, "{s:?}");
        }
        assert_eq!(s.queries, 0);
        assert_eq!(outcome.eval_generations, 5);
        assert_eq!(outcome.skipped, 0);
    }

    #[test]
    fn published_easy_in_domain_row_averages_to_80_10() {
        let s = MetricScores::new(73.87, 85.11, 79.98, 86.89, 74.63, 0);
        assert!((s.average - 80.10).abs() < 0.005, "average {}", s.average);
    }

    #[test]
    fn average_matches_independent_mean_oracle() {
        let mut rng = Rng::seed(3);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let s = MetricScores::new(vals[0], vals[1], vals[2], vals[3], vals[4], 1);
            let oracle = vals.iter().sum::<f64>() / 5.0;
            assert!((s.average - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn out_domain_uses_the_held_out_exemplars() {
        let (gw, records) = sim_gateway(0.0, 0.0);
        let record = &records[0];
        let outcome = evaluate_template(
            &gw,
            &truth_template(record),
            record,
            Domain::OutDomain,
            0,
            &mut Rng::seed(6),
        )
        .unwrap();
        assert_eq!(outcome.eval_generations, 4);
    }

    #[test]
    fn evaluation_is_deterministic_on_the_simulator() {
        let (gw, records) = sim_gateway(0.05, 0.1);
        let record = &records[1];
        let run = |seed| {
            evaluate_template(
                &gw,
                &truth_template(record),
                record,
                Domain::InDomain,
                0,
                &mut Rng::seed(seed),
            )
            .unwrap()
            .scores
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(a, b);
    }

    #[test]
    fn random_attack_pools_nine_candidates_and_returns_the_argmax() {
        let (gw, records) = sim_gateway(0.05, 0.3);
        let assets = Arc::new(PromptAssets::default());
        let outcome = random_attack(
            &records[0],
            gw.clone(),
            assets,
            &EnvConfig::default(),
            &mut Rng::seed(33),
        )
        .unwrap();
        assert_eq!(outcome.pool.len(), 9);
        let max = outcome
            .pool
            .iter()
            .map(|v| v.r1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.r1, max);
        for v in &outcome.pool {
            assert!(outcome.r1 >= v.r1);
        }
        // Zero image generation on this path.
        assert_eq!(gw.usage().count(BackendRole::ImageGenerator), 0);
    }

    #[test]
    fn random_attack_is_seed_deterministic() {
        let (gw, records) = sim_gateway(0.05, 0.3);
        let assets = Arc::new(PromptAssets::default());
        let a = random_attack(
            &records[0],
            gw.clone(),
            assets.clone(),
            &EnvConfig::default(),
            &mut Rng::seed(4),
        )
        .unwrap();
        let b = random_attack(
            &records[0],
            gw,
            assets,
            &EnvConfig::default(),
            &mut Rng::seed(4),
        )
        .unwrap();
        assert_eq!(a.template.body(), b.template.body());
        assert_eq!(a.r1.to_bits(), b.r1.to_bits());
    }

    fn sample_report() -> BenchmarkReport {
        let mut report = BenchmarkReport::default();
        let mut rng = Rng::seed(10);
        for difficulty in [Difficulty::Easy, Difficulty::Hard] {
            for domain in [Domain::InDomain, Domain::OutDomain] {
                for i in 0..3 {
                    let mut v = || rng.uniform(0.0, 1.0);
                    let scores = MetricScores::new(v(), v(), v(), v(), v(), 0);
                    report.push(ReportRow {
                        template_id: format!("{difficulty}-{i:03}"),
                        difficulty,
                        domain,
                        scores,
                        skipped: 0,
                    });
                }
            }
        }
        report
    }

    #[test]
    fn csv_has_the_published_column_order() {
        let report = sample_report();
        let csv = report.to_csv();
        assert!(csv.starts_with(
            "section,template_id,dino,clip_img,clip_txt,siglip_img,siglip_txt,average,queries\n"
        ));
        // Four AGGREGATE rows, one per section.
        assert_eq!(csv.matches("AGGREGATE").count(), 4);
    }

    #[test]
    fn empty_report_emits_header_only() {
        let report = BenchmarkReport::default();
        assert_eq!(
            report.to_csv(),
            "section,template_id,dino,clip_img,clip_txt,siglip_img,siglip_txt,average,queries\n"
        );
        assert!(report
            .aggregate(Difficulty::Easy, Domain::InDomain)
            .is_none());
    }

    #[test]
    fn csv_round_trip_reproduces_scores_exactly() {
        let report = sample_report();
        let parsed = BenchmarkReport::from_csv(&report.to_csv()).unwrap();
        assert_eq!(parsed.rows.len(), report.rows.len());
        for (a, b) in report.rows.iter().zip(&parsed.rows) {
            assert_eq!(a.template_id, b.template_id);
            assert_eq!(a.scores, b.scores);
        }
    }

    #[test]
    fn aggregates_are_section_means() {
        let report = sample_report();
        let agg = report
            .aggregate(Difficulty::Easy, Domain::InDomain)
            .unwrap();
        let rows: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.difficulty == Difficulty::Easy && r.domain == Domain::InDomain)
            .collect();
        let oracle: f64 = rows.iter().map(|r| r.scores.average).sum::<f64>() / rows.len() as f64;
        assert!((agg.average - oracle).abs() < 1e-12);
    }

    #[test]
    fn identical_arms_compare_with_zero_deltas() {
        let arm: Vec<SeedAggregate> = (0..20)
            .map(|seed| SeedAggregate {
                seed,
                scores: MetricScores::new(0.5 + seed as f64 * 0.01, 0.6, 0.7, 0.55, 0.65, 0),
            })
            .collect();
        let report = compare_runs(&arm, &arm).unwrap();
        assert_eq!(report.seeds, 20);
        assert_eq!(report.per_metric.len(), 6);
        for m in &report.per_metric {
            assert_eq!(m.policy_median, m.random_median);
            assert_eq!(m.policy_iqr, m.random_iqr);
            assert!(!m.policy_median_higher);
            assert!(!m.policy_iqr_smaller);
        }
    }

    #[test]
    fn comparison_flags_follow_the_distributions() {
        let policy: Vec<SeedAggregate> = (0..21)
            .map(|seed| SeedAggregate {
                seed,
                scores: MetricScores::new(0.8 + (seed % 3) as f64 * 0.01, 0.8, 0.8, 0.8, 0.8, 0),
            })
            .collect();
        let random: Vec<SeedAggregate> = (0..21)
            .map(|seed| SeedAggregate {
                seed,
                scores: MetricScores::new(0.5 + (seed % 7) as f64 * 0.05, 0.5, 0.5, 0.5, 0.5, 0),
            })
            .collect();
        let report = compare_runs(&policy, &random).unwrap();
        let dino = report.metric("dino").unwrap();
        assert!(dino.policy_median_higher);
        assert!(dino.policy_iqr_smaller);
        assert!(compare_runs(&policy[..5], &random).is_err());
    }

    #[test]
    fn distribution_csv_shape() {
        let arm: Vec<SeedAggregate> = (0..2)
            .map(|seed| SeedAggregate {
                seed,
                scores: MetricScores::new(0.1, 0.2, 0.3, 0.4, 0.5, 0),
            })
            .collect();
        let csv = distribution_csv(&arm, &arm);
        // header + 2 arms x 2 seeds x 6 metrics
        assert_eq!(csv.lines().count(), 1 + 2 * 2 * 6);
        assert!(csv.starts_with("seed,arm,metric,value\n"));
    }

    #[test]
    fn quantile_matches_hand_values() {
        let values = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&values, 0.5), 2.5);
        assert_eq!(quantile(&values, 0.0), 1.0);
        assert_eq!(quantile(&values, 1.0), 4.0);
        assert!((quantile(&values, 0.25) - 1.75).abs() < 1e-12);
    }
}
