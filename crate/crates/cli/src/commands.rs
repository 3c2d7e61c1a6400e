//! The five operator commands.
//!
//! Output layout under the configured `out` directory is fixed for tool
//! interop: `checkpoints/`, `logs/`, `stolen/`, `reports/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use promptlift_core::checkpoint::Checkpoint;
use promptlift_core::dataset::{
    gen_synth_dataset, stratified_split, DatasetManifest, DatasetSplit, TemplateRecord,
};
use promptlift_core::environment::{attack, Env, PromptAssets};
use promptlift_core::evalbench::{
    compare_runs, distribution_csv, evaluate_template, mean_scores, random_attack, BenchmarkReport,
    ComparisonReport, Domain, MetricScores, ReportRow, SeedAggregate,
};
use promptlift_core::gateway::{BackendRole, Gateway, RetryPolicy, UsageMeter, UsageSnapshot};
use promptlift_core::ppo::{train, IterationStats, NetConfig};
use promptlift_core::rng::Rng;
use promptlift_core::simworld::SimWorld;
use promptlift_core::template::PromptTemplate;
use promptlift_core::{Error, Result};

use crate::config::{BackendMode, RunConfig};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn meter_for(cfg: &RunConfig) -> UsageMeter {
    let mut costs = std::collections::BTreeMap::new();
    costs.insert(BackendRole::ImageGenerator, cfg.image_cost_micros());
    UsageMeter::new(costs)
}

/// Binds every backend role per the configured mode.
pub fn build_gateway(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Arc<Gateway>> {
    match cfg.mode {
        BackendMode::Sim => {
            let world = Arc::new(SimWorld::from_manifest(cfg.sim.clone(), manifest)?);
            Ok(Arc::new(SimWorld::bind_gateway(&world, meter_for(cfg))))
        }
        BackendMode::Live => {
            use promptlift_core::gateway::live::{LiveConfig, OpenAiBackend};
            let mut live = LiveConfig::from_env()
                .map_err(|e| Error::Config(format!("live mode startup: {e}")))?;
            live.base_url = std::env::var(promptlift_core::gateway::live::BASE_URL_ENV)
                .unwrap_or_else(|_| cfg.base_url.clone());
            live.chat_model = cfg.chat_model.clone();
            live.image_model = cfg.image_model.clone();
            live.embed_model = cfg.embed_model.clone();
            live.embed_dim = cfg.embed_dim;
            live.max_in_flight = cfg.max_in_flight;
            live.image_cache_dir = Path::new(&cfg.out).join("image-cache");
            let backend = Arc::new(OpenAiBackend::new(live));
            let dim = cfg.embed_dim;
            let mut builder = Gateway::builder()
                .mutator(backend.clone())
                .image_generator(backend.clone())
                .meter(meter_for(cfg))
                .retry(RetryPolicy::default());
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
                builder = builder.embedder(role, backend.clone(), dim);
            }
            Ok(Arc::new(builder.build()))
        }
    }
}

fn load_assets(cfg: &RunConfig) -> Result<Arc<PromptAssets>> {
    if cfg.prompt_dir.is_empty() {
        Ok(Arc::new(PromptAssets::default()))
    } else {
        Ok(Arc::new(PromptAssets::from_dir(&cfg.prompt_dir)?))
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<DatasetManifest> {
    if cfg.dataset.is_empty() {
        return Err(Error::Config("no dataset configured (run.dataset)".into()));
    }
    DatasetManifest::load(&cfg.dataset)
}

fn split_for(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<DatasetSplit> {
    stratified_split(manifest, cfg.train_easy, cfg.train_hard, cfg.seed)
}

fn out_dir(cfg: &RunConfig, sub: &str) -> Result<PathBuf> {
    let dir = Path::new(&cfg.out).join(sub);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_usage(cfg: &RunConfig, name: &str, usage: &UsageSnapshot) -> Result<PathBuf> {
    let path = out_dir(cfg, "reports")?.join(name);
    fs::write(
        &path,
        serde_json::to_string_pretty(usage).expect("usage serializes"),
    )?;
    Ok(path)
}

/// Resolves a `--templates` argument against a split's eval side.
fn resolve_templates(
    manifest: &DatasetManifest,
    split: &DatasetSplit,
    arg: Option<&str>,
) -> Result<Vec<String>> {
    match arg {
        None | Some("all") => Ok(split.eval_ids.clone()),
        Some(list) => {
            let ids: Vec<String> = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            for id in &ids {
                if manifest.record(id).is_none() {
                    return Err(Error::Config(format!("unknown template id {id:?}")));
                }
            }
            Ok(ids)
        }
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub usage: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    print!("{}", cfg.echo());
    let manifest = load_dataset(cfg)?;
    let split = split_for(cfg, &manifest)?;
    let gateway = build_gateway(cfg, &manifest)?;
    let assets = load_assets(cfg)?;

    let envs: Vec<Env> = split
        .train_ids
        .iter()
        .map(|id| {
            let record = manifest.record(id).expect("split ids exist").clone();
            Env::new(record, gateway.clone(), assets.clone(), cfg.env_config())
        })
        .collect();

    let output = train(
        envs,
        gateway.clone(),
        &cfg.ppo,
        &NetConfig { hidden: cfg.hidden },
        cfg.seed,
    )?;

    let ckpt_path = out_dir(cfg, "checkpoints")?.join("policy.ckpt");
    Checkpoint {
        seed: cfg.seed,
        policy: output.policy.clone(),
        value: output.value.clone(),
        policy_adam: output.policy_adam.clone(),
        value_adam: output.value_adam.clone(),
    }
    .save(&ckpt_path)?;

    let log_path = out_dir(cfg, "logs")?.join("train.csv");
    let mut csv = String::from(IterationStats::CSV_HEADER);
    csv.push('\n');
    for row in &output.log {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    fs::write(&log_path, csv)?;

    let usage_path = write_usage(cfg, "usage_train.json", &gateway.usage())?;

    if let Some(iteration) = output.diverged_at {
        eprintln!("training diverged at iteration {iteration}; last finite state checkpointed");
        return Err(Error::Diverged { iteration });
    }
    for row in &output.log {
        println!(
            "iteration {}: mean reward {:.4} (r1 {:.4} r3 {:.4}), cost ${:.2}",
            row.iteration,
            row.mean_reward,
            row.mean_r1,
            row.mean_r3,
            row.cost_micros as f64 / 1e6
        );
    }
    Ok(TrainArtifacts {
        checkpoint: ckpt_path,
        log: log_path,
        usage: usage_path,
    })
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct AttackArtifacts {
    pub stolen_dir: PathBuf,
    pub usage: PathBuf,
    pub image_query_delta: u64,
    pub stolen_ids: Vec<String>,
}

pub fn cmd_attack(
    cfg: &RunConfig,
    checkpoint: &Path,
    templates: Option<&str>,
) -> Result<AttackArtifacts> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = load_dataset(cfg)?;
    let split = split_for(cfg, &manifest)?;
    let ids = resolve_templates(&manifest, &split, templates)?;
    let gateway = build_gateway(cfg, &manifest)?;
    let assets = load_assets(cfg)?;

    let state_dim = gateway.embed_dim(BackendRole::TextEmbedderState)?;
    if ckpt.policy.state_dim() != state_dim {
        return Err(Error::Config(format!(
            "checkpoint expects state dim {}, gateway provides {state_dim}",
            ckpt.policy.state_dim()
        )));
    }

    let stolen_dir = out_dir(cfg, "stolen")?;
    let before = gateway.usage();
    let mut summary = String::from("template_id,r1,best_step\n");
    let mut stolen_ids = Vec::with_capacity(ids.len());
    for id in &ids {
        let record = manifest.record(id).expect("validated");
        let result = attack(
            record,
            &ckpt.policy,
            gateway.clone(),
            assets.clone(),
            &cfg.env_config(),
            cfg.seed,
        )?;
        fs::write(
            stolen_dir.join(format!("{id}.txt")),
            format!("{}\n", result.template.body()),
        )?;
        let best_step = result
            .visited
            .iter()
            .position(|v| v.template.body() == result.template.body())
            .unwrap_or(0);
        summary.push_str(&format!("{id},{},{best_step}\n", result.r1));
        stolen_ids.push(id.clone());
    }
    fs::write(stolen_dir.join("summary.csv"), summary)?;

    let delta = gateway.usage().delta_since(&before);
    let image_query_delta = delta.count(BackendRole::ImageGenerator);
    let usage = write_usage(cfg, "usage_attack.json", &gateway.usage())?;
    println!(
        "attacked {} templates; image-query delta {image_query_delta}",
        ids.len()
    );
    if image_query_delta != 0 {
        return Err(Error::Misuse(format!(
            "attack spent {image_query_delta} image queries; expected 0"
        )));
    }
    Ok(AttackArtifacts {
        stolen_dir,
        usage,
        image_query_delta,
        stolen_ids,
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct EvalArtifacts {
    pub csv: PathBuf,
    pub text: PathBuf,
    pub usage: PathBuf,
    pub report: BenchmarkReport,
}

pub fn cmd_eval(
    cfg: &RunConfig,
    stolen_dir: Option<&Path>,
    templates: Option<&str>,
) -> Result<EvalArtifacts> {
    let manifest = load_dataset(cfg)?;
    let split = split_for(cfg, &manifest)?;
    let ids = resolve_templates(&manifest, &split, templates)?;
    let gateway = build_gateway(cfg, &manifest)?;
    let stolen_dir = stolen_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&cfg.out).join("stolen"));

    let mut report = BenchmarkReport::default();
    let root = Rng::seed(cfg.seed).split("eval");
    for id in &ids {
        let record = manifest.record(id).expect("validated");
        let path = stolen_dir.join(format!("{id}.txt"));
        let body = fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("missing stolen template {}: {e}", path.display()))
        })?;
        let stolen = PromptTemplate::new(body.trim_end().to_string(), vec![], vec![])?;
        for domain in [Domain::InDomain, Domain::OutDomain] {
            let mut rng = root.split(&format!("{id}/{domain}"));
            let outcome = evaluate_template(&gateway, &stolen, record, domain, 0, &mut rng)?;
            report.push(ReportRow {
                template_id: id.clone(),
                difficulty: record.difficulty,
                domain,
                scores: outcome.scores,
                skipped: outcome.skipped,
            });
        }
    }

    let reports = out_dir(cfg, "reports")?;
    let csv_path = reports.join("tables.csv");
    fs::write(&csv_path, report.to_csv())?;
    let text_path = reports.join("tables.txt");
    fs::write(&text_path, report.to_text())?;
    let usage = write_usage(cfg, "usage_eval.json", &gateway.usage())?;
    print!("{}", report.to_text());
    Ok(EvalArtifacts {
        csv: csv_path,
        text: text_path,
        usage,
        report,
    })
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct AblateArtifacts {
    pub comparison: PathBuf,
    pub distribution: PathBuf,
    pub report: ComparisonReport,
}

/// Scores one stolen template over both domains and returns the mean row.
fn eval_both_domains(
    gateway: &Gateway,
    stolen: &PromptTemplate,
    record: &TemplateRecord,
    rng: &mut Rng,
) -> Result<MetricScores> {
    let mut rows = Vec::with_capacity(2);
    for domain in [Domain::InDomain, Domain::OutDomain] {
        rows.push(evaluate_template(gateway, stolen, record, domain, 0, rng)?.scores);
    }
    Ok(mean_scores(&rows).expect("two rows"))
}

pub fn cmd_ablate(cfg: &RunConfig, checkpoint: &Path, seeds: usize) -> Result<AblateArtifacts> {
    if seeds == 0 {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if seeds < 20 {
        eprintln!("note: {seeds} seeds is below the reference 20; medians will be noisy");
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = load_dataset(cfg)?;
    let split = split_for(cfg, &manifest)?;
    let gateway = build_gateway(cfg, &manifest)?;
    let assets = load_assets(cfg)?;

    let records: Vec<&TemplateRecord> = split
        .eval_ids
        .iter()
        .map(|id| manifest.record(id).expect("split ids exist"))
        .collect();

    let mut policy_arm = Vec::with_capacity(seeds);
    let mut random_arm = Vec::with_capacity(seeds);
    let root = Rng::seed(cfg.seed).split("ablate");
    for trial in 0..seeds {
        let trial_seed = root.split_index("trial", trial as u64).next_u64();
        let mut policy_scores = Vec::with_capacity(records.len());
        let mut random_scores = Vec::with_capacity(records.len());
        for record in &records {
            let result = attack(
                record,
                &ckpt.policy,
                gateway.clone(),
                assets.clone(),
                &cfg.env_config(),
                trial_seed,
            )?;
            let mut eval_rng = root.split(&format!("eval-policy/{trial}/{}", record.id));
            policy_scores.push(eval_both_domains(
                &gateway,
                &result.template,
                record,
                &mut eval_rng,
            )?);

            let mut walk_rng = root.split(&format!("random-walk/{trial}/{}", record.id));
            let outcome = random_attack(
                record,
                gateway.clone(),
                assets.clone(),
                &cfg.env_config(),
                &mut walk_rng,
            )?;
            let mut eval_rng = root.split(&format!("eval-random/{trial}/{}", record.id));
            random_scores.push(eval_both_domains(
                &gateway,
                &outcome.template,
                record,
                &mut eval_rng,
            )?);
        }
        policy_arm.push(SeedAggregate {
            seed: trial as u64,
            scores: mean_scores(&policy_scores).expect("non-empty benchmark"),
        });
        random_arm.push(SeedAggregate {
            seed: trial as u64,
            scores: mean_scores(&random_scores).expect("non-empty benchmark"),
        });
    }

    let report = compare_runs(&policy_arm, &random_arm)?;
    let reports = out_dir(cfg, "reports")?;
    let comparison = reports.join("ablation.json");
    fs::write(
        &comparison,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let distribution = reports.join("distribution.csv");
    fs::write(&distribution, distribution_csv(&policy_arm, &random_arm))?;

    for m in &report.per_metric {
        println!(
            "{:<12} policy median {:.4} (iqr {:.4}) vs random median {:.4} (iqr {:.4}) — median_higher={} iqr_smaller={}",
            m.metric, m.policy_median, m.policy_iqr, m.random_median, m.random_iqr,
            m.policy_median_higher, m.policy_iqr_smaller
        );
    }
    Ok(AblateArtifacts {
        comparison,
        distribution,
        report,
    })
}

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

pub fn cmd_gen_synth(seed: u64, n_easy: usize, n_hard: usize, out: &Path) -> Result<PathBuf> {
    let manifest = gen_synth_dataset(seed, n_easy, n_hard)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    manifest.save(out)?;
    println!(
        "wrote {} records ({n_easy} easy + {n_hard} hard) to {}",
        manifest.records.len(),
        out.display()
    );
    Ok(out.to_path_buf())
}
