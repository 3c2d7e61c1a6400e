//! Dataset loading, validation, splits, and synthetic dataset generation.
//!
//! One JSON document holds everything:
//!
//! ```json
//! { "records": [ { "id": "...", "difficulty": "easy",
//!                  "template": "[SUBJECT], ...",
//!                  "exemplars": [ { "subject": "...", "image": "..." } ] } ] }
//! ```
//!
//! `image` is a URL, a local path, or a `synth:<template_id>/<exemplar>/<seed>`
//! URI the simulator resolves, so live and synthetic datasets are
//! interchangeable everywhere downstream. Each record carries exactly nine
//! exemplars: the first five are in-domain, the remaining four out-of-domain.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::gateway::ImageRef;
use crate::rng::Rng;
use crate::template::SUBJECT_PLACEHOLDER;
use crate::Result;

pub const EXEMPLARS_PER_TEMPLATE: usize = 9;
pub const IN_DOMAIN_COUNT: usize = 5;

/// Stealing difficulty class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// One showcased (subject, image) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub subject: String,
    pub image: ImageRef,
}

/// One marketplace listing: the hidden ground-truth template plus its
/// exemplar images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: String,
    pub difficulty: Difficulty,
    /// Ground-truth template body containing the subject placeholder once.
    pub template: String,
    pub exemplars: Vec<Exemplar>,
}

impl TemplateRecord {
    /// First five exemplars: the publicly showcased, in-domain set.
    pub fn in_domain(&self) -> &[Exemplar] {
        &self.exemplars[..IN_DOMAIN_COUNT.min(self.exemplars.len())]
    }

    /// Remaining four exemplars, held out for generalization checks.
    pub fn out_domain(&self) -> &[Exemplar] {
        &self.exemplars[IN_DOMAIN_COUNT.min(self.exemplars.len())..]
    }

    fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| {
            Err(Error::Dataset {
                record_id: self.id.clone(),
                field: field.into(),
                message,
            })
        };
        if self.id.trim().is_empty() {
            return fail("id", "empty id".into());
        }
        if self.exemplars.len() != EXEMPLARS_PER_TEMPLATE {
            return fail(
                "exemplars",
                format!(
                    "expected {EXEMPLARS_PER_TEMPLATE} exemplars, found {}",
                    self.exemplars.len()
                ),
            );
        }
        let placeholder_count = self.template.matches(SUBJECT_PLACEHOLDER).count();
        if placeholder_count != 1 {
            return fail(
                "template",
                format!(
                    "must contain {SUBJECT_PLACEHOLDER} exactly once, found {placeholder_count}"
                ),
            );
        }
        for (i, ex) in self.exemplars.iter().enumerate() {
            if ex.subject.trim().is_empty() {
                return fail(&format!("exemplars[{i}].subject"), "empty subject".into());
            }
            if ex.image.as_str().trim().is_empty() {
                return fail(&format!("exemplars[{i}].image"), "empty image ref".into());
            }
        }
        Ok(())
    }
}

/// The full dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<TemplateRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for record in &self.records {
            record.validate()?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::Dataset {
                    record_id: record.id.clone(),
                    field: "id".into(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn record(&self, id: &str) -> Option<&TemplateRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn count(&self, difficulty: Difficulty) -> usize {
        self.records
            .iter()
            .filter(|r| r.difficulty == difficulty)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("dataset parse error: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let json = std::fs::read_to_string(&path)?;
        Self::from_json(&json)
    }
}

/// A disjoint train/eval partition over record ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
}

impl DatasetSplit {
    /// Checks the partition property against a manifest.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        let all: std::collections::BTreeSet<&str> =
            manifest.records.iter().map(|r| r.id.as_str()).collect();
        let train: std::collections::BTreeSet<&str> =
            self.train_ids.iter().map(String::as_str).collect();
        let eval: std::collections::BTreeSet<&str> =
            self.eval_ids.iter().map(String::as_str).collect();
        if train.intersection(&eval).next().is_some() {
            return Err(Error::Config("train/eval overlap".into()));
        }
        let union: std::collections::BTreeSet<&str> = train.union(&eval).copied().collect();
        if union != all {
            return Err(Error::Config("split does not cover the dataset".into()));
        }
        Ok(())
    }
}

/// Stratified seeded split: `n_easy` easy + `n_hard` hard records go to the
/// train side, the rest to eval.
pub fn stratified_split(
    manifest: &DatasetManifest,
    n_easy: usize,
    n_hard: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let easy: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| r.difficulty == Difficulty::Easy)
        .map(|r| r.id.as_str())
        .collect();
    let hard: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| r.difficulty == Difficulty::Hard)
        .map(|r| r.id.as_str())
        .collect();
    if easy.len() < n_easy || hard.len() < n_hard {
        return Err(Error::Config(format!(
            "split needs >= {n_easy} easy and >= {n_hard} hard records, have {} and {}",
            easy.len(),
            hard.len()
        )));
    }
    let mut rng = Rng::seed(seed).split("dataset-split");
    let mut train: Vec<String> = rng
        .sample_indices(easy.len(), n_easy)
        .into_iter()
        .map(|i| easy[i].to_string())
        .collect();
    train.extend(
        rng.sample_indices(hard.len(), n_hard)
            .into_iter()
            .map(|i| hard[i].to_string()),
    );
    train.sort();
    let train_set: std::collections::BTreeSet<&str> = train.iter().map(String::as_str).collect();
    let mut eval: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| !train_set.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    eval.sort();
    Ok(DatasetSplit {
        train_ids: train,
        eval_ids: eval,
    })
}

/// The published benchmark split: 8 easy + 12 hard records train, the other
/// 30 evaluate.
pub fn paper_split(manifest: &DatasetManifest, seed: u64) -> Result<DatasetSplit> {
    stratified_split(manifest, 8, 12, seed)
}

/// Generates a synthetic dataset through the simulator's template sampler.
/// Byte-identical output for identical arguments.
pub fn gen_synth_dataset(seed: u64, n_easy: usize, n_hard: usize) -> Result<DatasetManifest> {
    if n_easy == 0 && n_hard == 0 {
        return Err(Error::Config("need at least one record".into()));
    }
    let templates = crate::simworld::generate_templates(seed, n_easy, n_hard);
    let records = templates.iter().map(|t| t.to_record()).collect();
    let manifest = DatasetManifest { records };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> DatasetManifest {
        gen_synth_dataset(1, 25, 25).unwrap()
    }

    #[test]
    fn canonical_shape_is_fifty_records() {
        let m = canonical();
        assert_eq!(m.records.len(), 50);
        assert_eq!(m.count(Difficulty::Easy), 25);
        assert_eq!(m.count(Difficulty::Hard), 25);
        for r in &m.records {
            assert_eq!(r.exemplars.len(), 9);
            assert_eq!(r.in_domain().len(), 5);
            assert_eq!(r.out_domain().len(), 4);
            assert_eq!(r.template.matches(SUBJECT_PLACEHOLDER).count(), 1);
        }
    }

    #[test]
    fn eight_exemplar_record_fails_validation() {
        let mut m = canonical();
        m.records[3].exemplars.pop();
        let err = m.validate().unwrap_err();
        match err {
            Error::Dataset {
                record_id, field, ..
            } => {
                assert_eq!(record_id, m.records[3].id);
                assert_eq!(field, "exemplars");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_placeholder_fails_validation() {
        let mut m = canonical();
        m.records[0].template = "no placeholder here".into();
        assert!(matches!(m.validate(), Err(Error::Dataset { .. })));
    }

    #[test]
    fn json_round_trip_is_identical() {
        let m = canonical();
        let json = m.to_json();
        let back = DatasetManifest::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn generation_is_byte_identical_per_seed() {
        let a = gen_synth_dataset(7, 3, 2).unwrap().to_json();
        let b = gen_synth_dataset(7, 3, 2).unwrap().to_json();
        assert_eq!(a, b);
        let c = gen_synth_dataset(8, 3, 2).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(gen_synth_dataset(1, 0, 0).is_err());
    }

    #[test]
    fn paper_split_is_stratified_and_disjoint() {
        let m = canonical();
        let split = paper_split(&m, 42).unwrap();
        assert_eq!(split.train_ids.len(), 20);
        assert_eq!(split.eval_ids.len(), 30);
        let easy_train = split
            .train_ids
            .iter()
            .filter(|id| m.record(id).unwrap().difficulty == Difficulty::Easy)
            .count();
        assert_eq!(easy_train, 8);
        assert_eq!(split.train_ids.len() - easy_train, 12);
        split.validate(&m).unwrap();
    }

    #[test]
    fn split_is_seed_deterministic() {
        let m = canonical();
        assert_eq!(paper_split(&m, 5).unwrap(), paper_split(&m, 5).unwrap());
        assert_ne!(paper_split(&m, 5).unwrap(), paper_split(&m, 6).unwrap());
    }

    #[test]
    fn split_rejects_insufficient_classes() {
        let m = gen_synth_dataset(1, 4, 12).unwrap();
        assert!(paper_split(&m, 1).is_err());
    }
}
