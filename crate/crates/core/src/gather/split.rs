//! Train/validation/test partitions for the three training regimes.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FbError, Result};

/// Gathers used for finetuning, drawn from the target survey's 60% pool.
pub const FINETUNE_TRAIN_COUNT: usize = 50;

/// Smallest survey that still gets a non-empty share in every part.
const MIN_SINGLE_SURVEY: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    /// One survey split 0.6 / 0.2 / 0.2.
    SingleSurvey { survey: String },
    /// Whole surveys as train, validation and test.
    CrossSurvey {
        train: Vec<String>,
        validation: String,
        test: String,
    },
    /// 60% / 20% of each source survey; no test part.
    Pretraining { sources: Vec<String> },
    /// Single-survey split of the target with the training part cut to 50 gathers.
    Finetuning { target: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    SingleSurvey,
    CrossSurvey,
    PretrainFinetune,
}

impl Regime {
    pub fn kind(&self) -> RegimeKind {
        match self {
            Regime::SingleSurvey { .. } => RegimeKind::SingleSurvey,
            Regime::CrossSurvey { .. } => RegimeKind::CrossSurvey,
            Regime::Pretraining { .. } | Regime::Finetuning { .. } => RegimeKind::PretrainFinetune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveySplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub regime: RegimeKind,
}

fn survey<'a>(surveys: &'a BTreeMap<String, Vec<String>>, id: &str) -> Result<&'a [String]> {
    surveys
        .get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| FbError::InsufficientData(format!("survey {id:?} is not in the corpus")))
}

fn shuffled(ids: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut v = ids.to_vec();
    v.shuffle(rng);
    v
}

/// `floor(0.6 n)`, `floor(0.2 n)` and the remainder of a shuffled list.
fn ratio_split(ids: Vec<String>) -> (Vec<String>, Vec<String>, Vec<String>) {
    let n = ids.len();
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let mut it = ids.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let val = it.by_ref().take(n_val).collect();
    (train, val, it.collect())
}

fn need(id: &str, have: usize, required: usize, why: &str) -> Result<()> {
    if have < required {
        return Err(FbError::InsufficientData(format!(
            "survey {id:?} has {have} gathers; {why} needs at least {required}"
        )));
    }
    Ok(())
}

/// Partitions gather identifiers per `regime`. Deterministic for a fixed seed.
pub fn make_split(
    surveys: &BTreeMap<String, Vec<String>>,
    regime: &Regime,
    seed: u64,
) -> Result<SurveySplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, validation, test) = match regime {
        Regime::SingleSurvey { survey: id } => {
            let ids = survey(surveys, id)?;
            need(id, ids.len(), MIN_SINGLE_SURVEY, "a single-survey split")?;
            ratio_split(shuffled(ids, &mut rng))
        }
        Regime::CrossSurvey { train, validation, test } => {
            let mut all: Vec<&String> = train.iter().collect();
            all.push(validation);
            all.push(test);
            let distinct: HashSet<_> = all.iter().collect();
            if distinct.len() != all.len() {
                return invalid("regime", "cross-survey parts must name distinct surveys");
            }
            if train.is_empty() {
                return invalid("regime", "cross-survey training needs at least one survey");
            }
            for id in &all {
                need(id, survey(surveys, id)?.len(), 1, "a cross-survey part")?;
            }
            let mut tr = Vec::new();
            for id in train {
                tr.extend_from_slice(survey(surveys, id)?);
            }
            (
                tr,
                survey(surveys, validation)?.to_vec(),
                survey(surveys, test)?.to_vec(),
            )
        }
        Regime::Pretraining { sources } => {
            if sources.is_empty() {
                return invalid("regime", "pretraining needs at least one source survey");
            }
            if sources.iter().collect::<HashSet<_>>().len() != sources.len() {
                return invalid("regime", "pretraining sources must be distinct");
            }
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for id in sources {
                let ids = survey(surveys, id)?;
                need(id, ids.len(), MIN_SINGLE_SURVEY, "a pretraining source")?;
                let (t, v, _) = ratio_split(shuffled(ids, &mut rng));
                tr.extend(t);
                va.extend(v);
            }
            (tr, va, Vec::new())
        }
        Regime::Finetuning { target } => {
            let ids = survey(surveys, target)?;
            // floor(0.6 n) >= 50  <=>  n >= 84
            let required = (FINETUNE_TRAIN_COUNT * 5).div_ceil(3);
            need(target, ids.len(), required, "finetuning on 50 gathers of a 60% pool")?;
            let (mut t, v, te) = ratio_split(shuffled(ids, &mut rng));
            t.truncate(FINETUNE_TRAIN_COUNT);
            (t, v, te)
        }
    };
    let split = SurveySplit { train, validation, test, regime: regime.kind() };
    let mut seen = HashSet::new();
    for id in split.train.iter().chain(&split.validation).chain(&split.test) {
        if !seen.insert(id) {
            return invalid("corpus", format!("gather {id:?} appears in more than one part"));
        }
    }
    Ok(split)
}
