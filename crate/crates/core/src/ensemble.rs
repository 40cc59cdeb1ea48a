//! Seeded retraining of identical models and majority-vote prediction.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_encoded, ModelConfig, ModelParams};
use crate::serialize::{load_model, save_model};
use crate::text::{EncodedExample, LabelVocab, LabeledExample, Vocabulary};
use crate::train::{train_model, TrainConfig};

/// One trained member plus the metadata the vote tie-break needs.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub params: ModelParams,
    pub seed: u64,
    /// Best validation macro F1 observed while training; 0 when no
    /// validation set existed.
    pub validation_f1: f64,
}

/// Identically configured models differing only by seed.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<EnsembleMember>,
}

/// Trains `count` members with seeds `seed, seed+1, ...` over shared
/// vocabularies. Without an explicit validation set, `eval_split` carves one
/// out once (seeded by the base seed) and every member uses it. `jobs > 1`
/// trains members on that many threads; member order and per-member
/// determinism are unaffected.
pub fn train_ensemble(
    train: &[LabeledExample],
    val: Option<&[LabeledExample]>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    count: usize,
    jobs: usize,
    pretrained_words: Option<&HashMap<String, Vec<f64>>>,
) -> Result<EnsembleModel> {
    if count == 0 {
        return Err(Error::Usage("ensemble needs at least one member".into()));
    }
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    model_config.validate()?;
    train_config.validate()?;

    let (split_train, split_val);
    let (train, val) = match val {
        Some(v) => (train, Some(v)),
        None if train_config.eval_split > 0.0 => {
            (split_train, split_val) =
                crate::train::split_train_val(train, train_config.eval_split, train_config.seed);
            (split_train.as_slice(), Some(split_val.as_slice()))
        }
        None => (train, None),
    };
    let val = val.filter(|v| !v.is_empty());
    let vocabs = crate::text::build_vocabularies(train, &model_config.pipeline)?;

    let jobs = jobs.max(1).min(count);
    let train_one = |index: usize| -> Result<EnsembleMember> {
        let seed = train_config.seed + index as u64;
        let member_config = TrainConfig { seed, ..train_config.clone() };
        let outcome = train_model(
            train,
            val,
            Some(vocabs.clone()),
            model_config,
            &member_config,
            pretrained_words,
        )
        .map_err(|e| Error::Member { index, source: Box::new(e) })?;
        Ok(EnsembleMember {
            params: outcome.params,
            seed,
            validation_f1: outcome.best_val_f1.unwrap_or(0.0),
        })
    };

    let mut members: Vec<Option<EnsembleMember>> = (0..count).map(|_| None).collect();
    if jobs == 1 {
        for (index, slot) in members.iter_mut().enumerate() {
            *slot = Some(train_one(index)?);
        }
    } else {
        let results: Vec<Result<EnsembleMember>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..count)
                .map(|index| scope.spawn(move || train_one(index)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("member training thread panicked"))
                .collect()
        });
        for (slot, result) in members.iter_mut().zip(results) {
            *slot = Some(result?);
        }
    }

    Ok(EnsembleModel {
        members: members.into_iter().map(|m| m.expect("all members trained")).collect(),
    })
}

/// Majority vote over one input's member predictions. Ties (including
/// all-distinct votes) resolve to the prediction of the member with the
/// highest validation F1, then the lowest member index.
pub fn vote(predictions: &[usize], member_f1s: &[f64]) -> Result<usize> {
    if predictions.is_empty() {
        return Err(Error::Usage("vote requires at least one member prediction".into()));
    }
    if predictions.len() != member_f1s.len() {
        return Err(Error::Usage(format!(
            "{} predictions vs {} member scores",
            predictions.len(),
            member_f1s.len()
        )));
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &p in predictions {
        *counts.entry(p).or_insert(0) += 1;
    }
    let top = *counts.values().max().expect("non-empty");
    let tied: Vec<usize> =
        counts.iter().filter(|(_, &c)| c == top).map(|(&class, _)| class).collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    // among members voting for a tied class, best validation F1 wins;
    // the scan order makes the lowest index win F1 ties
    let mut best: Option<(f64, usize)> = None;
    for (idx, (&p, &f1)) in predictions.iter().zip(member_f1s).enumerate() {
        if !tied.contains(&p) {
            continue;
        }
        if best.is_none_or(|(bf, _)| f1 > bf) {
            best = Some((f1, idx));
        }
    }
    Ok(predictions[best.expect("tied classes come from predictions").1])
}

impl EnsembleModel {
    /// Voted class plus the winning vote fraction for each input.
    pub fn predict_encoded(&self, examples: &[EncodedExample]) -> Result<Vec<(usize, f64)>> {
        if self.members.is_empty() {
            return Err(Error::Usage("ensemble has no members".into()));
        }
        let mut per_member: Vec<Vec<usize>> = Vec::with_capacity(self.members.len());
        for member in &self.members {
            let (classes, _) = predict_encoded(&member.params, examples)?;
            per_member.push(classes);
        }
        let f1s: Vec<f64> = self.members.iter().map(|m| m.validation_f1).collect();
        let mut out = Vec::with_capacity(examples.len());
        for i in 0..examples.len() {
            let votes: Vec<usize> = per_member.iter().map(|p| p[i]).collect();
            let winner = vote(&votes, &f1s)?;
            let fraction =
                votes.iter().filter(|&&v| v == winner).count() as f64 / votes.len() as f64;
            out.push((winner, fraction));
        }
        Ok(out)
    }

    pub fn predict_texts(&self, texts: &[String]) -> Result<Vec<(usize, f64)>> {
        let reference = &self.members[0].params;
        let encoded: Vec<EncodedExample> =
            texts.iter().map(|t| reference.encode_text(t)).collect::<Result<_>>()?;
        self.predict_encoded(&encoded)
    }

    pub fn labels(&self) -> &LabelVocab {
        &self.members[0].params.labels
    }

    pub fn shared_vocabs(&self) -> (&Vocabulary, &Vocabulary) {
        (&self.members[0].params.word_vocab, &self.members[0].params.char_vocab)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    seed: u64,
    validation_f1: f64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    members: Vec<ManifestEntry>,
}

/// Writes `member-<i>.bin` files plus `ensemble.json` into `dir`; returns
/// the manifest path.
pub fn save_ensemble(model: &EnsembleModel, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut entries = Vec::with_capacity(model.members.len());
    for (i, member) in model.members.iter().enumerate() {
        let file = format!("member-{i}.bin");
        save_model(&member.params, dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            seed: member.seed,
            validation_f1: member.validation_f1,
        });
    }
    let manifest_path = dir.join("ensemble.json");
    let manifest = Manifest { members: entries };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Malformed(format!("manifest encoding failed: {e}")))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io_at(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Loads an ensemble from its manifest; member files resolve relative to the
/// manifest's directory.
pub fn load_ensemble(manifest_path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let manifest_path = manifest_path.as_ref();
    let json = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io_at(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::Malformed(format!("manifest: {e}")))?;
    if manifest.members.is_empty() {
        return Err(Error::Malformed("manifest lists no members".into()));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in manifest.members {
        let params = load_model(base.join(&entry.file))?;
        members.push(EnsembleMember {
            params,
            seed: entry.seed,
            validation_f1: entry.validation_f1,
        });
    }
    Ok(EnsembleModel { members })
}
