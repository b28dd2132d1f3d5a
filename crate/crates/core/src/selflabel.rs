//! Unsupervised transfer by iterative self-labeling: predict answers for the
//! unlabeled target set, fine-tune on those predictions, repeat.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedDataset, McqaExample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::SeedStream;
use crate::transfer::{evaluate, sgd_epoch, FreezeSpec, Preset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfLabelConfig {
    pub epochs: usize,
    /// Passes over the pseudo-labeled set per outer epoch.
    pub passes: usize,
    pub train: TrainConfig,
    pub freeze: FreezeSpec,
    /// Return the parameters from the epoch with the highest evaluation
    /// accuracy. This selects on the evaluation set, so it is off by default
    /// and the final-epoch parameters are returned instead.
    pub select_peak: bool,
}

impl Default for SelfLabelConfig {
    fn default() -> Self {
        SelfLabelConfig {
            epochs: 10,
            passes: 1,
            train: TrainConfig::default(),
            freeze: FreezeSpec {
                preset: Preset::FtAll,
                frozen: Vec::new(),
                train_pretrained: true,
            },
            select_peak: false,
        }
    }
}

/// Evaluation accuracy and label churn, indexed 0..=epochs. Index 0 is the
/// input model; its churn is 0 by convention. Churn at epoch e is the fraction
/// of examples whose pseudo-label after epoch e differs from the label that
/// epoch trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfLabelTrace {
    pub accuracy: Vec<f64>,
    pub churn: Vec<f64>,
}

impl SelfLabelTrace {
    /// Earliest epoch with the highest accuracy.
    pub fn peak_epoch(&self) -> usize {
        let mut best = 0;
        for (i, a) in self.accuracy.iter().enumerate() {
            if *a > self.accuracy[best] {
                best = i;
            }
        }
        best
    }

    pub fn peak(&self) -> f64 {
        self.accuracy[self.peak_epoch()]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,accuracy,churn\n");
        for (i, (a, c)) in self.accuracy.iter().zip(&self.churn).enumerate() {
            out.push_str(&format!("{i},{a},{c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SelfLabelOutcome {
    pub model: Model,
    pub trace: SelfLabelTrace,
    /// Epoch whose parameters were returned.
    pub returned_epoch: usize,
}

/// The model's argmax prediction as each example's answer. Existing answers
/// are dropped before prediction.
pub fn pseudo_label(model: &Model, ds: &EncodedDataset) -> Result<EncodedDataset> {
    let examples = ds
        .examples
        .par_iter()
        .map(|ex| {
            let mut ex = ex.without_answer();
            ex.answer = Some(model.predict(&ex)?);
            Ok(ex)
        })
        .collect::<Result<Vec<McqaExample>>>()?;
    Ok(EncodedDataset {
        examples,
        ..ds.clone()
    })
}

fn churn(a: &EncodedDataset, b: &EncodedDataset) -> f64 {
    let changed = a
        .examples
        .iter()
        .zip(&b.examples)
        .filter(|(x, y)| x.answer != y.answer)
        .count();
    changed as f64 / a.len().max(1) as f64
}

pub fn self_label_finetune(
    model: &Model,
    unlabeled: &EncodedDataset,
    eval: &EncodedDataset,
    cfg: &SelfLabelConfig,
) -> Result<SelfLabelOutcome> {
    if cfg.epochs == 0 || cfg.passes == 0 {
        return Err(Error::Config("self-label epochs and passes must be at least 1".into()));
    }
    cfg.train.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::Contract("self-labeling needs a non-empty target set".into()));
    }
    let mut current = model.clone();
    cfg.freeze.apply(&mut current)?;
    let stream = SeedStream::new(cfg.train.seed).derive("selflabel");

    let mut labels = pseudo_label(&current, unlabeled)?;
    let mut trace = SelfLabelTrace {
        accuracy: vec![evaluate(&current, eval)?],
        churn: vec![0.0],
    };
    let mut best = (0, current.clone());
    for epoch in 1..=cfg.epochs {
        for pass in 0..cfg.passes {
            let mut order: Vec<&McqaExample> = labels.examples.iter().collect();
            let key = ((epoch - 1) * cfg.passes + pass) as u64;
            order.shuffle(&mut stream.derive_index(key).rng());
            sgd_epoch(&mut current, &order, cfg.train.lr, cfg.train.batch_size)?;
        }
        let acc = evaluate(&current, eval)?;
        let next = pseudo_label(&current, unlabeled)?;
        trace.churn.push(churn(&labels, &next));
        if cfg.select_peak && acc > trace.accuracy[best.0] {
            best = (epoch, current.clone());
        }
        trace.accuracy.push(acc);
        labels = next;
    }
    let (returned_epoch, model) = if cfg.select_peak {
        best
    } else {
        (cfg.epochs, current)
    };
    Ok(SelfLabelOutcome {
        model,
        trace,
        returned_epoch,
    })
}
