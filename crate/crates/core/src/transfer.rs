//! Supervised training, evaluation, two-step transfer with freeze presets,
//! data-fraction ablations and per-question-type accuracy.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_vocab, Bounds, DatasetTriple, EmbeddingMatrix, EncodedDataset, McqaExample, Split, SynthCorpus, Vocab,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelKind};
use crate::rng::SeedStream;
use crate::tensor::{sgd_step, Graph};
use crate::{memn2n, qacnn};

/// Environment variable capping the number of concurrent ablation runs.
pub const THREADS_ENV: &str = "MCQA_TRANSFER_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev improvement.
    pub patience: usize,
    pub seed: u64,
    /// Learning rate for runs that start from pretrained parameters; `lr` when unset.
    pub finetune_lr: Option<f64>,
    pub finetune_batch_size: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            finetune_lr: None,
            finetune_batch_size: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for lr in std::iter::once(self.lr).chain(self.finetune_lr) {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("lr must be finite and non-negative, got {lr}")));
            }
        }
        if self.finetune_batch_size == Some(0) {
            return Err(Error::Config("finetune_batch_size must be positive".into()));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("embed_dim", self.model.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.clone() }
    }

    /// The settings a fine-tuning run actually trains with.
    pub fn finetune_stage(&self) -> TrainConfig {
        TrainConfig {
            lr: self.finetune_lr.unwrap_or(self.lr),
            batch_size: self.finetune_batch_size.unwrap_or(self.batch_size),
            finetune_lr: None,
            finetune_batch_size: None,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// Hex SHA-256 of a value's JSON encoding. Struct fields serialize in
/// declaration order and maps are ordered, so equal values hash equally.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types always serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Preset {
    #[serde(rename = "target-only")]
    TargetOnly,
    #[serde(rename = "source-only")]
    SourceOnly,
    #[serde(rename = "source+target")]
    SourceTarget,
    #[serde(rename = "ft-last")]
    FtLast,
    #[default]
    #[serde(rename = "ft-last2")]
    FtLast2,
    #[serde(rename = "ft-all")]
    FtAll,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::TargetOnly,
        Preset::SourceOnly,
        Preset::SourceTarget,
        Preset::FtLast,
        Preset::FtLast2,
        Preset::FtAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TargetOnly => "target-only",
            Preset::SourceOnly => "source-only",
            Preset::SourceTarget => "source+target",
            Preset::FtLast => "ft-last",
            Preset::FtLast2 => "ft-last2",
            Preset::FtAll => "ft-all",
        }
    }

    /// Whether the preset starts from source-pretrained weights.
    pub fn uses_pretraining(self) -> bool {
        !matches!(self, Preset::TargetOnly | Preset::SourceTarget)
    }

    /// Parameter patterns held fixed during the target stage.
    fn frozen_patterns(self, kind: ModelKind) -> Vec<&'static str> {
        match (self, kind) {
            (Preset::SourceOnly, _) => vec!["*"],
            (Preset::FtLast, ModelKind::Qacnn) => {
                vec![qacnn::EMBED, "qacnn.cnn1.*", "qacnn.cnn2.*", "qacnn.fc1.*"]
            }
            (Preset::FtLast2, ModelKind::Qacnn) => vec![qacnn::EMBED, "qacnn.cnn1.*", "qacnn.cnn2.*"],
            (Preset::FtLast, ModelKind::Memn2n) => vec![memn2n::EMBED_A, memn2n::EMBED_B, memn2n::EMBED_C],
            (Preset::FtLast2, ModelKind::Memn2n) => vec![memn2n::EMBED_A, memn2n::EMBED_B],
            _ => vec![],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown freeze preset {s:?}")))
    }
}

/// Which parameters may change during the target stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FreezeSpec {
    pub preset: Preset,
    /// Extra `*`-glob patterns to hold fixed on top of the preset.
    pub frozen: Vec<String>,
    /// Let tables initialized from pretrained vectors update too.
    pub train_pretrained: bool,
}

impl FreezeSpec {
    pub fn preset(preset: Preset) -> FreezeSpec {
        FreezeSpec {
            preset,
            ..FreezeSpec::default()
        }
    }

    /// Sets the `frozen` flag on every parameter of `model`.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        let patterns: Vec<&str> = self
            .preset
            .frozen_patterns(model.kind())
            .into_iter()
            .chain(self.frozen.iter().map(String::as_str))
            .collect();
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in &names {
            let pretrained_fixed =
                model.config.freeze_pretrained && !self.train_pretrained && model.pretrained.contains(name);
            let frozen = pretrained_fixed || patterns.iter().any(|p| glob_match(p, name));
            model.params.set_frozen(name, frozen)?;
        }
        if self.preset != Preset::SourceOnly && model.params.trainable_names().is_empty() {
            return Err(Error::Config(format!(
                "freeze spec {} leaves no trainable parameters",
                self.preset
            )));
        }
        Ok(())
    }
}

/// `*` matches any run of characters; everything else is literal.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    match pattern.split_once('*') {
        None => pattern == name,
        Some((head, rest)) => {
            let Some(tail) = name.strip_prefix(head) else {
                return false;
            };
            (0..=tail.len())
                .filter(|i| tail.is_char_boundary(*i))
                .any(|i| glob_match(rest, &tail[i..]))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QtypeAccuracy {
    pub correct: usize,
    pub count: usize,
    pub accuracy: f64,
}

/// One training run. Wall-clock time is deliberately absent so that records
/// from identical runs are byte-identical; callers time runs separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub fingerprint: String,
    pub seed: u64,
    pub config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze: Option<FreezeSpec>,
    pub train_examples: usize,
    pub epochs: Vec<EpochStat>,
    /// 0 when no epoch ran and the input parameters were kept.
    pub selected_epoch: usize,
    pub dev_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype_accuracy: Option<BTreeMap<u8, QtypeAccuracy>>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Highest dev accuracy, earliest epoch on ties; 0 for an empty trace.
pub fn select_epoch(trace: &[EpochStat]) -> usize {
    let mut best: Option<&EpochStat> = None;
    for e in trace {
        if best.is_none_or(|b| e.dev_accuracy > b.dev_accuracy) {
            best = Some(e);
        }
    }
    best.map_or(0, |b| b.epoch)
}

fn require_answer(ex: &McqaExample) -> Result<usize> {
    ex.answer
        .ok_or_else(|| Error::Contract("example has no answer label".into()))
}

/// Fraction of examples whose argmax prediction matches the gold answer.
pub fn evaluate(model: &Model, ds: &EncodedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Contract(format!("cannot evaluate empty dataset {}", ds.name)));
    }
    let correct = ds
        .examples
        .par_iter()
        .map(|ex| Ok(usize::from(model.predict(ex)? == require_answer(ex)?)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / ds.len() as f64)
}

pub fn eval_by_qtype(model: &Model, ds: &EncodedDataset) -> Result<BTreeMap<u8, QtypeAccuracy>> {
    let outcomes = ds
        .examples
        .par_iter()
        .map(|ex| {
            let t = ex
                .qtype
                .ok_or_else(|| Error::Contract("example has no question type".into()))?;
            Ok((t, model.predict(ex)? == require_answer(ex)?))
        })
        .collect::<Result<Vec<(u8, bool)>>>()?;
    let mut out: BTreeMap<u8, QtypeAccuracy> = BTreeMap::new();
    for (t, ok) in outcomes {
        let e = out.entry(t).or_insert(QtypeAccuracy {
            correct: 0,
            count: 0,
            accuracy: 0.0,
        });
        e.count += 1;
        e.correct += usize::from(ok);
    }
    for e in out.values_mut() {
        e.accuracy = e.correct as f64 / e.count as f64;
    }
    Ok(out)
}

/// Mean cross-entropy over one pass of mini-batch SGD. Each batch's gradient
/// is the mean over its examples.
pub(crate) fn sgd_epoch(model: &mut Model, examples: &[&McqaExample], lr: f64, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in examples.chunks(batch) {
        model.params.zero_grad();
        let scale = 1.0 / chunk.len() as f64;
        for ex in chunk {
            let target = require_answer(ex)?;
            let mut g = Graph::new();
            let loss = model.loss(&mut g, ex, target)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value}")));
            }
            total += value;
            let grads = g.backward(loss)?;
            drop(g);
            model.params.accumulate(&grads, scale)?;
        }
        sgd_step(&mut model.params, lr)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Trains the unfrozen parameters of `model` and returns the parameters from
/// the epoch with the best dev accuracy.
pub fn train(
    model: &Model,
    train: &EncodedDataset,
    dev: &EncodedDataset,
    cfg: &TrainConfig,
    stream: &SeedStream,
) -> Result<(Model, RunRecord)> {
    cfg.validate()?;
    for ex in &train.examples {
        require_answer(ex)?;
    }
    let mut current = model.clone();
    let mut best = model.clone();
    let mut trace = Vec::new();
    let mut since_best = 0;
    if !train.is_empty() {
        for epoch in 1..=cfg.max_epochs {
            let mut order: Vec<&McqaExample> = train.examples.iter().collect();
            order.shuffle(&mut stream.derive_index(epoch as u64).rng());
            let train_loss = sgd_epoch(&mut current, &order, cfg.lr, cfg.batch_size)?;
            let dev_accuracy = evaluate(&current, dev)?;
            let improved = trace.last().is_none() || dev_accuracy > trace_best(&trace);
            trace.push(EpochStat {
                epoch,
                train_loss,
                dev_accuracy,
            });
            if improved {
                best = current.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let selected_epoch = select_epoch(&trace);
    let dev_accuracy = match trace.iter().find(|e| e.epoch == selected_epoch) {
        Some(e) => e.dev_accuracy,
        None => evaluate(&best, dev)?,
    };
    let record = RunRecord {
        label: String::from("train"),
        fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        config: cfg.clone(),
        freeze: None,
        train_examples: train.len(),
        epochs: trace,
        selected_epoch,
        dev_accuracy,
        test_accuracy: None,
        qtype_accuracy: None,
    };
    Ok((best, record))
}

fn trace_best(trace: &[EpochStat]) -> f64 {
    trace.iter().map(|e| e.dev_accuracy).fold(f64::NEG_INFINITY, f64::max)
}

/// Train/dev/test splits of one corpus, encoded against a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: EncodedDataset,
    pub dev: EncodedDataset,
    pub test: EncodedDataset,
}

impl Splits {
    pub fn encode(triple: &DatasetTriple, vocab: &Vocab, bounds: Bounds) -> Splits {
        Splits {
            train: triple.train.encode(vocab, bounds),
            dev: triple.dev.encode(vocab, bounds),
            test: triple.test.encode(vocab, bounds),
        }
    }
}

/// Everything a transfer run needs besides its configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub source: Splits,
    pub target: Splits,
    pub vocab_len: usize,
    pub vectors: Option<EmbeddingMatrix>,
}

impl Experiment {
    /// Encodes both corpora against one vocabulary built from all six splits.
    /// `vectors`, when given, initialize the embedding table.
    pub fn build(
        source: &DatasetTriple,
        target: &DatasetTriple,
        vectors: Option<&[(String, Vec<f64>)]>,
        model: &ModelConfig,
        seed: u64,
    ) -> Result<(Experiment, Vocab)> {
        let all = [
            &source.train,
            &source.dev,
            &source.test,
            &target.train,
            &target.dev,
            &target.test,
        ];
        let vocab = build_vocab(&all, 1);
        let vectors = vectors
            .map(|v| EmbeddingMatrix::from_vectors(v, &vocab, model.embed_dim, &SeedStream::new(seed)))
            .transpose()?;
        let exp = Experiment {
            source: Splits::encode(source, &vocab, model.bounds),
            target: Splits::encode(target, &vocab, model.bounds),
            vocab_len: vocab.len(),
            vectors,
        };
        Ok((exp, vocab))
    }

    pub fn from_synthetic(corpus: &SynthCorpus, model: &ModelConfig, seed: u64) -> Result<(Experiment, Vocab)> {
        Experiment::build(&corpus.source, &corpus.target, Some(&corpus.vectors), model, seed)
    }

    /// Fresh parameters for `cfg.seed`; every preset starts from these.
    pub fn init_model(&self, cfg: &TrainConfig) -> Result<Model> {
        Model::init(&cfg.model, self.vocab_len, self.vectors.as_ref(), &SeedStream::new(cfg.seed))
    }

    /// Step one: train on the source with everything trainable except frozen
    /// pretrained tables.
    pub fn pretrain(&self, cfg: &TrainConfig) -> Result<(Model, RunRecord)> {
        self.pretrain_on(&self.source.train, cfg)
    }

    fn pretrain_on(&self, source_train: &EncodedDataset, cfg: &TrainConfig) -> Result<(Model, RunRecord)> {
        let mut model = self.init_model(cfg)?;
        model.unfreeze_all()?;
        let stream = SeedStream::new(cfg.seed).derive("pretrain");
        let (model, mut rec) = train(&model, source_train, &self.source.dev, cfg, &stream)?;
        rec.label = "pretrain".into();
        rec.test_accuracy = Some(evaluate(&model, &self.source.test)?);
        Ok((model, rec))
    }

    /// Step two for one preset. `pretrained` is the output of [`Self::pretrain`]
    /// and is ignored by presets that start from scratch.
    pub fn run_preset(
        &self,
        pretrained: Option<&Model>,
        target_train: &EncodedDataset,
        cfg: &TrainConfig,
        freeze: &FreezeSpec,
    ) -> Result<(Model, RunRecord)> {
        let seed = SeedStream::new(cfg.seed);
        let stage = match freeze.preset {
            Preset::FtLast | Preset::FtLast2 | Preset::FtAll => cfg.finetune_stage(),
            _ => cfg.clone(),
        };
        let (start, data, stream) = match freeze.preset {
            Preset::TargetOnly => (self.init_model(cfg)?, target_train.clone(), seed.derive("target")),
            Preset::SourceTarget => {
                let mut joint = self.source.train.clone();
                joint.examples.extend(target_train.examples.iter().cloned());
                joint.name = format!("{}+{}", self.source.train.name, target_train.name);
                // Mixed choice counts; nothing downstream reads this field.
                joint.choice_count = 0;
                (self.init_model(cfg)?, joint, seed.derive("joint"))
            }
            Preset::SourceOnly => {
                let p = pretrained.ok_or_else(|| Error::Contract("source-only needs a pretrained model".into()))?;
                let mut empty = target_train.clone();
                empty.examples.clear();
                (p.clone(), empty, seed.derive("finetune"))
            }
            _ => {
                let p = pretrained.ok_or_else(|| Error::Contract("fine-tuning needs a pretrained model".into()))?;
                (p.clone(), target_train.clone(), seed.derive("finetune"))
            }
        };
        let mut start = start;
        freeze.apply(&mut start)?;
        let (model, mut rec) = train(&start, &data, &self.target.dev, &stage, &stream)?;
        rec.label = freeze.preset.name().into();
        rec.freeze = Some(freeze.clone());
        rec.test_accuracy = Some(evaluate(&model, &self.target.test)?);
        if self.target.test.examples.iter().all(|e| e.qtype.is_some()) {
            rec.qtype_accuracy = Some(eval_by_qtype(&model, &self.target.test)?);
        }
        Ok((model, rec))
    }

    /// Both steps. Pretraining does not depend on `freeze`.
    pub fn transfer_run(&self, cfg: &TrainConfig, freeze: &FreezeSpec) -> Result<TransferOutcome> {
        let pretrain = if freeze.preset.uses_pretraining() {
            Some(self.pretrain(cfg)?)
        } else {
            None
        };
        let (model, run) = self.run_preset(pretrain.as_ref().map(|p| &p.0), &self.target.train, cfg, freeze)?;
        Ok(TransferOutcome {
            pretrain: pretrain.map(|p| p.1),
            run,
            model,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub pretrain: Option<RunRecord>,
    pub run: RunRecord,
    pub model: Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Target,
    Source,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Target => "target",
            Axis::Source => "source",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: f64,
    /// Test accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
    /// Change in mean from the previous row.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunRecord>,
}

/// Worker count for ablation sweeps: the environment cap if set, else the
/// number of available CPUs.
pub fn ablation_threads() -> usize {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(cpus)
}

/// Mean and sample standard deviation.
pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Experiment {
    /// Runs `freeze` for every fraction × seed, subsampling the chosen axis.
    /// On the target axis fraction 0 is the zero-shot model. On the source
    /// axis fraction 0 means no pretraining, which is the target-only run.
    pub fn ablate_fraction(
        &self,
        axis: Axis,
        fractions: &[f64],
        base: &TrainConfig,
        freeze: &FreezeSpec,
        seeds: &[u64],
        threads: usize,
    ) -> Result<AblationTable> {
        check_fractions(fractions)?;
        if seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        if matches!(freeze.preset, Preset::TargetOnly | Preset::SourceOnly | Preset::SourceTarget) {
            return Err(Error::Config(format!(
                "ablation needs a fine-tuning preset, got {}",
                freeze.preset
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let jobs: Vec<(usize, u64)> = (0..fractions.len())
            .flat_map(|f| seeds.iter().map(move |s| (f, *s)))
            .collect();

        let runs: Vec<RunRecord> = pool.install(|| -> Result<Vec<RunRecord>> {
            match axis {
                Axis::Target => {
                    let pretrained = seeds
                        .par_iter()
                        .map(|s| Ok((*s, self.pretrain(&base.with_seed(*s))?.0)))
                        .collect::<Result<BTreeMap<u64, Model>>>()?;
                    jobs.par_iter()
                        .map(|(f, s)| {
                            let cfg = base.with_seed(*s);
                            let sub = self.target.train.subsample(fractions[*f], *s)?;
                            let (_, mut rec) = self.run_preset(Some(&pretrained[s]), &sub, &cfg, freeze)?;
                            rec.label = format!("target-{}", fractions[*f]);
                            Ok(rec)
                        })
                        .collect()
                }
                Axis::Source => jobs
                    .par_iter()
                    .map(|(f, s)| {
                        let cfg = base.with_seed(*s);
                        let sub = self.source.train.subsample(fractions[*f], *s)?;
                        let mut rec = if sub.is_empty() {
                            self.run_preset(None, &self.target.train, &cfg, &FreezeSpec::preset(Preset::TargetOnly))?
                                .1
                        } else {
                            let (p, _) = self.pretrain_on(&sub, &cfg)?;
                            self.run_preset(Some(&p), &self.target.train, &cfg, freeze)?.1
                        };
                        rec.label = format!("source-{}", fractions[*f]);
                        Ok(rec)
                    })
                    .collect(),
            }
        })?;

        let mut rows: Vec<AblationRow> = Vec::with_capacity(fractions.len());
        for (fi, fraction) in fractions.iter().enumerate() {
            let accuracies: Vec<f64> = jobs
                .iter()
                .zip(&runs)
                .filter(|((f, _), _)| *f == fi)
                .map(|(_, r)| r.test_accuracy.unwrap_or(f64::NAN))
                .collect();
            let (mean, stdev) = mean_stdev(&accuracies);
            let delta = rows.last().map(|prev| mean - prev.mean);
            rows.push(AblationRow {
                fraction: *fraction,
                accuracies,
                mean,
                stdev,
                delta,
            });
        }
        Ok(AblationTable {
            axis,
            preset: freeze.preset,
            seeds: seeds.to_vec(),
            rows,
            runs,
        })
    }
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    let sorted = fractions.windows(2).all(|w| w[0] < w[1]);
    let bounded = fractions.iter().all(|f| (0.0..=1.0).contains(f));
    if !sorted || !bounded || fractions.first() != Some(&0.0) || fractions.last() != Some(&1.0) {
        return Err(Error::Config(format!(
            "fractions must ascend strictly from 0 to 1, got {fractions:?}"
        )));
    }
    Ok(())
}

/// Target train split with every answer removed, for self-labeling.
pub fn strip_answers(ds: &EncodedDataset) -> EncodedDataset {
    EncodedDataset {
        examples: ds.examples.iter().map(McqaExample::without_answer).collect(),
        split: Split::Train,
        ..ds.clone()
    }
}
