//! Experiment configuration file. Precedence: command-line flags, then the
//! file, then built-in defaults.

use std::path::{Path, PathBuf};

use mcqa_transfer::corpus::{load_dataset_as, read_vectors, DatasetTriple, Split, SynthConfig, Vocab};
use mcqa_transfer::corpus::gen_synthetic;
use mcqa_transfer::transfer::{Axis, Experiment, FreezeSpec, Preset, TrainConfig};
use mcqa_transfer::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

impl SplitPaths {
    fn load(&self) -> Result<DatasetTriple> {
        Ok(DatasetTriple {
            train: load_dataset_as(&self.train, Split::Train)?,
            dev: load_dataset_as(&self.dev, Split::Dev)?,
            test: load_dataset_as(&self.test, Split::Test)?,
        })
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.train, &mut self.dev, &mut self.test] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Either a synthetic benchmark or converted dataset files for both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synthetic: Option<SynthConfig>,
    pub source: Option<SplitPaths>,
    pub target: Option<SplitPaths>,
    /// Pretrained word vectors, one `token v1 v2 ...` line per word.
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfLabelSection {
    pub epochs: usize,
    pub passes: usize,
    pub select_peak: bool,
    /// Inner-loop learning rate and batch size; the fine-tuning stage
    /// settings of `train` when unset.
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    /// Supervised presets run from the same checkpoint and drawn as
    /// horizontal reference lines.
    pub reference_presets: Vec<Preset>,
    pub freeze: FreezeSpec,
}

impl Default for SelfLabelSection {
    fn default() -> Self {
        let d = mcqa_transfer::selflabel::SelfLabelConfig::default();
        SelfLabelSection {
            epochs: d.epochs,
            passes: d.passes,
            select_peak: d.select_peak,
            lr: None,
            batch_size: None,
            reference_presets: Vec::new(),
            freeze: d.freeze,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub axes: Vec<Axis>,
    pub fractions: Vec<f64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            axes: vec![Axis::Target, Axis::Source],
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When set, the subcommand must match.
    pub command: Option<String>,
    pub seed: u64,
    /// Seeds for sweeps; `[seed]` when empty.
    pub seeds: Vec<u64>,
    /// Where the bundle goes. Not stored in `config.json`, so the
    /// fingerprint does not depend on it.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub freeze: FreezeSpec,
    pub selflabel: SelfLabelSection,
    pub ablate: AblateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            seed: 0,
            seeds: Vec::new(),
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            freeze: FreezeSpec::default(),
            selflabel: SelfLabelSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML file. Relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for side in [&mut cfg.data.source, &mut cfg.data.target].into_iter().flatten() {
            side.resolve(base);
        }
        if let Some(v) = &mut cfg.data.vectors {
            if v.is_relative() {
                *v = base.join(&*v);
            }
        }
        Ok(cfg)
    }

    /// Checks everything that does not need data, before any compute.
    pub fn validate(&self, command: &str) -> Result<()> {
        if let Some(c) = &self.command {
            if c != command {
                return Err(Error::Config(format!("config is for command {c:?}, ran {command:?}")));
            }
        }
        self.train.validate()?;
        let d = &self.data;
        match (&d.synthetic, &d.source, &d.target) {
            (Some(_), None, None) | (None, Some(_), Some(_)) | (None, None, None) => {}
            (Some(_), _, _) => return Err(Error::Config("data: give either synthetic or source/target paths".into())),
            _ => return Err(Error::Config("data: source and target paths must both be given".into())),
        }
        if d.synthetic.is_some() && d.vectors.is_some() {
            return Err(Error::Config("data: synthetic data ships its own vectors".into()));
        }
        if self.selflabel.epochs == 0 || self.selflabel.passes == 0 {
            return Err(Error::Config("selflabel epochs and passes must be at least 1".into()));
        }
        let f = &self.ablate.fractions;
        let ordered = f.windows(2).all(|w| w[0] < w[1]);
        if !ordered || f.first() != Some(&0.0) || f.last() != Some(&1.0) || f.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("ablate.fractions must ascend from 0 to 1, got {f:?}")));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.with_seed(self.seed)
    }

    pub fn synth(&self) -> SynthConfig {
        self.data.synthetic.clone().unwrap_or_default()
    }

    /// Loads or generates both corpora and encodes them.
    pub fn experiment(&self) -> Result<(Experiment, Vocab)> {
        let model = &self.train.model;
        match (&self.data.source, &self.data.target) {
            (Some(s), Some(t)) => {
                let source = s.load()?;
                let target = t.load()?;
                let vectors = match &self.data.vectors {
                    Some(p) => Some(read_vectors(p, Some(model.embed_dim))?),
                    None => None,
                };
                Experiment::build(&source, &target, vectors.as_deref(), model, self.seed)
            }
            _ => {
                let synth = self.synth();
                if synth.embed_dim != model.embed_dim {
                    return Err(Error::Config(format!(
                        "synthetic embed_dim {} differs from model embed_dim {}",
                        synth.embed_dim, model.embed_dim
                    )));
                }
                let corpus = gen_synthetic(&synth)?;
                Experiment::from_synthetic(&corpus, model, self.seed)
            }
        }
    }
}
