mod bundle;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mcqa_transfer::corpus::{gen_synthetic, write_vectors, Vocab};
use mcqa_transfer::model::{argmax, Checkpoint, Model, ModelKind};
use mcqa_transfer::report::{self, Reference};
use mcqa_transfer::selflabel::{self_label_finetune, SelfLabelConfig};
use mcqa_transfer::transfer::{
    ablation_threads, eval_by_qtype, evaluate, strip_answers, Experiment, FreezeSpec, Preset, RunRecord,
};
use mcqa_transfer::{qacnn, Error, ErrorKind, Result};
use serde_json::json;

use bundle::Bundle;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "mcqa", version, about = "Transfer learning experiments for multi-choice question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the source corpus and write a checkpoint.
    Pretrain(Flags),
    /// Run one freeze preset on the target corpus from a pretrained checkpoint.
    Finetune(Flags),
    /// Self-label the unlabeled target train split and trace test accuracy.
    Selflabel(Flags),
    /// Evaluate a checkpoint on the target dev and test splits.
    Eval(Flags),
    /// Sweep target or source training fractions over several seeds.
    Ablate(Flags),
    /// Write the synthetic benchmark and its vectors.
    GenSynth(Flags),
    /// Render QACNN attention for one target test example.
    ExportAttn(Flags),
}

#[derive(Args, Clone, Debug, Default)]
struct Flags {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Freeze preset: target-only, source-only, source+target, ft-last, ft-last2, ft-all.
    #[arg(long)]
    freeze: Option<Preset>,
    /// Comma-separated ablation fractions, ascending from 0 to 1.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Training epochs (self-label epochs for `selflabel`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Target test example index for `export-attn`.
    #[arg(long, default_value_t = 0)]
    example: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, flags) = match &cli.command {
        Command::Pretrain(f) => ("pretrain", f),
        Command::Finetune(f) => ("finetune", f),
        Command::Selflabel(f) => ("selflabel", f),
        Command::Eval(f) => ("eval", f),
        Command::Ablate(f) => ("ablate", f),
        Command::GenSynth(f) => ("gen-synth", f),
        Command::ExportAttn(f) => ("export-attn", f),
    };
    match run(name, flags) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn resolve(name: &str, flags: &Flags) -> Result<ExperimentConfig> {
    let mut cfg = match &flags.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(o) = &flags.out {
        cfg.out = o.clone();
    }
    if let Some(p) = flags.freeze {
        if name == "selflabel" {
            cfg.selflabel.freeze.preset = p;
        } else {
            cfg.freeze.preset = p;
        }
    }
    if let Some(f) = &flags.fractions {
        cfg.ablate.fractions = f.clone();
    }
    if let Some(e) = flags.epochs {
        if name == "selflabel" {
            cfg.selflabel.epochs = e;
        } else {
            cfg.train.max_epochs = e;
        }
    }
    cfg.validate(name)?;
    Ok(cfg)
}

fn run(name: &str, flags: &Flags) -> Result<PathBuf> {
    let mut cfg = resolve(name, flags)?;
    let started = Instant::now();
    let checkpoint = if matches!(name, "finetune" | "selflabel" | "eval" | "export-attn") {
        let path = flags
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{name} needs --checkpoint")))?;
        let ck = Checkpoint::load(path)?;
        // the checkpoint's architecture wins over the config file
        cfg.train.model = ck.manifest.model.clone();
        Some(ck)
    } else {
        None
    };
    let mut bundle = Bundle::new(&cfg.out, name);
    match name {
        "gen-synth" => gen_synth(&cfg, &mut bundle)?,
        "pretrain" => pretrain(&cfg, &mut bundle)?,
        "ablate" => ablate(&cfg, &mut bundle)?,
        _ => {
            let ck = checkpoint.expect("loaded above");
            let (exp, vocab) = cfg.experiment()?;
            if ck.manifest.vocab != vocab {
                return Err(Error::Contract(
                    "checkpoint vocabulary differs from the configured data".into(),
                ));
            }
            let model = ck.model()?;
            match name {
                "finetune" => finetune(&cfg, &exp, &vocab, &model, &mut bundle)?,
                "selflabel" => selflabel(&cfg, &exp, &vocab, &model, &mut bundle)?,
                "eval" => eval(&exp, &model, &mut bundle)?,
                _ => export_attn(flags.example, &exp, &vocab, &model, &mut bundle)?,
            }
        }
    }
    bundle.time("total", started.elapsed());
    bundle.finish(&cfg)
}

fn checkpoint_of(model: &Model, vocab: &Vocab, cfg: &ExperimentConfig) -> Result<Checkpoint> {
    Ok(Checkpoint::new(model, vocab, cfg.seed, serde_json::to_value(cfg.train_config())?))
}

fn gen_synth(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<()> {
    let corpus = gen_synthetic(&cfg.synth())?;
    bundle.ensure_dir()?;
    for (side, triple) in [("source", &corpus.source), ("target", &corpus.target)] {
        for ds in [&triple.train, &triple.dev, &triple.test] {
            let name = format!("{side}.{}.jsonl", ds.split);
            ds.save(&bundle.path(&name))?;
            bundle.register(&name)?;
        }
    }
    write_vectors(&bundle.path("vectors.txt"), &corpus.vectors)?;
    bundle.register("vectors.txt")?;
    bundle.write_json("synonyms.json", &corpus.synonyms)
}

fn pretrain(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<()> {
    let (exp, vocab) = cfg.experiment()?;
    let t = Instant::now();
    let (model, record) = exp.pretrain(&cfg.train_config())?;
    bundle.time("pretrain", t.elapsed());
    bundle.write_record("pretrain.record.json", &record)?;
    bundle.write("runs.csv", report::runs_csv(std::slice::from_ref(&record)))?;
    bundle.write_checkpoint("checkpoint.json", &checkpoint_of(&model, &vocab, cfg)?)
}

fn finetune(cfg: &ExperimentConfig, exp: &Experiment, vocab: &Vocab, pretrained: &Model, bundle: &mut Bundle) -> Result<()> {
    let t = Instant::now();
    let (model, record) = exp.run_preset(Some(pretrained), &exp.target.train, &cfg.train_config(), &cfg.freeze)?;
    bundle.time("finetune", t.elapsed());
    bundle.write_record("finetune.record.json", &record)?;
    bundle.write("runs.csv", report::runs_csv(std::slice::from_ref(&record)))?;
    bundle.write_checkpoint("checkpoint.json", &checkpoint_of(&model, vocab, cfg)?)
}

fn selflabel(cfg: &ExperimentConfig, exp: &Experiment, vocab: &Vocab, model: &Model, bundle: &mut Bundle) -> Result<()> {
    let s = &cfg.selflabel;
    let base = cfg.train_config().finetune_stage();
    let inner = mcqa_transfer::transfer::TrainConfig {
        lr: s.lr.unwrap_or(base.lr),
        batch_size: s.batch_size.unwrap_or(base.batch_size),
        ..base
    };
    let sl = SelfLabelConfig {
        epochs: s.epochs,
        passes: s.passes,
        train: inner.clone(),
        freeze: s.freeze.clone(),
        select_peak: s.select_peak,
    };
    let t = Instant::now();
    let out = self_label_finetune(model, &strip_answers(&exp.target.train), &exp.target.test, &sl)?;
    bundle.time("selflabel", t.elapsed());
    bundle.write("trace.csv", out.trace.to_csv())?;
    bundle.write_json(
        "selflabel.json",
        &json!({
            "trace": out.trace,
            "returned_epoch": out.returned_epoch,
            "peak_epoch": out.trace.peak_epoch(),
            "peak_accuracy": out.trace.peak(),
            "select_peak": s.select_peak,
        }),
    )?;

    // supervised references share the inner loop's learning rate and batch size
    let matched = mcqa_transfer::transfer::TrainConfig {
        finetune_lr: Some(inner.lr),
        finetune_batch_size: Some(inner.batch_size),
        ..cfg.train_config()
    };
    let mut references = Vec::new();
    let mut records: Vec<RunRecord> = Vec::new();
    for p in &s.reference_presets {
        let spec = FreezeSpec {
            preset: *p,
            frozen: Vec::new(),
            train_pretrained: s.freeze.train_pretrained,
        };
        let t = Instant::now();
        let (_, rec) = exp.run_preset(Some(model), &exp.target.train, &matched, &spec)?;
        bundle.time(&format!("reference-{p}"), t.elapsed());
        references.push(Reference {
            label: format!("supervised {p}"),
            accuracy: rec.test_accuracy.unwrap_or(f64::NAN),
        });
        bundle.write_record(&format!("reference.{p}.record.json"), &rec)?;
        records.push(rec);
    }
    if !records.is_empty() {
        bundle.write("runs.csv", report::runs_csv(&records))?;
    }
    bundle.write("curve.svg", report::curve_svg("self-label test accuracy", &out.trace, &references))?;
    bundle.write_checkpoint("checkpoint.json", &checkpoint_of(&out.model, vocab, cfg)?)
}

fn eval(exp: &Experiment, model: &Model, bundle: &mut Bundle) -> Result<()> {
    let t = Instant::now();
    let dev = evaluate(model, &exp.target.dev)?;
    let test = evaluate(model, &exp.target.test)?;
    let tagged = exp.target.test.examples.iter().all(|e| e.qtype.is_some());
    let qtype = if tagged { Some(eval_by_qtype(model, &exp.target.test)?) } else { None };
    bundle.time("eval", t.elapsed());
    bundle.write_json(
        "eval.json",
        &json!({ "dev_accuracy": dev, "test_accuracy": test, "qtype_accuracy": qtype }),
    )
}

fn ablate(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<()> {
    let (exp, _) = cfg.experiment()?;
    for axis in &cfg.ablate.axes {
        let t = Instant::now();
        let table = exp.ablate_fraction(
            *axis,
            &cfg.ablate.fractions,
            &cfg.train_config(),
            &cfg.freeze,
            &cfg.seeds(),
            ablation_threads(),
        )?;
        bundle.time(&format!("ablate-{axis}"), t.elapsed());
        bundle.write(&format!("ablation.{axis}.csv"), report::ablation_csv(&table))?;
        bundle.write_json(&format!("ablation.{axis}.json"), &table)?;
    }
    Ok(())
}

fn export_attn(index: usize, exp: &Experiment, vocab: &Vocab, model: &Model, bundle: &mut Bundle) -> Result<()> {
    if model.kind() != ModelKind::Qacnn {
        return Err(Error::Config("export-attn needs a qacnn checkpoint".into()));
    }
    let ex = exp.target.test.examples.get(index).ok_or(Error::Index {
        index,
        size: exp.target.test.len(),
    })?;
    let probs = model.choice_probs(ex)?;
    let predicted = argmax(&probs);
    let att = qacnn::export_attention(&model.params, &model.config.qacnn, ex, predicted)?;
    let tokens = report::story_tokens(ex, vocab);
    let title = format!("target test example {index}");
    bundle.write("attention.svg", report::attention_svg(&title, &tokens, &att)?)?;
    bundle.write("attention.tsv", report::attention_tsv(&tokens, &att)?)?;
    bundle.write_json(
        "attention.json",
        &json!({
            "example": index,
            "choice_probs": probs,
            "predicted": predicted,
            "answer": ex.answer,
            "tokens": tokens,
            "attention": att,
        }),
    )
}
