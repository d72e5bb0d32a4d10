use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use iqstream::baselines::{train_acoustic_detector, train_acoustic_text_detector, BaselineModel};
use iqstream::corpus::{read_corpus, write_corpus, Corpus};
use iqstream::decoding::write_trace;
use iqstream::pipeline::{asr_wer, build_corpora, evaluate_detector, write_reports, Config, Detector};
use iqstream::training::{train_stage1, train_stage2};
use iqstream::transducer::{read_checkpoint, write_checkpoint, Checkpoint};
use iqstream::{Error, Result};

/// Streaming intended-query detection with an RNN-Transducer.
#[derive(Debug, Parser)]
#[command(name = "iqstream", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config with sections corpus, model, train, baseline, decision, eval.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `decision.beam_size=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct Required {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

impl From<Required> for Common {
    fn from(r: Required) -> Self {
        Common {
            config: Some(r.config),
            overrides: r.overrides,
            out: r.out,
            jobs: r.jobs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Acoustic,
    AcousticText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorKind {
    E2e,
    Acoustic,
    AcousticText,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and eval corpora under `<out>/train` and `<out>/eval`.
    GenCorpus {
        #[command(flatten)]
        common: Required,
    },
    /// Stage 1: train the recognizer, writing `<out>/asr.iqck`.
    TrainAsr {
        #[command(flatten)]
        common: Required,
        /// Defaults to `<out>/train`.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Stage 2: train the IQ joint, writing `<out>/iq.iqck`.
    TrainIq {
        #[command(flatten)]
        common: Required,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Defaults to `<out>/asr.iqck`.
        #[arg(long)]
        asr: Option<PathBuf>,
    },
    /// Train a comparison detector, writing `<out>/acoustic.json` or `<out>/acoustic_text.json`.
    TrainBaseline {
        #[command(flatten)]
        common: Required,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        asr: Option<PathBuf>,
    },
    /// Score every available detector on the eval split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/eval`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        iq: Option<PathBuf>,
        #[arg(long)]
        asr: Option<PathBuf>,
        #[arg(long)]
        acoustic: Option<PathBuf>,
        #[arg(long = "acoustic-text")]
        acoustic_text: Option<PathBuf>,
    },
    /// Stream one utterance and write `<out>/trace.jsonl`.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Utterance id; the first utterance when absent.
        #[arg(long)]
        utterance: Option<String>,
        #[arg(long, value_enum, default_value = "e2e")]
        detector: DetectorKind,
        /// Checkpoint or baseline model; defaults to the matching file under `<out>`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        asr: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply_overrides(&c.overrides)?;
    cfg.validate()?;
    if let Some(j) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::arg(format!("--jobs: {e}")))?;
    }
    Ok(cfg)
}

fn or_default(p: Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.unwrap_or_else(|| out.join(name))
}

fn read_baseline(path: &Path) -> Result<BaselineModel> {
    if !path.exists() {
        return Err(Error::arg(format!("model file {} does not exist", path.display())));
    }
    BaselineModel::read(path)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::arg(format!("checkpoint {} does not exist", path.display())));
    }
    read_checkpoint(path)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { common } => {
            let common = Common::from(common);
            let cfg = load_config(&common)?;
            let (train, eval) = build_corpora(&cfg.corpus)?;
            write_corpus(&common.out.join("train"), &train)?;
            write_corpus(&common.out.join("eval"), &eval)?;
            write_json(&common.out.join("config.json"), &cfg)?;
            info!(
                "wrote {} train and {} eval utterances",
                train.utterances.len(),
                eval.utterances.len()
            );
        }
        Command::TrainAsr { common, corpus } => {
            let common = Common::from(common);
            let cfg = load_config(&common)?;
            let corpus = read_corpus(&or_default(corpus, &common.out, "train"))?;
            let ckpt = train_stage1(&corpus, &cfg.model_for(&corpus), &cfg.train)?;
            write_checkpoint(&common.out.join("asr.iqck"), &ckpt)?;
        }
        Command::TrainIq { common, corpus, asr } => {
            let common = Common::from(common);
            let cfg = load_config(&common)?;
            let corpus = read_corpus(&or_default(corpus, &common.out, "train"))?;
            let parent = load_checkpoint(&or_default(asr, &common.out, "asr.iqck"))?;
            let ckpt = train_stage2(&parent, &corpus, &cfg.train)?;
            write_checkpoint(&common.out.join("iq.iqck"), &ckpt)?;
        }
        Command::TrainBaseline { common, kind, corpus, asr } => {
            let common = Common::from(common);
            let cfg = load_config(&common)?;
            let corpus = read_corpus(&or_default(corpus, &common.out, "train"))?;
            let (model, name) = match kind {
                BaselineKind::Acoustic => {
                    let (params, hist) = train_acoustic_detector(&corpus, &cfg.baseline)?;
                    let m = BaselineModel::Acoustic {
                        params,
                        state_machine: cfg.baseline.state_machine,
                        train_loss_history: hist,
                    };
                    (m, "acoustic.json")
                }
                BaselineKind::AcousticText => {
                    let asr = load_checkpoint(&or_default(asr, &common.out, "asr.iqck"))?;
                    let (params, hist) = train_acoustic_text_detector(&corpus, &asr.params, &cfg.decision, &cfg.baseline)?;
                    let m = BaselineModel::AcousticText {
                        params,
                        eval_stride: cfg.baseline.eval_stride,
                        train_loss_history: hist,
                    };
                    (m, "acoustic_text.json")
                }
            };
            model.write(&common.out.join(name))?;
        }
        Command::Evaluate {
            common,
            corpus,
            iq,
            asr,
            acoustic,
            acoustic_text,
        } => {
            let cfg = load_config(&common)?;
            let out = &common.out;
            let explicit = iq.is_some() || asr.is_some() || acoustic.is_some() || acoustic_text.is_some();
            // Without explicit paths, evaluate whatever the training verbs left under `out`.
            let pick = |p: Option<PathBuf>, name: &str| match p {
                Some(p) => Some(p),
                None if !explicit => Some(out.join(name)).filter(|p| p.exists()),
                None => None,
            };
            let (iq, asr) = (pick(iq, "iq.iqck"), pick(asr, "asr.iqck"));
            let (acoustic, acoustic_text) = (pick(acoustic, "acoustic.json"), pick(acoustic_text, "acoustic_text.json"));
            if [&iq, &asr, &acoustic, &acoustic_text].iter().all(|p| p.is_none()) {
                return Err(Error::arg(format!(
                    "no models to evaluate: expected {} or pass --iq/--acoustic/--acoustic-text",
                    out.join("iq.iqck").display()
                )));
            }
            let eval = read_corpus(&or_default(corpus, out, "eval"))?;
            let iq = iq.map(|p| load_checkpoint(&p)).transpose()?;
            let asr = asr.map(|p| load_checkpoint(&p)).transpose()?;
            let acoustic = acoustic.map(|p| read_baseline(&p)).transpose()?;
            let acoustic_text = acoustic_text.map(|p| read_baseline(&p)).transpose()?;
            let recognizer = asr.as_ref().or(iq.as_ref());
            let wer = recognizer
                .map(|c| asr_wer(&c.params, &eval, &cfg.decision, cfg.eval.wer_utterances))
                .transpose()?;
            let mut results = Vec::new();
            if let Some(c) = &iq {
                results.push(evaluate_detector(Detector::E2e(&c.params), &eval, &cfg, wer)?);
            }
            if let Some(BaselineModel::Acoustic { params, state_machine, .. }) = &acoustic {
                results.push(evaluate_detector(Detector::Acoustic(params, *state_machine), &eval, &cfg, None)?);
            } else if acoustic.is_some() {
                return Err(Error::arg("--acoustic file holds a different detector"));
            }
            if let Some(BaselineModel::AcousticText { params, eval_stride, .. }) = &acoustic_text {
                let asr = recognizer.ok_or_else(|| Error::arg("acoustic-text evaluation needs --asr or --iq"))?;
                let d = Detector::AcousticText {
                    params,
                    asr: &asr.params,
                    eval_stride: *eval_stride,
                };
                results.push(evaluate_detector(d, &eval, &cfg, None)?);
            } else if acoustic_text.is_some() {
                return Err(Error::arg("--acoustic-text file holds a different detector"));
            }
            if results.is_empty() {
                if let Some(w) = wer {
                    println!("WER {:.2}%", 100.0 * w);
                    write_json(&out.join("summary.json"), &serde_json::json!({ "wer": w }))?;
                }
                return Ok(());
            }
            write_reports(out, &results)?;
            let reports: Vec<_> = results.into_iter().map(|(r, _)| r).collect();
            print!("{}", iqstream::eval::format_table(&reports));
            println!("{}", serde_json::to_string(&reports).expect("serialisable"));
        }
        Command::Decode {
            common,
            corpus,
            utterance,
            detector,
            model,
            asr,
        } => {
            let cfg = load_config(&common)?;
            let out = &common.out;
            let corpus: Corpus = read_corpus(&or_default(corpus, out, "eval"))?;
            let utt = match &utterance {
                Some(id) => corpus
                    .utterances
                    .iter()
                    .find(|u| &u.id == id)
                    .ok_or_else(|| Error::arg(format!("no utterance {id:?} in corpus")))?,
                None => corpus.utterances.first().ok_or_else(|| Error::arg("corpus is empty"))?,
            };
            let fp = cfg.corpus.frame_period_ms;
            let output = match detector {
                DetectorKind::E2e => {
                    let c = load_checkpoint(&or_default(model, out, "iq.iqck"))?;
                    Detector::E2e(&c.params).detect(&utt.features, &cfg.decision, fp)?
                }
                DetectorKind::Acoustic => match read_baseline(&or_default(model, out, "acoustic.json"))? {
                    BaselineModel::Acoustic { params, state_machine, .. } => {
                        Detector::Acoustic(&params, state_machine).detect(&utt.features, &cfg.decision, fp)?
                    }
                    _ => return Err(Error::arg("model file holds a different detector")),
                },
                DetectorKind::AcousticText => match read_baseline(&or_default(model, out, "acoustic_text.json"))? {
                    BaselineModel::AcousticText { params, eval_stride, .. } => {
                        let a = load_checkpoint(&or_default(asr, out, "asr.iqck"))?;
                        let d = Detector::AcousticText {
                            params: &params,
                            asr: &a.params,
                            eval_stride,
                        };
                        d.detect(&utt.features, &cfg.decision, fp)?
                    }
                    _ => return Err(Error::arg("model file holds a different detector")),
                },
            };
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let path = out.join("trace.jsonl");
            let name = match detector {
                DetectorKind::E2e => "e2e",
                DetectorKind::Acoustic => "acoustic",
                DetectorKind::AcousticText => "acoustic_text",
            };
            let mut buf = Vec::new();
            write_trace(&mut buf, name, &utt.id, &output, |ids| corpus.vocab.render(ids)).expect("in-memory write");
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("IQSTREAM_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
