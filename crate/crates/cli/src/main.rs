use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use spoofbench_core::corpus::{build_manifest, corrupt, ConditionTag, CorpusManifest, CorruptParams};
use spoofbench_core::enhancer::{enhance, SeganConfig};
use spoofbench_core::nn::checkpoint;
use spoofbench_core::signal::{read_features, read_wav, write_features, write_wav, CqccConfig, MelConfig};
use spoofbench_core::tts::{read_alignment, ArModelConfig};
use spoofbench_core::vc::{ConversionDirection, CycleGanConfig};
use spoofbench_core::vocoder::{copy_synthesis, GenerationMode, WaveNetConfig};
use spoofbench_core::corpus::condition_code;
use spoofbench_core::Error;
use spoofbench_cli::records::{write_jsonl, PairRecord};
use spoofbench_cli::{ops, pipeline, report, CliError, CliResult, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "spoofbench", version, about = "Found-data speech enhancement, synthesis and spoofing countermeasure pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

/// Every stage runs in pipeline mode with `--config <pipeline.toml>`;
/// passing `--out` switches to direct mode on explicit files.
#[derive(Subcommand)]
enum Command {
    /// Write the default pipeline config.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Toy corpus (pipeline), or a manifest from a directory of WAVs.
    Ingest(IngestArgs),
    Corrupt(CorruptArgs),
    EnhanceTrain(EnhanceTrainArgs),
    Enhance(EnhanceArgs),
    Features(FeaturesArgs),
    VcTrain(VcTrainArgs),
    VcConvert(VcConvertArgs),
    TtsTrain(TtsTrainArgs),
    TtsSynth(TtsSynthArgs),
    VocoderTrain(VocoderTrainArgs),
    /// Vocode every synthesized or converted utterance (pipeline only).
    Generate(StageOnly),
    /// Vocode one feature file.
    VocoderGenerate(VocoderGenerateArgs),
    CopySynth(CopySynthArgs),
    CmTrain(CmTrainArgs),
    CmScore(CmScoreArgs),
    /// SNR histograms of the found, corrupted and enhanced corpora.
    Report(StageOnly),
    /// SNR histogram of one manifest.
    SnrReport {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StageOnly {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long, default_value = "original")]
    condition: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    /// Output directory; receives the audio, `noisy.jsonl` and `pairs.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// A WAV file or a manifest.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "n")]
    regime: String,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "original")]
    condition: String,
    /// Feature manifest; the dumps go to a sibling `<stem>_feat` directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VcTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VcConvertArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "forward")]
    dir: String,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TtsTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature manifest whose records carry alignments.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TtsSynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    alignment: Option<PathBuf>,
    #[arg(long, default_value = "original")]
    condition: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VocoderTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VocoderGenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "original")]
    condition: String,
    #[arg(long, default_value = "sample")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CopySynthArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "original")]
    condition: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CmTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bonafide: Option<PathBuf>,
    #[arg(long)]
    spoof: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    mix: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CmScoreArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    models: Option<PathBuf>,
    /// `bonafide:<manifest>` or `spoof:<manifest>`, repeatable.
    #[arg(long)]
    eval: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("direct mode needs {flag}")))
}

/// Model config from an optional TOML file.
fn model_config<T: DeserializeOwned>(path: &Option<PathBuf>, fallback: T) -> CliResult<T> {
    match path {
        None => Ok(fallback),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn stage(config: &Option<PathBuf>, s: Stage) -> CliResult<()> {
    let path = config.as_ref().ok_or_else(|| CliError::Config(format!("{s} needs --config <pipeline.toml> or --out for direct mode")))?;
    let cfg = PipelineConfig::load(path)?;
    let st = pipeline::run_stage(&cfg, s)?;
    println!("{} ok in {:.1} s, outputs {}", st.stage, st.wall_time_s, &st.outputs_digest[..12]);
    Ok(())
}

fn load_manifest(path: &Path) -> CliResult<CorpusManifest> {
    CorpusManifest::read(path).map_err(|e| match e {
        Error::Io(io) => CliError::Dependency(format!("{}: {io}", path.display())),
        e => e.into(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Command::Config { out } => {
            let text = PipelineConfig::default().to_toml();
            match out {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::load(&config)?;
            for st in pipeline::run_pipeline(&cfg)? {
                println!("{:<14} {:>8.1} s  {}", st.stage, st.wall_time_s, &st.outputs_digest[..12]);
            }
            let s = pipeline::read_summary(&cfg.workspace)?;
            println!("snr found {:.2} dB, corrupted {:.2} dB, enhanced {:.2} dB", s.found_snr_mean_db, s.corrupted_snr_mean_db, s.enhanced_snr_mean_db);
            if let Some(eer) = s.eer_percent {
                println!("countermeasure EER {eer:.2}%");
            }
        }
        Command::Ingest(a) => match &a.out {
            None => stage(&a.config, Stage::Ingest)?,
            Some(out) => {
                let dir = need(&a.audio_dir, "--audio-dir")?;
                let tr = a.transcripts.clone().unwrap_or_else(|| dir.clone());
                let (m, skipped) = build_manifest(dir, &tr, a.condition.parse::<ConditionTag>()?)?;
                m.write(out)?;
                println!("{} records, {skipped} skipped", m.len());
            }
        },
        Command::Corrupt(a) => match &a.out {
            None => stage(&a.config, Stage::Corrupt)?,
            Some(out) => {
                let m = load_manifest(need(&a.input, "--in")?)?;
                let tag: ConditionTag = need(&a.kind, "--kind")?.parse()?;
                let params: CorruptParams = model_config(&a.config, CorruptParams::default())?;
                fs::create_dir_all(out)?;
                let mut noisy = CorpusManifest::new();
                let mut pairs = Vec::new();
                for (i, r) in m.records().iter().enumerate() {
                    let wav = corrupt(&read_wav(&r.audio_path)?, &tag, &CorruptParams { seed: params.seed.wrapping_add(i as u64), ..params })?;
                    let path = out.join(format!("{}.wav", r.id.replace('/', "_")));
                    write_wav(&path, &wav)?;
                    pairs.push(PairRecord { id: r.id.clone(), noisy_path: path.clone(), clean_path: r.audio_path.clone() });
                    noisy.push(spoofbench_core::corpus::UtteranceRecord {
                        audio_path: path,
                        condition: tag.clone(),
                        snr_db: spoofbench_core::signal::estimate_snr(&wav).ok(),
                        ..r.clone()
                    })?;
                }
                noisy.write(out.join("noisy.jsonl"))?;
                write_jsonl(out.join("pairs.jsonl"), &pairs)?;
            }
        },
        Command::EnhanceTrain(a) => match &a.out {
            None => stage(&a.config, Stage::EnhanceTrain)?,
            Some(out) => {
                let cfg: SeganConfig = model_config(&a.config, SeganConfig::default())?;
                ops::enhance_train(need(&a.pairs, "--pairs")?, &cfg, out)?;
            }
        },
        Command::Enhance(a) => match &a.out {
            None => stage(&a.config, Stage::Enhance)?,
            Some(out) => {
                let ps = checkpoint::load(need(&a.ckpt, "--ckpt")?)?;
                let input = need(&a.input, "--in")?;
                if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                    fs::create_dir_all(out)?;
                    let wav = enhance(&read_wav(input)?, &ps)?;
                    write_wav(out.join(input.file_name().expect("file name")), &wav)?;
                } else {
                    ops::enhance_manifest(&ps, &load_manifest(input)?, &a.regime, out)?.write(out.join("enhanced.jsonl"))?;
                }
            }
        },
        Command::Features(a) => match &a.out {
            None => stage(&a.config, Stage::Features)?,
            Some(out) => {
                let m = load_manifest(need(&a.manifest, "--manifest")?)?;
                let rate = m.records().first().map(|r| read_wav(&r.audio_path)).transpose()?.map_or(16000, |w| w.sample_rate());
                let mel: MelConfig = model_config(&a.config, MelConfig::for_rate(rate))?;
                let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "features".into());
                let dir = out.with_file_name(format!("{stem}_feat"));
                condition_code(&a.condition)?;
                write_jsonl(out, &ops::mel_features(&m, &mel, &a.condition, &dir)?)?;
            }
        },
        Command::VcTrain(a) => match &a.out {
            None => stage(&a.config, Stage::VcTrain)?,
            Some(out) => {
                let cfg: CycleGanConfig = model_config(&a.config, CycleGanConfig::desk())?;
                ops::vc_train(need(&a.src, "--src")?, need(&a.tgt, "--tgt")?, &cfg, out)?;
            }
        },
        Command::VcConvert(a) => match &a.out {
            None => stage(&a.config, Stage::VcConvert)?,
            Some(out) => {
                let ps = checkpoint::load(need(&a.ckpt, "--ckpt")?)?;
                let dir: ConversionDirection = a.dir.parse().map_err(|e: Error| CliError::Config(e.to_string()))?;
                let mel = read_features(need(&a.input, "--in")?)?;
                write_features(out, &ops::vc_convert_mel(&mel, &ps, dir)?)?;
            }
        },
        Command::TtsTrain(a) => match &a.out {
            None => stage(&a.config, Stage::TtsTrain)?,
            Some(out) => {
                let cfg: ArModelConfig = model_config(&a.config, ArModelConfig::desk())?;
                ops::tts_train(need(&a.corpus, "--corpus")?, &cfg, out)?;
            }
        },
        Command::TtsSynth(a) => match &a.out {
            None => stage(&a.config, Stage::TtsSynth)?,
            Some(out) => {
                let ps = checkpoint::load(need(&a.ckpt, "--ckpt")?)?;
                let align = read_alignment(need(&a.alignment, "--alignment")?)?;
                write_features(out, &ops::tts_synth_alignment(&align, &ps, &a.condition, a.seed)?)?;
            }
        },
        Command::VocoderTrain(a) => match &a.out {
            None => stage(&a.config, Stage::VocoderTrain)?,
            Some(out) => {
                let cfg: WaveNetConfig = model_config(&a.config, WaveNetConfig::default())?;
                ops::vocoder_train(need(&a.corpus, "--corpus")?, &cfg, out)?;
            }
        },
        Command::Generate(a) => stage(&Some(a.config), Stage::Generate)?,
        Command::VocoderGenerate(a) => {
            let ps = checkpoint::load(&a.ckpt)?;
            let mode: GenerationMode = a.mode.parse().map_err(|e: Error| CliError::Config(e.to_string()))?;
            let mel = read_features(&a.input)?;
            write_wav(&a.out, &ops::vocode(&mel, &a.condition, &ps, a.seed, mode)?)?;
        }
        Command::CopySynth(a) => {
            let ps = checkpoint::load(&a.ckpt)?;
            write_wav(&a.out, &copy_synthesis(&read_wav(&a.input)?, condition_code(&a.condition)?, &ps)?)?;
        }
        Command::CmTrain(a) => match &a.out {
            None => stage(&a.config, Stage::CmTrain)?,
            Some(out) => {
                let cqcc: CqccConfig = model_config(&a.config, CqccConfig::default())?;
                ops::cm_train(need(&a.bonafide, "--bonafide")?, need(&a.spoof, "--spoof")?, a.mix, a.iters, &cqcc, a.seed, out)?;
            }
        },
        Command::CmScore(a) => match &a.out {
            None => stage(&a.config, Stage::CmScore)?,
            Some(out) => {
                let mut bona = CorpusManifest::new();
                let mut spoof = CorpusManifest::new();
                for e in &a.eval {
                    let (label, path) = e.split_once(':').ok_or_else(|| CliError::Config(format!("--eval expects label:path, got {e:?}")))?;
                    let target = match label {
                        "bonafide" => &mut bona,
                        "spoof" => &mut spoof,
                        _ => return Err(CliError::Config(format!("unknown label {label:?}"))),
                    };
                    for r in load_manifest(Path::new(path))?.records() {
                        target.push(r.clone())?;
                    }
                }
                let (_, summary) = ops::cm_score(need(&a.models, "--models")?, &bona, &spoof, out)?;
                println!("EER {:.2}% over {} bona fide and {} spoof utterances", summary.eer_percent, summary.bonafide, summary.spoof);
            }
        },
        Command::Report(a) => {
            stage(&Some(a.config.clone()), Stage::Report)?;
            let cfg = PipelineConfig::load(&a.config)?;
            let s = pipeline::read_summary(&cfg.workspace)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::SnrReport { manifest, out } => {
            let rep = report::snr_report(&load_manifest(&manifest)?, &manifest.display().to_string())?;
            match out {
                Some(p) => fs::write(p, rep.to_text())?,
                None => print!("{}", rep.to_text()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
