//! Stage runner. Each stage owns `<workspace>/<stage>/`, checks that its
//! upstream stages have finished, and closes with a `status.json` record.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spoofbench_core::corpus::{add_noise, compose_regime, corrupt, regime, segment_on_pauses, ConditionTag, CorpusManifest, CorruptParams, UtteranceRecord};
use spoofbench_core::nn::checkpoint;
use spoofbench_core::signal::{estimate_snr, read_wav, write_wav, Waveform};
use spoofbench_core::toy::{random_utterance, Speaker};
use spoofbench_core::tts::{write_alignment, PhoneSpan};
use spoofbench_core::vc::ConversionDirection;
use spoofbench_core::Error;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::ops;
use crate::records::{alignment_path, read_jsonl, write_jsonl, FeatureRecord, PairRecord};
use crate::report::{snr_report, HistogramReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Corrupt,
    EnhanceTrain,
    Enhance,
    Features,
    VcTrain,
    VcConvert,
    TtsTrain,
    TtsSynth,
    VocoderTrain,
    Generate,
    CmTrain,
    CmScore,
    Report,
}

pub const ALL_STAGES: [Stage; 14] = [
    Stage::Ingest,
    Stage::Corrupt,
    Stage::EnhanceTrain,
    Stage::Enhance,
    Stage::Features,
    Stage::VcTrain,
    Stage::VcConvert,
    Stage::TtsTrain,
    Stage::TtsSynth,
    Stage::VocoderTrain,
    Stage::Generate,
    Stage::CmTrain,
    Stage::CmScore,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Corrupt => "corrupt",
            Stage::EnhanceTrain => "enhance-train",
            Stage::Enhance => "enhance",
            Stage::Features => "features",
            Stage::VcTrain => "vc-train",
            Stage::VcConvert => "vc-convert",
            Stage::TtsTrain => "tts-train",
            Stage::TtsSynth => "tts-synth",
            Stage::VocoderTrain => "vocoder-train",
            Stage::Generate => "generate",
            Stage::CmTrain => "cm-train",
            Stage::CmScore => "cm-score",
            Stage::Report => "report",
        }
    }

    pub fn dependencies(self, cfg: &PipelineConfig) -> Vec<Stage> {
        use Stage::*;
        match self {
            Ingest => vec![],
            Corrupt => vec![Ingest],
            EnhanceTrain => vec![Corrupt],
            Enhance => vec![Ingest, EnhanceTrain],
            Features => vec![Ingest, Enhance],
            VcTrain => vec![Features],
            VcConvert => vec![Features, VcTrain],
            TtsTrain => vec![Features],
            TtsSynth => vec![Features, TtsTrain],
            VocoderTrain => vec![Features],
            Generate => {
                let mut d = vec![VocoderTrain];
                if cfg.generate.sources.iter().any(|s| s == "tts") {
                    d.push(TtsSynth);
                }
                if cfg.generate.sources.iter().any(|s| s == "vc") {
                    d.push(VcConvert);
                }
                d
            }
            CmTrain => vec![Enhance, Generate],
            CmScore => vec![CmTrain],
            Report => vec![Ingest, Corrupt, Enhance],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        ALL_STAGES.iter().copied().find(|st| st.name() == s).ok_or_else(|| CliError::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub inputs_digest: String,
    pub outputs_digest: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

/// Final numbers of a pipeline run, written by the report stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub found_snr_mean_db: f64,
    pub corrupted_snr_mean_db: f64,
    pub enhanced_snr_mean_db: f64,
    pub eer_percent: Option<f64>,
}

pub const STATUS_FILE: &str = "status.json";

pub fn read_status(workspace: &Path, stage: Stage) -> Option<StageStatus> {
    let text = fs::read_to_string(workspace.join(stage.name()).join(STATUS_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    ws: PathBuf,
    dir: PathBuf,
}

impl Ctx<'_> {
    fn upstream(&self, stage: Stage, file: &str) -> PathBuf {
        self.ws.join(stage.name()).join(file)
    }

    fn seed(&self, own: u64) -> u64 {
        own.wrapping_add(self.cfg.seed)
    }
}

fn workspace(cfg: &PipelineConfig) -> CliResult<PathBuf> {
    fs::create_dir_all(&cfg.workspace)?;
    Ok(fs::canonicalize(&cfg.workspace)?)
}

fn section(cfg: &PipelineConfig, stage: Stage) -> serde_json::Value {
    let v = serde_json::to_value(cfg).expect("config serializes");
    let key = match stage {
        Stage::Corrupt => "corrupt",
        Stage::EnhanceTrain => "enhance-train",
        Stage::VcTrain => "vc-train",
        Stage::TtsTrain => "tts-train",
        Stage::VocoderTrain | Stage::Features => "vocoder-train",
        Stage::Generate => "generate",
        Stage::CmTrain | Stage::CmScore => "cm",
        _ => "ingest",
    };
    serde_json::json!({ "seed": cfg.seed, "regime": cfg.regime, "condition": cfg.condition, "section": v[key] })
}

/// Hash of every file under `dir` except the status record, by relative
/// path.
fn digest_dir(dir: &Path) -> CliResult<(String, Vec<String>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.strip_prefix(dir).ok() != Some(Path::new(STATUS_FILE)) {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    let mut names = Vec::new();
    for f in files {
        let rel = f.strip_prefix(dir).expect("under dir").to_string_lossy().into_owned();
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(fs::read(&f)?);
        names.push(rel);
    }
    Ok((hex::encode(h.finalize()), names))
}

/// Runs one stage. Fails with a dependency error, writing nothing, when an
/// upstream stage has not completed.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> CliResult<StageStatus> {
    let ws = workspace(cfg)?;
    let mut h = Sha256::new();
    h.update(stage.name());
    h.update(section(cfg, stage).to_string());
    for dep in stage.dependencies(cfg) {
        let st = read_status(&ws, dep).ok_or_else(|| CliError::Dependency(format!("stage {stage} needs {dep}; run `{dep}` first")))?;
        h.update(st.outputs_digest);
    }
    let inputs_digest = hex::encode(h.finalize());
    let dir = ws.join(stage.name());
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let ctx = Ctx { cfg, ws, dir: dir.clone() };
    let t0 = Instant::now();
    log::info!("stage {stage} starting");
    if let Err(e) = dispatch(&ctx, stage) {
        let _ = fs::remove_dir_all(&dir);
        return Err(e);
    }
    let (outputs_digest, outputs) = digest_dir(&dir)?;
    let status = StageStatus { stage: stage.name().into(), inputs_digest, outputs_digest, wall_time_s: t0.elapsed().as_secs_f64(), outputs };
    fs::write(dir.join(STATUS_FILE), serde_json::to_vec_pretty(&status)?)?;
    log::info!("stage {stage} done in {:.1} s", status.wall_time_s);
    Ok(status)
}

/// Every stage in dependency order.
pub fn run_pipeline(cfg: &PipelineConfig) -> CliResult<Vec<StageStatus>> {
    ALL_STAGES.iter().map(|&s| run_stage(cfg, s)).collect()
}

fn dispatch(c: &Ctx<'_>, stage: Stage) -> CliResult<()> {
    match stage {
        Stage::Ingest => ingest(c),
        Stage::Corrupt => corrupt_stage(c),
        Stage::EnhanceTrain => {
            let mut s = c.cfg.enhance_train.clone();
            s.seed = c.seed(s.seed);
            ops::enhance_train(&c.upstream(Stage::Corrupt, "pairs.jsonl"), &s, &c.dir.join("segan.ckpt"))?;
            Ok(())
        }
        Stage::Enhance => {
            let ps = checkpoint::load(c.upstream(Stage::EnhanceTrain, "segan.ckpt"))?;
            let found = CorpusManifest::read(c.upstream(Stage::Ingest, "found.jsonl"))?;
            ops::enhance_manifest(&ps, &found, &c.cfg.regime, &c.dir.join("audio"))?.write(c.dir.join("enhanced.jsonl"))?;
            Ok(())
        }
        Stage::Features => {
            let mel = &c.cfg.vocoder_train.mel;
            let target = CorpusManifest::read(c.upstream(Stage::Enhance, "enhanced.jsonl"))?;
            write_jsonl(c.dir.join("target.jsonl"), &ops::mel_features(&target, mel, &c.cfg.regime, &c.dir.join("target"))?)?;
            let source = CorpusManifest::read(c.upstream(Stage::Ingest, "clean.jsonl"))?;
            write_jsonl(c.dir.join("source.jsonl"), &ops::mel_features(&source, mel, "original", &c.dir.join("source"))?)?;
            Ok(())
        }
        Stage::VcTrain => {
            let mut s = c.cfg.vc_train.clone();
            s.seed = c.seed(s.seed);
            ops::vc_train(&c.upstream(Stage::Features, "source.jsonl"), &c.upstream(Stage::Features, "target.jsonl"), &s, &c.dir.join("cyclegan.ckpt"))?;
            Ok(())
        }
        Stage::VcConvert => {
            let ps = checkpoint::load(c.upstream(Stage::VcTrain, "cyclegan.ckpt"))?;
            let src: Vec<FeatureRecord> = read_jsonl(c.upstream(Stage::Features, "source.jsonl"))?;
            let out = ops::vc_convert_records(&src, &ps, ConversionDirection::Forward, &c.cfg.regime, &c.dir.join("feat"))?;
            write_jsonl(c.dir.join("converted.jsonl"), &out)?;
            Ok(())
        }
        Stage::TtsTrain => {
            let mut s = c.cfg.tts_train.clone();
            s.seed = c.seed(s.seed);
            ops::tts_train(&c.upstream(Stage::Features, "target.jsonl"), &s, &c.dir.join("acoustic.ckpt"))?;
            Ok(())
        }
        Stage::TtsSynth => {
            let ps = checkpoint::load(c.upstream(Stage::TtsTrain, "acoustic.ckpt"))?;
            let tgt: Vec<FeatureRecord> = read_jsonl(c.upstream(Stage::Features, "target.jsonl"))?;
            let out = ops::tts_synth_records(&tgt, &ps, &c.cfg.condition, c.seed(0), &c.dir.join("feat"))?;
            write_jsonl(c.dir.join("synth.jsonl"), &out)?;
            Ok(())
        }
        Stage::VocoderTrain => {
            let mut s = c.cfg.vocoder_train.clone();
            s.seed = c.seed(s.seed);
            ops::vocoder_train(&c.upstream(Stage::Features, "target.jsonl"), &s, &c.dir.join("wavenet.ckpt"))?;
            Ok(())
        }
        Stage::Generate => {
            let ps = checkpoint::load(c.upstream(Stage::VocoderTrain, "wavenet.ckpt"))?;
            let mut records: Vec<FeatureRecord> = Vec::new();
            for s in &c.cfg.generate.sources {
                records.extend(match s.as_str() {
                    "tts" => read_jsonl::<FeatureRecord>(c.upstream(Stage::TtsSynth, "synth.jsonl"))?,
                    _ => read_jsonl::<FeatureRecord>(c.upstream(Stage::VcConvert, "converted.jsonl"))?,
                });
            }
            ops::vocode_records(&records, &ps, c.seed(0), c.cfg.generate.mode, &c.dir.join("audio"))?.write(c.dir.join("spoof.jsonl"))?;
            Ok(())
        }
        Stage::CmTrain => {
            let bona = CorpusManifest::read(c.upstream(Stage::Enhance, "enhanced.jsonl"))?;
            let spoof = CorpusManifest::read(c.upstream(Stage::Generate, "spoof.jsonl"))?;
            let (bt, be) = ops::split_alternate(&bona)?;
            let (st, se) = ops::split_alternate(&spoof)?;
            for (m, name) in [(&bt, "bonafide_train"), (&be, "bonafide_eval"), (&st, "spoof_train"), (&se, "spoof_eval")] {
                m.write(c.dir.join(format!("{name}.jsonl")))?;
            }
            let cm = &c.cfg.cm;
            ops::cm_train(&c.dir.join("bonafide_train.jsonl"), &c.dir.join("spoof_train.jsonl"), cm.mixtures, cm.iterations, &cm.cqcc, c.seed(0), &c.dir.join("models.json"))?;
            Ok(())
        }
        Stage::CmScore => {
            let be = CorpusManifest::read(c.upstream(Stage::CmTrain, "bonafide_eval.jsonl"))?;
            let se = CorpusManifest::read(c.upstream(Stage::CmTrain, "spoof_eval.jsonl"))?;
            let (_, summary) = ops::cm_score(&c.upstream(Stage::CmTrain, "models.json"), &be, &se, &c.dir.join("scores.txt"))?;
            fs::write(c.dir.join("eer.json"), serde_json::to_vec_pretty(&summary)?)?;
            Ok(())
        }
        Stage::Report => report(c),
    }
}

/// Toy corpus: clean reference utterances, and a long noisy recording of a
/// second talker cut into segments on its pauses, each with an alignment.
fn ingest(c: &Ctx<'_>) -> CliResult<()> {
    let ic = &c.cfg.ingest;
    let sr = c.cfg.vocoder_train.sample_rate;
    let mel = &c.cfg.vocoder_train.mel;
    let hop = mel.hop;
    let mut rng = ChaCha8Rng::seed_from_u64(c.cfg.seed);

    let clean_dir = c.dir.join("clean");
    fs::create_dir_all(&clean_dir)?;
    let mut clean = CorpusManifest::new();
    for i in 0..ic.clean_utterances {
        let u = random_utterance(Speaker::SOURCE, ic.phones, sr, hop, &mut rng);
        let id = format!("src{i:03}");
        let path = clean_dir.join(format!("{id}.wav"));
        write_wav(&path, &u.wav)?;
        clean.push(UtteranceRecord { id, audio_path: path, transcript: u.transcript, condition: ConditionTag::Clean, duration: u.wav.duration(), snr_db: estimate_snr(&u.wav).ok() })?;
    }
    clean.write(c.dir.join("clean.jsonl"))?;

    let gap_frames = ((ic.gap * f64::from(sr)) / hop as f64).round().max(1.0) as usize;
    let mut long = Vec::new();
    let mut spans: Vec<PhoneSpan> = Vec::new();
    for _ in 0..ic.found_utterances {
        let u = random_utterance(Speaker::TARGET, ic.phones, sr, hop, &mut rng);
        let offset = long.len() / hop;
        long.extend_from_slice(u.wav.samples());
        spans.extend(u.alignment.iter().map(|s| PhoneSpan { phone: s.phone.clone(), start_frame: s.start_frame + offset, end_frame: s.end_frame + offset }));
        let start = long.len() / hop;
        long.extend(std::iter::repeat_n(0.0, gap_frames * hop));
        spans.push(PhoneSpan { phone: "pau".into(), start_frame: start, end_frame: start + gap_frames });
    }
    let noisy = add_noise(&Waveform::new(long, sr)?, ic.found_snr_db, &mut rng)?;
    let found_dir = c.dir.join("found");
    fs::create_dir_all(&found_dir)?;
    write_wav(found_dir.join("recording.wav"), &noisy)?;

    let mut found = CorpusManifest::new();
    for (k, seg) in segment_on_pauses(&noisy, &ic.segment)?.iter().enumerate() {
        let off = seg.start / hop;
        let n = mel.frame_count(seg.wav.len());
        if n == 0 {
            continue;
        }
        let local: Vec<PhoneSpan> = spans
            .iter()
            .filter(|s| s.end_frame > off && s.start_frame < off + n)
            .map(|s| PhoneSpan { phone: s.phone.clone(), start_frame: s.start_frame.max(off) - off, end_frame: s.end_frame.min(off + n) - off })
            .collect();
        let transcript = local.iter().map(|s| s.phone.as_str()).filter(|p| *p != "pau").collect::<Vec<_>>().join(" ");
        let id = format!("seg{k:03}");
        let path = found_dir.join(format!("{id}.wav"));
        write_wav(&path, &seg.wav)?;
        write_alignment(alignment_path(&path), &local)?;
        found.push(UtteranceRecord { id, audio_path: path, transcript, condition: ConditionTag::Original, duration: seg.wav.duration(), snr_db: estimate_snr(&seg.wav).ok() })?;
    }
    if found.len() < 4 {
        return Err(Error::InvalidArgument(format!("segmentation produced {} segments from {} utterances", found.len(), ic.found_utterances)).into());
    }
    found.write(c.dir.join("found.jsonl"))?;
    Ok(())
}

fn corrupt_stage(c: &Ctx<'_>) -> CliResult<()> {
    let clean = CorpusManifest::read(c.upstream(Stage::Ingest, "clean.jsonl"))?;
    let reg = regime(&c.cfg.regime)?;
    let mut catalog = BTreeMap::new();
    let mut pairs = Vec::new();
    for tag in reg.tags {
        let dir = c.dir.join(tag.to_string());
        fs::create_dir_all(&dir)?;
        let mut m = CorpusManifest::new();
        for (i, r) in clean.records().iter().enumerate() {
            let params = CorruptParams { seed: c.seed(c.cfg.corrupt.seed).wrapping_add(i as u64), ..c.cfg.corrupt };
            let noisy = corrupt(&read_wav(&r.audio_path)?, tag, &params)?;
            let path = dir.join(format!("{}.wav", r.id));
            write_wav(&path, &noisy)?;
            pairs.push(PairRecord { id: format!("{tag}/{}", r.id), noisy_path: path.clone(), clean_path: r.audio_path.clone() });
            m.push(UtteranceRecord { audio_path: path, condition: tag.clone(), snr_db: estimate_snr(&noisy).ok(), ..r.clone() })?;
        }
        m.write(c.dir.join(format!("{tag}.jsonl")))?;
        catalog.insert(tag.clone(), m);
    }
    compose_regime(&catalog, reg.tags)?.write(c.dir.join("regime.jsonl"))?;
    write_jsonl(c.dir.join("pairs.jsonl"), &pairs)?;
    Ok(())
}

fn report(c: &Ctx<'_>) -> CliResult<()> {
    let mut means = Vec::new();
    for (stage, file, name) in [(Stage::Ingest, "found.jsonl", "found"), (Stage::Corrupt, "regime.jsonl", "corrupted"), (Stage::Enhance, "enhanced.jsonl", "enhanced")] {
        let path = c.upstream(stage, file);
        let rep: HistogramReport = snr_report(&CorpusManifest::read(&path)?, &path.display().to_string())?;
        fs::write(c.dir.join(format!("snr_{name}.tsv")), rep.to_text())?;
        means.push(rep.mean);
    }
    let eer_percent = match read_status(&c.ws, Stage::CmScore) {
        Some(_) => Some(serde_json::from_slice::<ops::EerSummary>(&fs::read(c.upstream(Stage::CmScore, "eer.json"))?)?.eer_percent),
        None => None,
    };
    let summary = PipelineSummary { found_snr_mean_db: means[0], corrupted_snr_mean_db: means[1], enhanced_snr_mean_db: means[2], eer_percent };
    fs::write(c.dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

pub fn read_summary(workspace: &Path) -> CliResult<PipelineSummary> {
    let ws = fs::canonicalize(workspace).map_err(|_| CliError::Dependency(format!("no workspace at {}", workspace.display())))?;
    let path = ws.join(Stage::Report.name()).join("summary.json");
    let bytes = fs::read(&path).map_err(|_| CliError::Dependency("report has not run".into()))?;
    Ok(serde_json::from_slice(&bytes)?)
}
