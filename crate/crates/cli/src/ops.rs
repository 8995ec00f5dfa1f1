//! Stage bodies, parameterized by explicit paths so the pipeline runner
//! and the direct subcommands share them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spoofbench_core::corpus::{condition_code, ConditionTag, CorpusManifest, UtteranceRecord};
use spoofbench_core::countermeasure::{evaluate_countermeasure, train_countermeasure, write_scores, Evaluation};
use spoofbench_core::enhancer::{enhance, segan_log, train_segan, SeganConfig};
use spoofbench_core::nn::{checkpoint, ParameterSet};
use spoofbench_core::signal::{append_deltas, estimate_snr, mel_spectrogram, read_features, read_wav, write_features, write_wav, CqccConfig, FeatureKind, FeatureMatrix, MelConfig, Waveform};
use spoofbench_core::tts::{acoustic_log, clip_alignment, read_alignment, synthesize_mel, toy_linguistic_frames, train_acoustic, ArModelConfig, LinguisticFrames, PhoneSpan};
use spoofbench_core::vc::{convert, cyclegan_log, train_cyclegan, ConversionDirection, CycleGanConfig};
use spoofbench_core::vocoder::{encode_conditioning, generate, samples_for_frames, train_vocoder, vocoder_log, GenerationMode, VocoderExample, WaveNetConfig};
use spoofbench_core::{Error, Result};

use crate::records::{alignment_path, read_jsonl, stack_frames, write_jsonl, FeatureRecord, PairRecord};

/// `model.ckpt` -> `model.log.jsonl`.
pub fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.jsonl")
}

fn save_model<L: Serialize>(ps: &ParameterSet, out: &Path, log: &[L]) -> Result<()> {
    checkpoint::save(out, ps)?;
    write_jsonl(log_path(out), log)
}

/// Maps a synthesizer condition name onto a manifest tag.
pub fn condition_tag(name: &str) -> Result<ConditionTag> {
    condition_code(name)?;
    Ok(if name == "original" { ConditionTag::Original } else { ConditionTag::Enhanced(name.to_string()) })
}

fn record_for(id: String, path: PathBuf, wav: &Waveform, transcript: String, condition: ConditionTag) -> UtteranceRecord {
    UtteranceRecord { id, audio_path: path, transcript, condition, duration: wav.duration().max(f64::MIN_POSITIVE), snr_db: estimate_snr(wav).ok() }
}

pub fn load_pairs(path: &Path) -> Result<Vec<(Waveform, Waveform)>> {
    read_jsonl::<PairRecord>(path)?.iter().map(|p| Ok((read_wav(&p.noisy_path)?, read_wav(&p.clean_path)?))).collect()
}

pub fn enhance_train(pairs: &Path, cfg: &SeganConfig, out: &Path) -> Result<ParameterSet> {
    let data = load_pairs(pairs)?;
    let ps = train_segan(&data, cfg)?;
    save_model(&ps, out, &segan_log(&ps)?)?;
    Ok(ps)
}

/// Enhances every record; alignment files travel with the audio.
pub fn enhance_manifest(ckpt: &ParameterSet, manifest: &CorpusManifest, regime: &str, out_dir: &Path) -> Result<CorpusManifest> {
    fs::create_dir_all(out_dir)?;
    let mut out = CorpusManifest::new();
    for r in manifest.records() {
        let wav = enhance(&read_wav(&r.audio_path)?, ckpt)?;
        let path = out_dir.join(format!("{}.wav", r.id.replace('/', "_")));
        write_wav(&path, &wav)?;
        let align = alignment_path(&r.audio_path);
        if align.exists() {
            fs::copy(&align, alignment_path(&path))?;
        }
        out.push(record_for(r.id.clone(), path, &wav, r.transcript.clone(), ConditionTag::Enhanced(regime.to_string())))?;
    }
    Ok(out)
}

pub fn mel_features(manifest: &CorpusManifest, mel: &MelConfig, condition: &str, out_dir: &Path) -> Result<Vec<FeatureRecord>> {
    fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for r in manifest.records() {
        let feat = mel_spectrogram(&read_wav(&r.audio_path)?, mel)?;
        let feat_path = out_dir.join(format!("{}.feat", r.id.replace('/', "_")));
        write_features(&feat_path, &feat)?;
        let align = alignment_path(&r.audio_path);
        out.push(FeatureRecord {
            id: r.id.clone(),
            feat_path,
            audio_path: Some(r.audio_path.clone()),
            alignment_path: align.exists().then_some(align),
            transcript: r.transcript.clone(),
            condition: condition.to_string(),
        });
    }
    Ok(out)
}

fn read_mel(r: &FeatureRecord) -> Result<FeatureMatrix> {
    Ok(read_features(&r.feat_path)?.with_kind(FeatureKind::Mel))
}

/// Static mel plus first and second deltas of every record, stacked.
pub fn delta_frames(records: &[FeatureRecord]) -> Result<FeatureMatrix> {
    let mats = records.iter().map(|r| append_deltas(&read_mel(r)?)).collect::<Result<Vec<_>>>()?;
    stack_frames(&mats, FeatureKind::MelDelta)
}

pub fn vc_train(src: &Path, tgt: &Path, cfg: &CycleGanConfig, out: &Path) -> Result<ParameterSet> {
    let x = delta_frames(&read_jsonl(src)?)?;
    let y = delta_frames(&read_jsonl(tgt)?)?;
    let ps = train_cyclegan(&x, &y, cfg)?;
    save_model(&ps, out, &cyclegan_log(&ps)?)?;
    Ok(ps)
}

/// Converts the static+delta stream of one mel matrix and keeps the
/// static part.
pub fn vc_convert_mel(mel: &FeatureMatrix, ckpt: &ParameterSet, dir: ConversionDirection) -> Result<FeatureMatrix> {
    let converted = convert(&append_deltas(mel)?, ckpt, dir)?;
    Ok(converted.leading_dims(mel.dims())?.with_kind(FeatureKind::Mel))
}

pub fn vc_convert_records(records: &[FeatureRecord], ckpt: &ParameterSet, dir: ConversionDirection, condition: &str, out_dir: &Path) -> Result<Vec<FeatureRecord>> {
    fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for r in records {
        let feat = vc_convert_mel(&read_mel(r)?, ckpt, dir)?;
        let id = format!("vc-{}", r.id);
        let feat_path = out_dir.join(format!("{}.feat", id.replace('/', "_")));
        write_features(&feat_path, &feat)?;
        out.push(FeatureRecord { id, feat_path, audio_path: None, alignment_path: None, transcript: r.transcript.clone(), condition: condition.to_string() });
    }
    Ok(out)
}

/// Alignment clipped to `frames` together with the phones it still holds.
fn clipped(alignment: &[PhoneSpan], frames: usize) -> (Vec<PhoneSpan>, String) {
    let spans = clip_alignment(alignment, frames);
    let words: Vec<&str> = spans.iter().map(|s| s.phone.as_str()).filter(|p| *p != "pau").collect();
    let transcript = words.join(" ");
    (spans, transcript)
}

pub fn linguistic_for(r: &FeatureRecord, frames: usize, condition: &str) -> Result<LinguisticFrames> {
    let path = r.alignment_path.as_ref().ok_or_else(|| Error::NotFound(format!("record {} has no alignment", r.id)))?;
    let (spans, transcript) = clipped(&read_alignment(path)?, frames);
    toy_linguistic_frames(&transcript, &spans, condition)
}

pub fn tts_train(corpus: &Path, cfg: &ArModelConfig, out: &Path) -> Result<ParameterSet> {
    let records: Vec<FeatureRecord> = read_jsonl(corpus)?;
    let data = records
        .iter()
        .map(|r| {
            let mel = read_mel(r)?;
            Ok((linguistic_for(r, mel.frames(), &r.condition)?, mel))
        })
        .collect::<Result<Vec<_>>>()?;
    let ps = train_acoustic(&data, cfg)?;
    #[derive(Serialize)]
    struct Row {
        step: usize,
        l1_loss: f64,
    }
    let log: Vec<Row> = acoustic_log(&ps)?.into_iter().map(|(step, l1_loss)| Row { step, l1_loss }).collect();
    save_model(&ps, out, &log)?;
    Ok(ps)
}

/// Synthesizes mel for the alignment of an utterance over all of its
/// aligned frames.
pub fn tts_synth_alignment(alignment: &[PhoneSpan], ckpt: &ParameterSet, condition: &str, seed: u64) -> Result<FeatureMatrix> {
    let frames = alignment.last().map_or(0, |s| s.end_frame);
    let (spans, transcript) = clipped(alignment, frames);
    synthesize_mel(&toy_linguistic_frames(&transcript, &spans, condition)?, ckpt, seed)
}

pub fn tts_synth_records(records: &[FeatureRecord], ckpt: &ParameterSet, condition: &str, seed: u64, out_dir: &Path) -> Result<Vec<FeatureRecord>> {
    fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let frames = read_features(&r.feat_path)?.frames();
        let l = linguistic_for(r, frames, condition)?;
        let feat = synthesize_mel(&l, ckpt, seed.wrapping_add(i as u64))?;
        let id = format!("tts-{}", r.id);
        let feat_path = out_dir.join(format!("{}.feat", id.replace('/', "_")));
        write_features(&feat_path, &feat)?;
        out.push(FeatureRecord { id, feat_path, audio_path: None, alignment_path: r.alignment_path.clone(), transcript: r.transcript.clone(), condition: condition.to_string() });
    }
    Ok(out)
}

pub fn vocoder_train(corpus: &Path, cfg: &WaveNetConfig, out: &Path) -> Result<ParameterSet> {
    let records: Vec<FeatureRecord> = read_jsonl(corpus)?;
    let data = records
        .iter()
        .map(|r| {
            let audio = r.audio_path.as_ref().ok_or_else(|| Error::NotFound(format!("record {} has no audio", r.id)))?;
            Ok(VocoderExample { wav: read_wav(audio)?, mel: read_mel(r)?, condition_code: condition_code(&r.condition)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let ps = train_vocoder(&data, cfg)?;
    save_model(&ps, out, &vocoder_log(&ps)?)?;
    Ok(ps)
}

pub fn vocode(mel: &FeatureMatrix, condition: &str, ckpt: &ParameterSet, seed: u64, mode: GenerationMode) -> Result<Waveform> {
    let cfg: WaveNetConfig = ckpt.config()?;
    let cond = encode_conditioning(mel, condition_code(condition)?, samples_for_frames(&cfg, mel.frames()), ckpt)?;
    generate(&cond, ckpt, seed, mode)
}

pub fn vocode_records(records: &[FeatureRecord], ckpt: &ParameterSet, seed: u64, mode: GenerationMode, out_dir: &Path) -> Result<CorpusManifest> {
    fs::create_dir_all(out_dir)?;
    let mut out = CorpusManifest::new();
    for (i, r) in records.iter().enumerate() {
        let wav = vocode(&read_mel(r)?, &r.condition, ckpt, seed.wrapping_add(i as u64), mode)?;
        let path = out_dir.join(format!("{}.wav", r.id.replace('/', "_")));
        write_wav(&path, &wav)?;
        out.push(record_for(r.id.clone(), path, &wav, r.transcript.clone(), condition_tag(&r.condition)?))?;
    }
    Ok(out)
}

/// Even-indexed records for training, odd for evaluation.
pub fn split_alternate(m: &CorpusManifest) -> Result<(CorpusManifest, CorpusManifest)> {
    let mut a = CorpusManifest::new();
    let mut b = CorpusManifest::new();
    for (i, r) in m.records().iter().enumerate() {
        if i % 2 == 0 { a.push(r.clone())? } else { b.push(r.clone())? }
    }
    Ok((a, b))
}

pub fn cm_train(bonafide: &Path, spoof: &Path, mixtures: usize, iters: usize, cqcc: &CqccConfig, seed: u64, out: &Path) -> Result<()> {
    let models = train_countermeasure(&CorpusManifest::read(bonafide)?, &CorpusManifest::read(spoof)?, mixtures, iters, cqcc, seed)?;
    models.save(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EerSummary {
    pub eer_percent: f64,
    pub bonafide: usize,
    pub spoof: usize,
    pub skipped: usize,
}

pub fn cm_score(models: &Path, bonafide: &CorpusManifest, spoof: &CorpusManifest, out: &Path) -> Result<(Evaluation, EerSummary)> {
    let models = spoofbench_core::countermeasure::CountermeasureModels::load(models)?;
    let ev = evaluate_countermeasure(bonafide, spoof, &models)?;
    write_scores(out, &ev.utterances)?;
    let summary = EerSummary { eer_percent: ev.eer, bonafide: ev.scores.genuine.len(), spoof: ev.scores.spoof.len(), skipped: ev.skipped };
    Ok((ev, summary))
}
