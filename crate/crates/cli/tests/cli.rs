use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use spoofbench_cli::pipeline::read_status;
use spoofbench_cli::{snr_report, HistogramReport, PipelineConfig, Stage};
use spoofbench_core::corpus::{ConditionTag, CorpusManifest, UtteranceRecord};

fn spoofbench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spoofbench")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, PipelineConfig::default().to_toml()).unwrap();
    path
}

fn manifest(snrs: &[Option<f64>]) -> CorpusManifest {
    let records = snrs
        .iter()
        .enumerate()
        .map(|(i, &snr_db)| UtteranceRecord {
            id: format!("u{i}"),
            audio_path: PathBuf::from(format!("u{i}.wav")),
            transcript: String::new(),
            condition: ConditionTag::N,
            duration: 1.0,
            snr_db,
        })
        .collect();
    CorpusManifest::from_records(records).unwrap()
}

#[test]
fn missing_dependency_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let out = spoofbench(&["corrupt", "--config", "pipeline.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("work/corrupt").exists());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "regime = \"no-such\"\n").unwrap();
    let out = spoofbench(&["ingest", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("typo.toml"), "sead = 3\n").unwrap();
    let out = spoofbench(&["ingest", "--config", "typo.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rerun_gives_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let mut digests = Vec::new();
    for _ in 0..2 {
        for stage in ["ingest", "corrupt"] {
            let out = spoofbench(&[stage, "--config", "pipeline.toml"], dir.path());
            assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        }
        let ws = dir.path().join("work");
        let a = read_status(&ws, Stage::Ingest).unwrap();
        let b = read_status(&ws, Stage::Corrupt).unwrap();
        digests.push((a.inputs_digest, a.outputs_digest, b.inputs_digest, b.outputs_digest));
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn snr_report_command_writes_histogram() {
    let dir = tempfile::tempdir().unwrap();
    manifest(&[Some(10.0), Some(20.0)]).write(dir.path().join("m.jsonl")).unwrap();
    let out = spoofbench(&["snr-report", "--manifest", "m.jsonl"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# mean_db 15.000000"), "{text}");
    assert!(text.contains("# variance_db2 25.000000"), "{text}");
}

#[test]
fn uniform_snr_gives_one_bin() {
    let r = snr_report(&manifest(&[Some(20.0); 5]), "m").unwrap();
    assert_eq!(r.counts, vec![5]);
    assert_eq!(r.mean, 20.0);
    assert_eq!(r.variance, 0.0);
}

#[test]
fn two_values_mean_and_variance() {
    let r = snr_report(&manifest(&[Some(10.0), Some(20.0)]), "m").unwrap();
    assert_eq!(r.mean, 15.0);
    assert_eq!(r.variance, 25.0);
    assert_eq!(r.counts.iter().sum::<usize>(), 2);
    assert_eq!(r.edges.len(), r.counts.len() + 1);
}

#[test]
fn empty_or_unscored_manifest_rejected() {
    assert!(snr_report(&CorpusManifest::new(), "m").is_err());
    assert!(snr_report(&manifest(&[None]), "m").is_err());
}

#[test]
fn default_config_round_trips() {
    let cfg = PipelineConfig::default();
    assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    cfg.validate().unwrap();
}

proptest! {
    #[test]
    fn histogram_matches_recomputation(values in prop::collection::vec(-20.0f64..60.0, 1..200)) {
        let r = HistogramReport::from_values(&values, "p").unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        prop_assert!((r.mean - mean).abs() <= 1e-9);
        prop_assert!((r.variance - var).abs() <= 1e-9 * var.max(1.0));
        prop_assert_eq!(r.counts.iter().sum::<usize>(), values.len());
        for v in &values {
            prop_assert!(*v >= r.edges[0] && *v <= *r.edges.last().unwrap());
        }
    }
}
