use super::*;
use crate::toy;

fn random_track(cfg: &WaveNetConfig, len: usize, seed: u64) -> ConditioningTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.cond_channels;
    ConditioningTrack { values: Tensor::matrix(len, c, (0..len * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(), sample_rate: cfg.sample_rate }
}

fn random_classes(cfg: &WaveNetConfig, len: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..cfg.classes() as u32)).collect()
}

#[test]
fn receptive_field_formula() {
    let rf = |k| receptive_field(&WaveNetConfig { blocks: k, ..WaveNetConfig::default() });
    assert_eq!(rf(1), 2);
    assert_eq!(rf(10), 1024);
    assert_eq!(rf(40), 4093);
    assert_eq!(receptive_field(&WaveNetConfig::full_scale()), 4093);
}

#[test]
fn dilations_cycle_every_ten_blocks() {
    let cfg = WaveNetConfig { blocks: 27, ..WaveNetConfig::default() };
    let d = cfg.dilations();
    assert_eq!(d.len(), 27);
    for (k, v) in d.iter().enumerate() {
        assert_eq!(*v, 2usize.pow((k % 10) as u32));
    }
}

/// Rows of the teacher-forced logits that change when sample `s` changes.
fn affected_rows(ps: &ParameterSet, cfg: &WaveNetConfig, len: usize, s: usize) -> Vec<usize> {
    let track = random_track(cfg, len, 1);
    let a = random_classes(cfg, len, 2);
    let mut b = a.clone();
    b[s] = (b[s] + 1) % cfg.classes() as u32;
    let la = teacher_logits(ps, cfg, &a, &track).unwrap();
    let lb = teacher_logits(ps, cfg, &b, &track).unwrap();
    let k = cfg.classes();
    (0..len).filter(|&t| la.data()[t * k..(t + 1) * k] != lb.data()[t * k..(t + 1) * k]).collect()
}

#[test]
fn receptive_field_matches_perturbation_probe() {
    for blocks in [1, 3, 10] {
        let cfg = WaveNetConfig { skip_channels: 8, ..tiny_wavenet_config(blocks) };
        let mut ps = init_wavenet(&cfg).unwrap();
        jitter_biases(&mut ps, &mut ChaCha8Rng::seed_from_u64(blocks as u64)).unwrap();
        let rf = receptive_field(&cfg);
        let len = rf + 40;
        let s = 20;
        let rows = affected_rows(&ps, &cfg, len, s);
        assert_eq!(rows.first(), Some(&(s + 1)), "K={blocks}: earliest affected output");
        assert_eq!(rows.last(), Some(&(s + rf)), "K={blocks}: latest affected output");
    }
}

#[test]
fn distribution_is_normalized_and_causal() {
    let cfg = tiny_wavenet_config(4);
    let ps = init_wavenet(&cfg).unwrap();
    let track = random_track(&cfg, 60, 3);
    let hist = random_classes(&cfg, 60, 4);
    let p = next_sample_distribution(&hist[..30], &track, &ps).unwrap();
    assert_eq!(p.len(), cfg.classes());
    assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    let mut future = hist.clone();
    for v in &mut future[30..] {
        *v = 0;
    }
    assert_eq!(p, next_sample_distribution(&future[..30], &track, &ps).unwrap());
    let mut past = hist.clone();
    past[29] = (past[29] + 1) % cfg.classes() as u32;
    assert_ne!(p, next_sample_distribution(&past[..30], &track, &ps).unwrap());
}

#[test]
fn distribution_matches_full_teacher_pass() {
    let cfg = tiny_wavenet_config(5);
    let ps = init_wavenet(&cfg).unwrap();
    let len = receptive_field(&cfg) + 30;
    let track = random_track(&cfg, len, 5);
    let hist = random_classes(&cfg, len, 6);
    let logits = teacher_logits(&ps, &cfg, &hist, &track).unwrap();
    let k = cfg.classes();
    for pos in [0, 7, len - 1] {
        let mut row = logits.data()[pos * k..(pos + 1) * k].to_vec();
        softmax_in_place(&mut row);
        let p = next_sample_distribution(&hist[..pos], &track, &ps).unwrap();
        for (a, b) in row.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12, "pos {pos}");
        }
    }
}

#[test]
fn class_mismatch_rejected() {
    let cfg = tiny_wavenet_config(2);
    let ps = init_wavenet(&cfg).unwrap();
    let track = random_track(&cfg, 10, 0);
    assert!(matches!(next_sample_distribution(&[cfg.classes() as u32], &track, &ps), Err(crate::Error::InvalidArgument(_))));
}

#[test]
fn random_init_is_near_uniform() {
    let cfg = WaveNetConfig::default();
    let ps = init_wavenet(&cfg).unwrap();
    let len = 600;
    let track = random_track(&cfg, len, 7);
    let classes = random_classes(&cfg, len, 8);
    let logits = teacher_logits(&ps, &cfg, &classes, &track).unwrap();
    let k = cfg.classes();
    let mut total = 0.0;
    for row in logits.data().chunks(k) {
        let mut p = row.to_vec();
        softmax_in_place(&mut p);
        total -= p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    }
    let mean = total / len as f64;
    let uniform = (k as f64).ln();
    assert!((mean - uniform).abs() <= 0.1 * uniform, "{mean} vs {uniform}");
}

#[test]
fn incremental_generation_agrees_with_graph() {
    let cfg = tiny_wavenet_config(6);
    let ps = init_wavenet(&cfg).unwrap();
    let len = receptive_field(&cfg) + 50;
    let track = random_track(&cfg, len, 9);
    let wav = generate(&track, &ps, 0, GenerationMode::Argmax).unwrap();
    assert_eq!(wav.len(), len);
    let classes = cfg.mulaw().encode(wav.samples()).indices;
    let logits = teacher_logits(&ps, &cfg, &classes, &track).unwrap();
    let k = cfg.classes();
    for (t, row) in logits.data().chunks(k).enumerate() {
        assert_eq!(argmax(row), classes[t] as usize, "sample {t}");
    }
    assert_eq!(wav, generate(&track, &ps, 0, GenerationMode::Argmax).unwrap());
    let s1 = generate(&track, &ps, 1, GenerationMode::Sample).unwrap();
    assert_eq!(s1, generate(&track, &ps, 1, GenerationMode::Sample).unwrap());
    assert_eq!(s1.len(), len);
}

fn tone_example(cfg: &WaveNetConfig, seconds: f64, code: f64) -> VocoderExample {
    let wav = toy::tone(200.0, cfg.sample_rate, seconds, 0.5);
    let mel = mel_spectrogram(&wav, &cfg.mel).unwrap();
    VocoderExample { wav, mel, condition_code: code }
}

#[test]
fn conditioning_track_contract() {
    let cfg = tiny_wavenet_config(2);
    let ps = init_wavenet(&cfg).unwrap();
    let ex = tone_example(&cfg, 0.05, 0.0);
    let len = ex.wav.len();
    let track = encode_conditioning(&ex.mel, 0.0, len, &ps).unwrap();
    assert_eq!(track.len(), len);
    for extra in [1, 3] {
        assert_eq!(encode_conditioning(&ex.mel, 0.0, len + extra, &ps).unwrap().len(), len + extra);
    }
    let other = encode_conditioning(&ex.mel, 1.0, len, &ps).unwrap();
    assert_ne!(track, other);
    assert!(matches!(encode_conditioning(&ex.mel, 0.0, len + 40 * cfg.mel.hop, &ps), Err(crate::Error::InvalidArgument(_))));
    let wrong = FeatureMatrix::new(vec![0.0; 8], 2, 4, 0.005, crate::signal::FeatureKind::Mel).unwrap();
    assert!(encode_conditioning(&wrong, 0.0, samples_for_frames(&cfg, 2), &ps).is_err());
}

#[test]
fn constant_frames_give_piecewise_constant_track() {
    let cfg = tiny_wavenet_config(2);
    let ps = init_wavenet(&cfg).unwrap();
    let frames = 12;
    let mel = FeatureMatrix::new(vec![0.3; frames * cfg.mel.bands], frames, cfg.mel.bands, 0.0005, crate::signal::FeatureKind::Mel).unwrap();
    let len = samples_for_frames(&cfg, frames);
    let track = encode_conditioning(&mel, 0.5, len, &ps).unwrap();
    let ids = upsample_ids(&cfg, frames, len).unwrap();
    for t in 1..len {
        if ids[t] == ids[t - 1] {
            assert_eq!(track.row(t), track.row(t - 1));
        }
    }
    let mut g = Graph::new();
    let p = ps.bind_prefix(&mut g, "cond.", false);
    let enc = encoder_graph(&mut g, &p, &encoder_input(&cfg, &mel, 0.5).unwrap()).unwrap();
    let enc = g.value(enc);
    for (t, &f) in ids.iter().enumerate() {
        assert_eq!(track.row(t), &enc.data()[f * cfg.cond_channels..(f + 1) * cfg.cond_channels]);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = tiny_wavenet_config(3);
    let ps = init_wavenet(&cfg).unwrap();
    assert!(ps.parameter_count() <= 5000);
    let err = grad_check_wavenet(&cfg, 24, 2).unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn training_starts_near_uniform_loss_and_is_reproducible() {
    let cfg = WaveNetConfig { iterations: 3, segment: 256, ..WaveNetConfig::default() };
    let ex = tone_example(&cfg, 0.2, 0.0);
    let a = train_vocoder(std::slice::from_ref(&ex), &cfg).unwrap();
    let b = train_vocoder(std::slice::from_ref(&ex), &cfg).unwrap();
    assert_eq!(vocoder_log(&a).unwrap(), vocoder_log(&b).unwrap());
    let uniform = (cfg.classes() as f64).ln();
    let first = vocoder_log(&a).unwrap()[0].loss;
    assert!((first - uniform).abs() <= 0.1 * uniform, "{first} vs {uniform}");
    assert_eq!(a.get("post2.b").unwrap().len(), cfg.classes());
}

#[test]
fn training_rejects_rate_mismatch() {
    let cfg = WaveNetConfig { iterations: 1, ..WaveNetConfig::default() };
    let mut ex = tone_example(&cfg, 0.1, 0.0);
    ex.wav = toy::tone(200.0, 16000, 0.1, 0.5);
    assert!(train_vocoder(&[ex], &cfg).is_err());
}

#[test]
fn silence_copy_synthesis_stays_quiet() {
    let cfg = WaveNetConfig { blocks: 4, iterations: 60, segment: 256, ..WaveNetConfig::default() };
    let wav = Waveform::silence(1600, cfg.sample_rate);
    let mel = mel_spectrogram(&wav, &cfg.mel).unwrap();
    let ps = train_vocoder(&[VocoderExample { wav: wav.clone(), mel, condition_code: 0.0 }], &cfg).unwrap();
    let out = copy_synthesis(&wav, 0.0, &ps).unwrap();
    assert_eq!(out.len(), wav.len());
    assert!(out.rms() <= 0.05, "{}", out.rms());
}
