//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use spoofbench_core::countermeasure::{compute_eer, fit_gmm_traced, ScoreSet};
use spoofbench_core::enhancer::{
    chunk_stream, concat_stream, enhance, grad_check_segan, init_segan, segan_log, tiny_segan_config, train_segan, ChunkMode, ChunkSpec,
    SeganConfig,
};
use spoofbench_core::nn::layers::{self, apply, BatchNormMode, LayerKind};
use spoofbench_core::nn::{grad_check, probe_loss, ConvSpec, ParameterSet, Tensor};
use spoofbench_core::signal::{estimate_snr, mel_spectrogram, FeatureKind, FeatureMatrix, MelConfig, MuLaw, Waveform};
use spoofbench_core::toy::{self, random_utterance, Speaker};
use spoofbench_core::tts::{
    ar_forward, clip_alignment, grad_check_acoustic, grad_check_acoustic_free, init_acoustic, standardized_l1, tiny_acoustic_config,
    toy_linguistic_frames, train_acoustic, ArModelConfig, Feedback, PhoneSpan,
};
use spoofbench_core::vc::{convert, cycle_loss, cyclegan_log, grad_check_cyclegan, init_cyclegan, train_cyclegan, ConversionDirection, CycleGanConfig};
use spoofbench_core::vocoder::{
    copy_synthesis, grad_check_wavenet, init_wavenet, jitter_biases, receptive_field, teacher_forced_accuracy, teacher_forced_logits,
    tiny_wavenet_config, train_vocoder, ConditioningTrack, VocoderExample, WaveNetConfig,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn check_layer(kind: LayerKind, setup: impl Fn(&mut ParameterSet, &mut ChaCha8Rng), input: &[usize]) -> Result<f64, String> {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut ps = ok(ParameterSet::new("test", &()))?;
    setup(&mut ps, &mut r);
    ok(ps.insert_uniform("x", input, 1, &mut r))?;
    let frozen = ps.clone();
    ok(grad_check(&ps, |g, p| {
        let x = p.get("x")?;
        let y = apply(g, &kind, &frozen, p, "l", x)?;
        probe_loss(g, y, 5)
    }))
}

fn gradients() -> Outcome {
    let none = |_: &mut ParameterSet, _: &mut ChaCha8Rng| {};
    let mut cases: Vec<(String, f64)> = vec![
        ("affine".into(), check_layer(LayerKind::Affine, |p, r| layers::init_affine(p, "l", 4, 3, r).unwrap(), &[5, 4])?),
        (
            "conv1d".into(),
            check_layer(
                LayerKind::Conv1d(ConvSpec { stride: 2, dilation: 2, pad_left: 3, pad_right: 1 }),
                |p, r| layers::init_conv1d(p, "l", 2, 3, 3, r).unwrap(),
                &[2, 2, 11],
            )?,
        ),
        (
            "conv_transpose1d".into(),
            check_layer(
                LayerKind::ConvTranspose1d { stride: 2, pad: 2, out_len: 12 },
                |p, r| layers::init_conv_transpose1d(p, "l", 3, 2, 5, r).unwrap(),
                &[2, 3, 6],
            )?,
        ),
        ("gated".into(), check_layer(LayerKind::Gated, none, &[2, 4, 5])?),
        ("lstm".into(), check_layer(LayerKind::Lstm { reverse: false }, |p, r| layers::init_lstm(p, "l", 3, 4, r).unwrap(), &[5, 3])?),
        ("lstm_rev".into(), check_layer(LayerKind::Lstm { reverse: true }, |p, r| layers::init_lstm(p, "l", 3, 4, r).unwrap(), &[5, 3])?),
        ("bilstm".into(), check_layer(LayerKind::BiLstm, |p, r| layers::init_bilstm(p, "l", 3, 3, r).unwrap(), &[4, 3])?),
        (
            "batch_norm_train".into(),
            check_layer(LayerKind::BatchNorm(BatchNormMode::Train), |p, _| layers::init_batch_norm(p, "l", 3).unwrap(), &[6, 3])?,
        ),
        (
            "batch_norm_infer".into(),
            check_layer(LayerKind::BatchNorm(BatchNormMode::Infer), |p, _| layers::init_batch_norm(p, "l", 3).unwrap(), &[6, 3])?,
        ),
        ("tanh".into(), check_layer(LayerKind::Tanh, none, &[3, 4])?),
        ("sigmoid".into(), check_layer(LayerKind::Sigmoid, none, &[3, 4])?),
        ("leaky_relu".into(), check_layer(LayerKind::LeakyRelu(0.2), none, &[3, 4])?),
        ("softmax".into(), check_layer(LayerKind::Softmax, none, &[3, 4])?),
        ("dropout".into(), check_layer(LayerKind::FeedbackDropout { rate: 0.25, seed: 3 }, none, &[3, 4])?),
    ];

    let segan = tiny_segan_config();
    let n = ok(init_segan(&segan))?.parameter_count();
    ensure!(n <= 5000, "SEGAN has {n} parameters");
    cases.push(("segan".into(), ok(grad_check_segan(&segan, 4))?));

    let cyc = CycleGanConfig { dims: 16, gen_hidden: vec![6, 6, 6, 6], disc_hidden: vec![6, 6, 6, 6], ..CycleGanConfig::default() };
    let n = ok(init_cyclegan(&cyc))?.parameter_count();
    ensure!(n <= 5000, "CycleGAN has {n} parameters");
    for net in ["g", "f", "dx", "dy"] {
        cases.push((format!("cyclegan.{net}"), ok(grad_check_cyclegan(&cyc, net, 3))?));
    }

    let ar = tiny_acoustic_config(5);
    let n = ok(init_acoustic(&ar))?.parameter_count();
    ensure!(n <= 5000, "acoustic model has {n} parameters");
    cases.push(("acoustic.teacher".into(), ok(grad_check_acoustic(&ar, 6, 1))?));
    cases.push(("acoustic.free".into(), ok(grad_check_acoustic_free(&ar, 6, 2))?));

    let wn = tiny_wavenet_config(3);
    let n = ok(init_wavenet(&wn))?.parameter_count();
    ensure!(n <= 5000, "WaveNet has {n} parameters");
    cases.push(("wavenet".into(), ok(grad_check_wavenet(&wn, 24, 2))?));

    let (worst, err) = cases.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap();
    ensure!(err <= 1e-4, "{worst}: relative error {err:.3e}");
    Ok(format!("{} checks, worst {worst} {err:.2e}", cases.len()))
}

fn chunker() -> Outcome {
    let spec = ChunkSpec::with_window(1 << 14);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut lens: Vec<usize> = (0..198).map(|_| rng.random_range(1..=100_000)).collect();
    lens.extend([20_000, 1 << 14]);
    let mut padded = 0;
    for &len in &lens {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (chunks, map) = ok(chunk_stream(&x, &spec, ChunkMode::Infer))?;
        ensure!(chunks.iter().all(|c| c.len() == spec.window), "length {len}: chunk of wrong size");
        let y = ok(concat_stream(&chunks, &map))?;
        ensure!(y == x, "length {len}: round trip differs");
        if len > spec.window && len % spec.window != 0 {
            padded += 1;
        }
    }
    let x: Vec<f64> = (0..20_000).map(|i| i as f64).collect();
    let (chunks, _) = ok(chunk_stream(&x, &spec, ChunkMode::Infer))?;
    ensure!(chunks.len() == 2 && chunks[1][..] == x[20_000 - 16_384..], "length 20000: last chunk not pre-padded from the stream");
    Ok(format!("{} lengths bit-exact, {padded} with a pre-padded last chunk", lens.len()))
}

fn mulaw() -> Outcome {
    let m = ok(MuLaw::new(10))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut worst: f64 = 0.0;
    for &x in &xs {
        worst = worst.max((m.decode_sample(m.encode_sample(x)) - x).abs());
    }
    ensure!(worst <= 0.01, "max round-trip error {worst}");
    xs.sort_by(f64::total_cmp);
    ensure!(xs.windows(2).all(|w| m.encode_sample(w[0]) <= m.encode_sample(w[1])), "encode not monotone");
    ensure!(m.encode_sample(-1.0) == 0 && m.encode_sample(1.0) == 1023, "endpoints {} {}", m.encode_sample(-1.0), m.encode_sample(1.0));
    Ok(format!("max error {worst:.5}"))
}

fn snr_mixture(snr_db: f64, gain: f64, seed: u64) -> Waveform {
    let rate = 8000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tone = toy::gated_tone(440.0, rate, 2.0, 0.25, 0.25);
    let on_power = 0.5 * toy::GATED_TONE_AMPLITUDE.powi(2);
    let noise = toy::white_noise(tone.len(), (on_power / 10f64.powf(snr_db / 10.0)).sqrt(), &mut rng);
    Waveform::new(tone.samples().iter().zip(&noise).map(|(t, n)| gain * (t + n)).collect(), rate).unwrap()
}

fn snr() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, target) in [5.0, 10.0, 20.0, 30.0].into_iter().enumerate() {
        let est = ok(estimate_snr(&snr_mixture(target, 1.0, i as u64)))?;
        ensure!((est - target).abs() <= 3.0, "{target} dB estimated as {est:.2}");
        worst = worst.max((est - target).abs());
    }
    let base = ok(estimate_snr(&snr_mixture(15.0, 1.0, 9)))?;
    let mut drift: f64 = 0.0;
    for gain in [0.1, 0.3, 0.5, 0.8] {
        let est = ok(estimate_snr(&snr_mixture(15.0, gain, 9)))?;
        drift = drift.max((est - base).abs());
    }
    ensure!(drift <= 0.5, "gain changes estimate by {drift:.3} dB");
    Ok(format!("worst level error {worst:.2} dB, gain drift {drift:.2e} dB"))
}

/// Counts every candidate threshold directly.
fn eer_oracle(g: &[f64], s: &[f64]) -> f64 {
    let mut ts: Vec<f64> = g.iter().chain(s).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let rates = |t: f64| {
        let far = s.iter().filter(|&&v| v >= t).count() as f64 / s.len() as f64;
        let frr = g.iter().filter(|&&v| v < t).count() as f64 / g.len() as f64;
        (far, frr)
    };
    for i in 0..ts.len() {
        let (far, frr) = rates(ts[i]);
        if frr >= far {
            if i == 0 {
                return 100.0 * far;
            }
            let (far0, frr0) = rates(ts[i - 1]);
            let a = (far0 - frr0) / ((far0 - frr0) - (far - frr));
            return 100.0 * (far0 + a * (far - far0));
        }
    }
    unreachable!()
}

fn gaussian_rows(n: usize, means: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| means.iter().zip(toy::white_noise(means.len(), 1.0, rng)).map(|(m, z)| m + z).collect()).collect()
}

fn em_eer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows = gaussian_rows(400, &[0.0, 0.0], &mut rng);
    rows.extend(gaussian_rows(400, &[3.0, -2.0], &mut rng));
    let two = ok(FeatureMatrix::from_rows(&rows, 0.01, FeatureKind::Cqcc))?;
    for seed in 0..5 {
        for m in [1, 2, 4] {
            let fit = ok(fit_gmm_traced(&two, m, 25, seed))?;
            let ll = &fit.log_likelihoods;
            ensure!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-9), "EM log-likelihood decreased (m={m}, seed {seed})");
        }
    }
    let mut rows = gaussian_rows(600, &[0.0], &mut rng);
    rows.extend(gaussian_rows(600, &[10.0], &mut rng));
    let clusters = ok(FeatureMatrix::from_rows(&rows, 0.01, FeatureKind::Cqcc))?;
    let fit = ok(fit_gmm_traced(&clusters, 2, 50, 1))?;
    let mut means: Vec<f64> = fit.model.means.iter().map(|m| m[0]).collect();
    means.sort_by(f64::total_cmp);
    ensure!((means[0] - 0.0).abs() <= 0.2 && (means[1] - 10.0).abs() <= 0.2, "recovered means {means:?}");

    for trial in 0..100 {
        let ng = rng.random_range(1..=500);
        let ns = rng.random_range(1..=500);
        let coarse = trial % 3 == 0;
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = shift + rng.random_range(-2.0..2.0);
                    if coarse { v.round() } else { v }
                })
                .collect()
        };
        let g = draw(ng, 1.0);
        let s = draw(ns, 0.0);
        let got = ok(compute_eer(&ScoreSet { genuine: g.clone(), spoof: s.clone() }))?;
        let want = eer_oracle(&g, &s);
        ensure!(got == want, "trial {trial}: {got} vs oracle {want}");
    }
    let hand = ok(compute_eer(&ScoreSet { genuine: vec![3.0, 4.0, 5.0, 6.0], spoof: vec![1.0, 2.0, 3.0, 4.0] }))?;
    ensure!(hand == 25.0, "hand case gives {hand}");
    Ok(format!("EM monotone, means {:.3}/{:.3}, 100 oracle sets exact, hand case 25%", means[0], means[1]))
}

fn segan_desk() -> Outcome {
    let pairs = toy::noisy_pairs(50, 8000, 10.0, 11);
    let (train, test) = pairs.split_at(40);
    let cfg = SeganConfig { chunk: ChunkSpec::with_window(1024), iterations: 400, ..SeganConfig::default() };
    let ps = ok(train_segan(train, &cfg))?;
    let log = ok(segan_log(&ps))?;
    let warm = cfg.warmup();
    ensure!(log.iter().any(|r| r.phase == 1) && log.iter().any(|r| r.phase == 2), "log lacks one of the two phases");
    ensure!(log.iter().all(|r| r.phase == if r.step < warm { 1 } else { 2 }), "phase does not switch at step {warm}");
    let (mut before, mut after) = (0.0, 0.0);
    for (noisy, _) in test {
        before += ok(estimate_snr(noisy))?;
        after += ok(estimate_snr(&ok(enhance(noisy, &ps))?))?;
    }
    let (before, after) = (before / test.len() as f64, after / test.len() as f64);
    ensure!(after - before >= 5.0, "SNR {before:.2} -> {after:.2} dB, gain {:.2}", after - before);
    Ok(format!("held-out SNR {before:.2} -> {after:.2} dB (+{:.2}), warm-up {warm} steps", after - before))
}

fn gaussian_features(frames: usize, mean: f64, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = toy::white_noise(frames * 240, 1.0, &mut rng).into_iter().map(|z| mean + z).collect();
    FeatureMatrix::new(v, frames, 240, 0.005, FeatureKind::MelDelta).unwrap()
}

fn column_stats(m: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.frames() as f64;
    let mean: Vec<f64> = (0..m.dims()).map(|d| m.rows().map(|r| r[d]).sum::<f64>() / n).collect();
    let std = (0..m.dims()).map(|d| (m.rows().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    (mean, std)
}

fn cyclegan_desk() -> Outcome {
    let x = gaussian_features(2000, 0.0, 1);
    let y = gaussian_features(2000, 2.0, 2);
    let cfg = CycleGanConfig::desk();
    let ps = ok(train_cyclegan(&x, &y, &cfg))?;
    let held = gaussian_features(2000, 0.0, 3);
    let out = ok(convert(&held, &ps, ConversionDirection::Forward))?;
    let (got, _) = column_stats(&out);
    let (want, std) = column_stats(&y);
    let worst = (0..240).map(|d| (got[d] - want[d]).abs() / std[d]).fold(0.0, f64::max);
    ensure!(worst <= 0.5, "worst standardized mean deviation {worst:.3}");
    let log = ok(cyclegan_log(&ps))?;
    let (first, last) = (log[0].cycle_loss, log[log.len() - 1].cycle_loss);
    ensure!(last <= 0.5 * first, "cycle loss {first:.3} -> {last:.3}");

    let gx = ok(convert(&x, &ps, ConversionDirection::Forward))?;
    let fgx = ok(convert(&gx, &ps, ConversionDirection::Backward))?;
    let fy = ok(convert(&y, &ps, ConversionDirection::Backward))?;
    let gfy = ok(convert(&fy, &ps, ConversionDirection::Forward))?;
    // the loss lives in each speaker's standardized units
    let sx = ok(ps.buffer("norm.source.std"))?.data().to_vec();
    let sy = ok(ps.buffer("norm.target.std"))?.data().to_vec();
    let mut a = 0.0;
    for f in 0..x.frames() {
        for d in 0..240 {
            a += (fgx.get(f, d) - x.get(f, d)).abs() / sx[d];
        }
    }
    let mut b = 0.0;
    for f in 0..y.frames() {
        for d in 0..240 {
            b += (gfy.get(f, d) - y.get(f, d)).abs() / sy[d];
        }
    }
    let oracle = a / x.frames() as f64 + b / y.frames() as f64;
    let got = ok(cycle_loss(&ps, &x, &y))?;
    ensure!((got - oracle).abs() <= 1e-6, "cycle loss {got} vs scalar loop {oracle}");
    Ok(format!("worst mean deviation {worst:.3} std, cycle loss {first:.2} -> {last:.2}, oracle diff {:.1e}", (got - oracle).abs()))
}

fn acoustic() -> Outcome {
    let tiny = tiny_acoustic_config(5);
    let ps = ok(init_acoustic(&tiny))?;
    for n in [1, 2, 3, 7, 16, 33, 100] {
        let l = ok(toy_linguistic_frames("", &[PhoneSpan { phone: "a".into(), start_frame: 0, end_frame: n }], "original"))?;
        let out = ok(ar_forward(&l, Feedback::Free, &ps, 1))?;
        ensure!(out.mel.frames() == n, "{n} frames in, {} out", out.mel.frames());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let utt = random_utterance(Speaker::TARGET, 3, 8000, 40, &mut rng);
    let full = ok(mel_spectrogram(&utt.wav, &MelConfig::for_rate(8000)))?;
    let n = 50.min(full.frames());
    let mel = ok(FeatureMatrix::new(full.values()[..n * 80].to_vec(), n, 80, full.frame_hop(), FeatureKind::Mel))?;
    let l = ok(toy_linguistic_frames("", &clip_alignment(&utt.alignment, n), "original"))?;
    let cfg = ArModelConfig { iterations: 2000, learning_rate: 1e-3, ..ArModelConfig::desk() };
    let trained = ok(train_acoustic(&[(l.clone(), mel.clone())], &cfg))?;
    let tf = ok(ar_forward(&l, Feedback::Teacher(&mel), &trained, 1))?.mel;
    let l1 = ok(standardized_l1(&trained, &tf, &mel))?;
    ensure!(l1 <= 0.05, "teacher-forced L1 {l1:.4}");

    let wide = ok(init_acoustic(&tiny_acoustic_config(80)))?;
    let frames = 1250;
    let l = ok(toy_linguistic_frames("", &[PhoneSpan { phone: "pau".into(), start_frame: 0, end_frame: frames }], "original"))?;
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let reference = ok(FeatureMatrix::new((0..frames * 80).map(|_| r.random_range(-3.0..3.0)).collect(), frames, 80, 0.005, FeatureKind::Mel))?;
    let mut rates = Vec::new();
    for out in [ok(ar_forward(&l, Feedback::Free, &wide, 9))?, ok(ar_forward(&l, Feedback::Teacher(&reference), &wide, 10))?] {
        let rate = out.feedback_dropped as f64 / out.feedback_total as f64;
        ensure!((rate - 0.25).abs() <= 0.02, "dropout rate {rate:.4}");
        rates.push(rate);
    }
    Ok(format!("overfit L1 {l1:.4}, dropout free {:.4} teacher {:.4}", rates[0], rates[1]))
}

fn peak_bin(x: &[f64]) -> usize {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    (1..buf.len() / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap()
}

fn logits(ps: &ParameterSet, classes: &[u32], track: &ConditioningTrack) -> Result<Vec<f64>, String> {
    Ok(ok(teacher_forced_logits(classes, track, ps))?.data().to_vec())
}

fn wavenet() -> Outcome {
    let mut probes = Vec::new();
    for blocks in [1, 3, 10] {
        let cfg = WaveNetConfig { skip_channels: 8, ..tiny_wavenet_config(blocks) };
        let mut ps = ok(init_wavenet(&cfg))?;
        let mut rng = ChaCha8Rng::seed_from_u64(blocks as u64);
        ok(jitter_biases(&mut ps, &mut rng))?;
        let rf = receptive_field(&cfg);
        let len = rf + 40;
        let c = cfg.cond_channels;
        let track = ok(ConditioningTrack::from_values(
            ok(Tensor::matrix(len, c, (0..len * c).map(|_| rng.random_range(-1.0..1.0)).collect()))?,
            cfg.sample_rate,
        ))?;
        let k = cfg.classes();
        let a: Vec<u32> = (0..len).map(|_| rng.random_range(0..k as u32)).collect();
        let s = 20;
        let mut b = a.clone();
        b[s] = (b[s] + 1) % k as u32;
        let (la, lb) = (logits(&ps, &a, &track)?, logits(&ps, &b, &track)?);
        let rows: Vec<usize> = (0..len).filter(|&t| la[t * k..(t + 1) * k] != lb[t * k..(t + 1) * k]).collect();
        ensure!(rows.iter().all(|&t| t > s), "K={blocks}: output before the perturbed sample changed");
        ensure!(rows.first() == Some(&(s + 1)) && rows.last() == Some(&(s + rf)), "K={blocks}: affected rows {:?}..{:?}, expected RF {rf}", rows.first(), rows.last());
        probes.push(rf);
    }
    let rf40 = receptive_field(&WaveNetConfig { blocks: 40, ..WaveNetConfig::default() });
    ensure!(rf40 == 4093, "K=40 receptive field {rf40}");

    let cfg = WaveNetConfig::default();
    let wav = toy::tone(200.0, cfg.sample_rate, 2.0, 0.5);
    let mel = ok(mel_spectrogram(&wav, &cfg.mel))?;
    let ps = ok(train_vocoder(&[VocoderExample { wav: wav.clone(), mel: mel.clone(), condition_code: 0.0 }], &cfg))?;
    let acc = ok(teacher_forced_accuracy(&wav, &mel, 0.0, &ps))?;
    ensure!(acc >= 0.9, "teacher-forced accuracy {acc:.3}");
    let out = ok(copy_synthesis(&wav, 0.0, &ps))?;
    let (want, got) = (peak_bin(wav.samples()), peak_bin(out.samples()));
    ensure!(want.abs_diff(got) <= 1, "FFT peak at bin {got}, tone at {want}");
    Ok(format!("probe RF {probes:?}, K=40 {rf40}, accuracy {:.1}%, peak bin {got} vs {want}", 100.0 * acc))
}

fn pipeline() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let config = dir.path().join("pipeline.toml");
    let bin = env!("CARGO_BIN_EXE_spoofbench");
    let status = ok(Command::new(bin).args(["config", "--out"]).arg(&config).status())?;
    ensure!(status.success(), "config exited with {status}");
    let out = ok(Command::new(bin).arg("pipeline").arg("--config").arg(&config).env("RUST_LOG", "warn").output())?;
    ensure!(out.status.success(), "pipeline exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let text = ok(std::fs::read_to_string(dir.path().join("work/report/summary.json")))?;
    let summary: serde_json::Value = ok(serde_json::from_str(&text))?;
    let num = |k: &str| summary[k].as_f64().ok_or_else(|| format!("summary lacks {k}"));
    let (eer, corrupted, enhanced) = (num("eer_percent")?, num("corrupted_snr_mean_db")?, num("enhanced_snr_mean_db")?);
    ensure!(eer < 50.0, "EER {eer:.2}%");
    ensure!(enhanced > corrupted, "enhanced mean SNR {enhanced:.2} dB not above corrupted {corrupted:.2} dB");
    Ok(format!("EER {eer:.2}%, SNR corrupted {corrupted:.2} dB -> enhanced {enhanced:.2} dB"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradients),
        ("chunker round trip", chunker),
        ("mu-law", mulaw),
        ("SNR estimator", snr),
        ("EM and EER oracles", em_eer),
        ("SEGAN desk run", segan_desk),
        ("CycleGAN desk run", cyclegan_desk),
        ("AR acoustic model", acoustic),
        ("WaveNet", wavenet),
        ("end-to-end pipeline", pipeline),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect()).unwrap_or_default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} [{secs:.1} s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
