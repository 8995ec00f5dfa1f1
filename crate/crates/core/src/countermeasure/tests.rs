use super::*;
use crate::signal::FeatureKind;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
    FeatureMatrix::from_rows(&rows, 0.01, FeatureKind::Cqcc).unwrap()
}

fn sample_from(model: &GmmModel, n: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let rows = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let k = model.weights.iter().position(|w| {
                acc += w;
                acc > u
            });
            let k = k.unwrap_or(model.mixtures() - 1);
            model.means[k].iter().zip(&model.variances[k]).map(|(m, v)| m + v.sqrt() * normal(rng)).collect()
        })
        .collect();
    matrix(rows)
}

/// Counts every threshold independently, with no sorting tricks.
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
            let (far0, frr0) = rates(ts[i - 1]);
            let a = (far0 - frr0) / ((far0 - frr0) - (far - frr));
            return 100.0 * (far0 + a * (far - far0));
        }
    }
    unreachable!()
}

#[test]
fn hand_case() {
    let s = ScoreSet { genuine: vec![3.0, 4.0, 5.0, 6.0], spoof: vec![1.0, 2.0, 3.0, 4.0] };
    assert_eq!(compute_eer(&s).unwrap(), 25.0);
}

#[test]
fn perfect_separation() {
    let s = ScoreSet { genuine: vec![5.0, 6.0, 9.0], spoof: vec![-1.0, 2.0] };
    assert_eq!(compute_eer(&s).unwrap(), 0.0);
}

#[test]
fn total_confusion() {
    let s = ScoreSet { genuine: vec![0.0, 1.0], spoof: vec![5.0, 6.0] };
    assert_eq!(compute_eer(&s).unwrap(), 100.0);
}

#[test]
fn empty_or_nan_rejected() {
    assert!(matches!(compute_eer(&ScoreSet { genuine: vec![], spoof: vec![1.0] }), Err(Error::InvalidArgument(_))));
    assert!(compute_eer(&ScoreSet { genuine: vec![1.0], spoof: vec![] }).is_err());
    assert!(compute_eer(&ScoreSet { genuine: vec![f64::NAN], spoof: vec![1.0] }).is_err());
}

#[test]
fn matches_exhaustive_sweep_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..100 {
        let ng = rng.random_range(1..500);
        let ns = rng.random_range(1..500);
        let shift = rng.random_range(-1.0..3.0);
        let coarse = trial % 3 == 0;
        let draw = |rng: &mut ChaCha8Rng, mu: f64| {
            let v: f64 = mu + normal(rng);
            if coarse { (v * 2.0).round() / 2.0 } else { v }
        };
        let g: Vec<f64> = (0..ng).map(|_| draw(&mut rng, shift)).collect();
        let s: Vec<f64> = (0..ns).map(|_| draw(&mut rng, 0.0)).collect();
        let got = compute_eer(&ScoreSet { genuine: g.clone(), spoof: s.clone() }).unwrap();
        assert_eq!(got, eer_oracle(&g, &s), "trial {trial}");
    }
}

#[test]
fn chance_level_for_identical_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g: Vec<f64> = (0..10_000).map(|_| normal(&mut rng)).collect();
    let s: Vec<f64> = (0..10_000).map(|_| normal(&mut rng)).collect();
    let eer = compute_eer(&ScoreSet { genuine: g, spoof: s }).unwrap();
    assert!((eer - 50.0).abs() <= 2.0, "{eer}");
}

proptest! {
    #[test]
    fn eer_invariant_under_increasing_transform(g in prop::collection::vec(-5.0f64..5.0, 1..60), s in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let base = compute_eer(&ScoreSet { genuine: g.clone(), spoof: s.clone() }).unwrap();
        let f = |v: &f64| v.powi(3) + 2.0 * v;
        let t = compute_eer(&ScoreSet { genuine: g.iter().map(f).collect(), spoof: s.iter().map(f).collect() }).unwrap();
        prop_assert_eq!(base, t);
        prop_assert!((0.0..=100.0).contains(&base));
    }

    #[test]
    fn eer_symmetric_under_label_swap(g in prop::collection::hash_set(-10_000i32..10_000, 1..60), s in prop::collection::hash_set(10_000i32..20_000, 0..1).prop_flat_map(|_| prop::collection::hash_set(-10_000i32..10_000, 1..60))) {
        let g: Vec<f64> = g.into_iter().map(f64::from).collect();
        let s: Vec<f64> = s.into_iter().map(|v| f64::from(v) + 0.5).collect();
        let a = compute_eer(&ScoreSet { genuine: g.clone(), spoof: s.clone() }).unwrap();
        let b = compute_eer(&ScoreSet { genuine: s.iter().map(|v| -v).collect(), spoof: g.iter().map(|v| -v).collect() }).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        prop_assert!((a - eer_oracle(&g, &s)).abs() < 1e-12);
    }
}

#[test]
fn single_gaussian_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..20_000).map(|_| vec![3.0 + 2.0 * normal(&mut rng), -1.0 + 0.5 * normal(&mut rng)]).collect();
    let m = fit_gmm(&matrix(rows), 1, 20, 0).unwrap();
    assert!((m.means[0][0] - 3.0).abs() <= 0.02 * 3.0);
    assert!((m.means[0][1] + 1.0).abs() <= 0.02);
    assert!((m.variances[0][0] - 4.0).abs() <= 0.02 * 4.0);
    assert!((m.variances[0][1] - 0.25).abs() <= 0.02 * 0.25);
}

#[test]
fn one_mixture_is_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![normal(&mut rng), 5.0 + normal(&mut rng).powi(2)]).collect();
    let feat = matrix(rows.clone());
    let n = rows.len() as f64;
    for iters in [0, 1, 7] {
        let m = fit_gmm(&feat, 1, iters, 9).unwrap();
        for d in 0..2 {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!((m.means[0][d] - mean).abs() <= 1e-8);
            assert!((m.variances[0][d] - var).abs() <= 1e-8);
        }
        assert_eq!(m.weights, vec![1.0]);
    }
}

#[test]
fn two_clusters_recovered_and_em_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..4000).map(|i| vec![if i % 2 == 0 { 0.0 } else { 10.0 } + normal(&mut rng)]).collect();
    let fit = fit_gmm_traced(&matrix(rows), 2, 20, 1).unwrap();
    let mut means: Vec<f64> = fit.model.means.iter().map(|m| m[0]).collect();
    means.sort_by(f64::total_cmp);
    assert!(means[0].abs() <= 0.2 && (means[1] - 10.0).abs() <= 0.2, "{means:?}");
    assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    for w in fit.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-8, "{w:?}");
    }
}

#[test]
fn em_monotone_on_many_mixtures_with_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..2000).map(|i| (0..3).map(|d| ((i * (d + 1)) % 7) as f64 + 0.3 * normal(&mut rng)).collect()).collect();
    let fit = fit_gmm_traced(&matrix(rows), 8, 25, 2).unwrap();
    assert_eq!(fit.reseeded, 0);
    for w in fit.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{w:?}");
    }
    assert!(fit.model.variances.iter().flatten().all(|v| *v >= VARIANCE_FLOOR));
}

#[test]
fn variance_floor_applies_to_constant_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![1.0, normal(&mut rng)]).collect();
    let m = fit_gmm(&matrix(rows), 2, 5, 0).unwrap();
    assert!(m.variances.iter().all(|v| v[0] == VARIANCE_FLOOR));
}

#[test]
fn too_few_frames_rejected() {
    let rows: Vec<Vec<f64>> = (0..19).map(|i| vec![i as f64]).collect();
    assert!(matches!(fit_gmm(&matrix(rows), 2, 5, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn degenerate_component_is_reseeded() {
    let mut m = GmmModel { weights: vec![0.7, 0.3, 0.0], means: vec![vec![0.0], vec![5.0], vec![9.0]], variances: vec![vec![1.0], vec![1.0], vec![1.0]] };
    reseed(&mut m, 2, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(m.weights, vec![0.35, 0.3, 0.35]);
    assert!((m.means[2][0] - 0.0).abs() <= 0.1);
}

fn two_models() -> (GmmModel, GmmModel) {
    let a = GmmModel { weights: vec![0.5, 0.5], means: vec![vec![0.0, 0.0], vec![3.0, 1.0]], variances: vec![vec![1.0, 1.0], vec![0.5, 2.0]] };
    let b = GmmModel { weights: vec![1.0], means: vec![vec![1.5, -1.0]], variances: vec![vec![2.0, 1.0]] };
    (a, b)
}

#[test]
fn llr_properties() {
    let (a, b) = two_models();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let feat = sample_from(&a, 50, &mut rng);
    assert_eq!(score_llr(&feat, &a, &a).unwrap(), 0.0);
    assert_eq!(score_llr(&feat, &a, &b).unwrap(), -score_llr(&feat, &b, &a).unwrap());
    let rev: Vec<Vec<f64>> = (0..feat.frames()).rev().map(|i| feat.row(i).to_vec()).collect();
    let s1 = score_llr(&feat, &a, &b).unwrap();
    let s2 = score_llr(&matrix(rev), &a, &b).unwrap();
    assert!((s1 - s2).abs() <= 1e-12);
    assert!(score_llr(&matrix(vec![vec![1.0]]), &a, &b).is_err());
}

#[test]
fn llr_favours_the_generating_model() {
    let (a, b) = two_models();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let wins = (0..100).filter(|_| score_llr(&sample_from(&a, 20, &mut rng), &a, &b).unwrap() > 0.0).count();
    assert!(wins >= 95, "{wins}");
}

#[test]
fn log_likelihood_matches_direct_density() {
    let (a, _) = two_models();
    let x = [0.7, -0.2];
    let dens = |k: usize| {
        let mut p = a.weights[k];
        for d in 0..2 {
            let v = a.variances[k][d];
            p *= (-(x[d] - a.means[k][d]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        p
    };
    assert!((a.log_likelihood(&x) - (dens(0) + dens(1)).ln()).abs() <= 1e-12);
}

#[test]
fn score_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scores.txt");
    let s = vec![
        UtteranceScore { id: "a".into(), label: "bonafide".into(), score: 1.25 },
        UtteranceScore { id: "b".into(), label: "spoof".into(), score: -0.5 },
    ];
    write_scores(&p, &s).unwrap();
    let back = read_scores(&p).unwrap();
    assert_eq!(back, s);
    assert_eq!(ScoreSet::from_scores(&back), ScoreSet { genuine: vec![1.25], spoof: vec![-0.5] });
    std::fs::write(&p, "a maybe 1\n").unwrap();
    assert!(matches!(read_scores(&p), Err(Error::Format(_))));
}

#[test]
fn same_sets_on_both_sides_give_chance_eer() {
    use crate::corpus::{ConditionTag, UtteranceRecord};
    use crate::signal::write_wav;
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut recs = Vec::new();
    for i in 0..6 {
        let w = crate::toy::random_utterance(crate::toy::Speaker::SOURCE, 3, 8000, 40, &mut rng).wav;
        let path = dir.path().join(format!("u{i}.wav"));
        write_wav(&path, &w).unwrap();
        recs.push(UtteranceRecord { id: format!("u{i}"), audio_path: path, transcript: String::new(), condition: ConditionTag::Original, duration: w.duration(), snr_db: None });
    }
    recs.push(UtteranceRecord { id: "missing".into(), audio_path: dir.path().join("nope.wav"), transcript: String::new(), condition: ConditionTag::Original, duration: 1.0, snr_db: None });
    let m = CorpusManifest::from_records(recs).unwrap();
    let cqcc = CqccConfig::default();
    let models = train_countermeasure(&m, &m, 2, 3, &cqcc, 0).unwrap();
    let ev = evaluate_countermeasure(&m, &m, &models).unwrap();
    assert_eq!(ev.skipped, 2);
    assert_eq!(ev.scores.genuine, ev.scores.spoof);
    assert!((ev.eer - 50.0).abs() <= 100.0 / 6.0 + 1e-9, "{}", ev.eer);
    let path = dir.path().join("cm.json");
    models.save(&path).unwrap();
    assert_eq!(CountermeasureModels::load(&path).unwrap(), models);
}
