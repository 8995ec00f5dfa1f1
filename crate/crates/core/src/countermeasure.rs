//! GMM back-end for spoofing detection: EM training, log-likelihood-ratio
//! scoring and equal error rate.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{invalid, Error, Result};
use crate::nn::log_sum_exp;
use crate::signal::{extract_cqcc, read_wav, CqccConfig, FeatureMatrix};

pub const VARIANCE_FLOOR: f64 = 1e-4;
const KMEANS_STEPS: usize = 10;
const DEGENERATE_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn mixtures(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len() as f64;
        for (k, o) in out.iter_mut().enumerate() {
            let (mu, var) = (&self.means[k], &self.variances[k]);
            let mut q = 0.0;
            let mut logdet = 0.0;
            for ((xi, m), v) in x.iter().zip(mu).zip(var) {
                q += (xi - m) * (xi - m) / v;
                logdet += v.ln();
            }
            *o = self.weights[k].ln() - 0.5 * (q + logdet + d * (2.0 * std::f64::consts::PI).ln());
        }
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.mixtures()];
        self.component_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn mean_log_likelihood(&self, feat: &FeatureMatrix) -> Result<f64> {
        if feat.dims() != self.dims() {
            return invalid(format!("features have {} dims, model has {}", feat.dims(), self.dims()));
        }
        if feat.frames() == 0 {
            return invalid("no frames to score");
        }
        Ok(feat.rows().map(|r| self.log_likelihood(r)).sum::<f64>() / feat.frames() as f64)
    }
}

/// A fitted model and the total log-likelihood at each EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
    pub reseeded: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Replaces component `k` with a perturbed copy of the heaviest component,
/// splitting its weight.
fn reseed(model: &mut GmmModel, k: usize, rng: &mut ChaCha8Rng) {
    let heavy = (0..model.mixtures()).filter(|&j| j != k).max_by(|&a, &b| model.weights[a].total_cmp(&model.weights[b])).unwrap_or(k);
    log::warn!("GMM component {k} degenerate (weight {:.2e}); reseeding from component {heavy}", model.weights[k]);
    let w = model.weights[heavy] / 2.0;
    model.weights[heavy] = w;
    model.weights[k] = w;
    let (mean, var) = (model.means[heavy].clone(), model.variances[heavy].clone());
    model.means[k] = mean.iter().zip(&var).map(|(m, v)| m + 0.1 * v.sqrt() * rng.random_range(-1.0..1.0)).collect();
    model.variances[k] = var;
}

fn kmeans_init(feat: &FeatureMatrix, m: usize, rng: &mut ChaCha8Rng) -> GmmModel {
    let n = feat.frames();
    let d = feat.dims();
    let mut picks: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        picks.swap(i, j);
    }
    let mut centres: Vec<Vec<f64>> = picks[..m].iter().map(|&i| feat.row(i).to_vec()).collect();
    let mut assign = vec![0; n];
    for step in 0..=KMEANS_STEPS {
        for (i, a) in assign.iter_mut().enumerate() {
            let x = feat.row(i);
            *a = (0..m).min_by(|&p, &q| sq_dist(x, &centres[p]).total_cmp(&sq_dist(x, &centres[q]))).expect("m >= 1");
        }
        if step == KMEANS_STEPS {
            break;
        }
        let mut sums = vec![vec![0.0; d]; m];
        let mut counts = vec![0usize; m];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            sums[a].iter_mut().zip(feat.row(i)).for_each(|(s, v)| *s += v);
        }
        for k in 0..m {
            if counts[k] > 0 {
                centres[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            } else {
                centres[k] = feat.row(rng.random_range(0..n)).to_vec();
            }
        }
    }
    let mut counts = vec![0usize; m];
    let mut means = vec![vec![0.0; d]; m];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        means[a].iter_mut().zip(feat.row(i)).for_each(|(s, v)| *s += v);
    }
    for k in 0..m {
        let c = counts[k].max(1) as f64;
        means[k].iter_mut().for_each(|v| *v /= c);
        if counts[k] == 0 {
            means[k] = centres[k].clone();
        }
    }
    let mut variances = vec![vec![0.0; d]; m];
    for (i, &a) in assign.iter().enumerate() {
        variances[a].iter_mut().zip(feat.row(i)).zip(&means[a]).for_each(|((s, v), mu)| *s += (v - mu) * (v - mu));
    }
    for k in 0..m {
        let c = counts[k].max(1) as f64;
        variances[k].iter_mut().for_each(|v| *v = (*v / c).max(VARIANCE_FLOOR));
    }
    let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
    GmmModel { weights, means, variances }
}

/// K-means initialization followed by EM, recording the log-likelihood at
/// every iteration.
pub fn fit_gmm_traced(feat: &FeatureMatrix, m: usize, iters: usize, seed: u64) -> Result<GmmFit> {
    if m == 0 {
        return invalid("GMM needs at least one mixture");
    }
    if feat.frames() < 10 * m {
        return invalid(format!("{} frames are too few for {m} mixtures (need {})", feat.frames(), 10 * m));
    }
    let (n, d) = (feat.frames(), feat.dims());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = kmeans_init(feat, m, &mut rng);
    let mut reseeded = 0;
    for k in 0..m {
        if model.weights[k] < DEGENERATE_WEIGHT {
            reseed(&mut model, k, &mut rng);
            reseeded += 1;
        }
    }
    let mut history = Vec::with_capacity(iters);
    let mut resp = vec![0.0; m];
    for _ in 0..iters {
        let mut nk = vec![0.0; m];
        let mut sx = vec![vec![0.0; d]; m];
        let mut sxx = vec![vec![0.0; d]; m];
        let mut total = 0.0;
        for x in feat.rows() {
            model.component_log_densities(x, &mut resp);
            let lse = log_sum_exp(&resp);
            total += lse;
            for k in 0..m {
                let r = (resp[k] - lse).exp();
                nk[k] += r;
                for (j, &xj) in x.iter().enumerate() {
                    sx[k][j] += r * xj;
                    sxx[k][j] += r * xj * xj;
                }
            }
        }
        history.push(total);
        for k in 0..m {
            model.weights[k] = nk[k] / n as f64;
            if nk[k] > 0.0 {
                for j in 0..d {
                    let mu = sx[k][j] / nk[k];
                    model.means[k][j] = mu;
                    model.variances[k][j] = (sxx[k][j] / nk[k] - mu * mu).max(VARIANCE_FLOOR);
                }
            }
        }
        for k in 0..m {
            if model.weights[k] < DEGENERATE_WEIGHT {
                reseed(&mut model, k, &mut rng);
                reseeded += 1;
            }
        }
    }
    Ok(GmmFit { model, log_likelihoods: history, reseeded })
}

pub fn fit_gmm(feat: &FeatureMatrix, m: usize, iters: usize, seed: u64) -> Result<GmmModel> {
    Ok(fit_gmm_traced(feat, m, iters, seed)?.model)
}

/// Mean per-frame log-likelihood under `bonafide` minus that under `spoof`.
pub fn score_llr(feat: &FeatureMatrix, bonafide: &GmmModel, spoof: &GmmModel) -> Result<f64> {
    Ok(bonafide.mean_log_likelihood(feat)? - spoof.mean_log_likelihood(feat)?)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub spoof: Vec<f64>,
}

/// Equal error rate in percent. Thresholds sweep the sorted union of scores
/// (plus +inf); a trial is accepted when its score is at least the
/// threshold. The rate is interpolated linearly between the two operating
/// points that bracket FAR = FRR.
pub fn compute_eer(scores: &ScoreSet) -> Result<f64> {
    let (g, s) = (&scores.genuine, &scores.spoof);
    if g.is_empty() || s.is_empty() {
        return invalid("EER needs both genuine and spoof scores");
    }
    if g.iter().chain(s).any(|v| !v.is_finite()) {
        return invalid("scores must be finite");
    }
    let mut gs = g.clone();
    let mut ss = s.clone();
    gs.sort_by(f64::total_cmp);
    ss.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = gs.iter().chain(&ss).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let (ng, ns) = (gs.len() as f64, ss.len() as f64);
    let (mut gi, mut si) = (0, 0);
    let mut prev: Option<(f64, f64)> = None;
    for t in thresholds {
        while gi < gs.len() && gs[gi] < t {
            gi += 1;
        }
        while si < ss.len() && ss[si] < t {
            si += 1;
        }
        let frr = gi as f64 / ng;
        let far = (ss.len() - si) as f64 / ns;
        if frr >= far {
            return Ok(100.0
                * match prev {
                    None => far.max(frr),
                    Some((far0, frr0)) => {
                        let d0 = far0 - frr0;
                        let d1 = far - frr;
                        let a = d0 / (d0 - d1);
                        far0 + a * (far - far0)
                    }
                });
        }
        prev = Some((far, frr));
    }
    unreachable!("at +inf FRR is 1 and FAR is 0")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    /// `bonafide` or `spoof`.
    pub label: String,
    pub score: f64,
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[UtteranceScore]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scores {
        writeln!(f, "{} {} {}", s.id, s.label, s.score)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<UtteranceScore>> {
    let path = path.as_ref();
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: expected `id label score`", path.display(), i + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 || !matches!(parts[1], "bonafide" | "spoof") {
            return Err(bad());
        }
        out.push(UtteranceScore { id: parts[0].into(), label: parts[1].into(), score: parts[2].parse().map_err(|_| bad())? });
    }
    Ok(out)
}

impl ScoreSet {
    pub fn from_scores(scores: &[UtteranceScore]) -> Self {
        let pick = |label: &str| scores.iter().filter(|s| s.label == label).map(|s| s.score).collect();
        Self { genuine: pick("bonafide"), spoof: pick("spoof") }
    }
}

/// The bona fide and spoof models plus the feature settings they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountermeasureModels {
    pub cqcc: CqccConfig,
    pub bonafide: GmmModel,
    pub spoof: GmmModel,
}

impl CountermeasureModels {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// CQCC frames of every readable utterance, and the number skipped.
pub fn manifest_features(manifest: &CorpusManifest, cqcc: &CqccConfig) -> (Vec<(String, FeatureMatrix)>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in manifest.records() {
        match read_wav(&r.audio_path).and_then(|w| extract_cqcc(&w, cqcc)) {
            Ok(f) if f.frames() > 0 => out.push((r.id.clone(), f)),
            Ok(_) => {
                log::warn!("{}: too short for CQCC analysis, skipped", r.id);
                skipped += 1;
            }
            Err(e) => {
                log::warn!("{}: {e}, skipped", r.id);
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

fn pooled(frames: &[(String, FeatureMatrix)]) -> Result<FeatureMatrix> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("no usable utterances".into()))?;
    let d = first.1.dims();
    let values: Vec<f64> = frames.iter().flat_map(|(_, f)| f.values().iter().copied()).collect();
    let n = values.len() / d.max(1);
    FeatureMatrix::new(values, n, d, first.1.frame_hop(), first.1.kind())
}

pub fn train_countermeasure(
    bonafide: &CorpusManifest,
    spoof: &CorpusManifest,
    mixtures: usize,
    iters: usize,
    cqcc: &CqccConfig,
    seed: u64,
) -> Result<CountermeasureModels> {
    let (b, bs) = manifest_features(bonafide, cqcc);
    let (s, ss) = manifest_features(spoof, cqcc);
    if bs + ss > 0 {
        log::warn!("{} utterance(s) skipped while training the countermeasure", bs + ss);
    }
    Ok(CountermeasureModels {
        cqcc: cqcc.clone(),
        bonafide: fit_gmm(&pooled(&b)?, mixtures, iters, seed)?,
        spoof: fit_gmm(&pooled(&s)?, mixtures, iters, seed.wrapping_add(1))?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: ScoreSet,
    pub eer: f64,
    pub utterances: Vec<UtteranceScore>,
    pub skipped: usize,
}

/// Scores every readable utterance of both manifests.
pub fn evaluate_countermeasure(bonafide: &CorpusManifest, spoof: &CorpusManifest, models: &CountermeasureModels) -> Result<Evaluation> {
    let mut utterances = Vec::new();
    let mut skipped = 0;
    for (manifest, label) in [(bonafide, "bonafide"), (spoof, "spoof")] {
        let (feats, sk) = manifest_features(manifest, &models.cqcc);
        skipped += sk;
        for (id, f) in feats {
            utterances.push(UtteranceScore { id, label: label.into(), score: score_llr(&f, &models.bonafide, &models.spoof)? });
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} utterance(s) skipped during scoring");
    }
    let scores = ScoreSet::from_scores(&utterances);
    let eer = compute_eer(&scores)?;
    Ok(Evaluation { scores, eer, utterances, skipped })
}

#[cfg(test)]
mod tests;
