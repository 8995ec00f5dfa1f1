use super::{FeatureKind, FeatureMatrix};
use crate::error::{invalid, Result};

fn central_difference(values: &[f64], frames: usize, dims: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for t in 0..frames {
        let prev = t.saturating_sub(1);
        let next = (t + 1).min(frames - 1);
        for d in 0..dims {
            out[t * dims + d] = 0.5 * (values[next * dims + d] - values[prev * dims + d]);
        }
    }
    out
}

/// `[x, Δx, ΔΔx]` per frame: central differences with edge replication.
pub fn append_deltas(feat: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (frames, dims) = (feat.frames(), feat.dims());
    if frames == 0 {
        return invalid("cannot take deltas of an empty feature matrix");
    }
    let delta = central_difference(feat.values(), frames, dims);
    let accel = central_difference(&delta, frames, dims);
    let mut values = Vec::with_capacity(frames * dims * 3);
    for t in 0..frames {
        let r = t * dims..(t + 1) * dims;
        values.extend_from_slice(&feat.values()[r.clone()]);
        values.extend_from_slice(&delta[r.clone()]);
        values.extend_from_slice(&accel[r]);
    }
    let kind = match feat.kind() {
        FeatureKind::Mel => FeatureKind::MelDelta,
        other => other,
    };
    FeatureMatrix::new(values, frames, dims * 3, feat.frame_hop(), kind)
}
