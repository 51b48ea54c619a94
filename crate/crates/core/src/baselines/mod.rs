//! Comparison purifiers: feature squeezing, Butterworth low-pass filtering,
//! truncated-SVD reconstruction, and a simplified event-participation
//! decomposition. All are shape-preserving, pure, and deterministic, and act
//! per channel (or per PMU) independently, so they are safe to fan out
//! across threads.

mod butterworth;
mod svd;

pub use butterworth::{butter_design, gain_at, lowpass_filter, max_pole_magnitude, Biquad, SosFilter};
pub use svd::{compact_svd, SvdFactors};

use crate::data::{PmuWindow, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel (min, max) ranges, taken from the training split.
pub type ChannelRanges = [(f64, f64); NUM_CHANNELS];

/// Bit-depth reduction plus temporal smoothing.
///
/// Each channel is rescaled to [0, 1] by the training-set range, quantized
/// to 2^bits levels, rescaled back, then moving-averaged along time with
/// edge replication.
pub fn feature_squeeze(
    x: &PmuWindow,
    bits: u32,
    smooth_window: usize,
    ranges: &ChannelRanges,
) -> Result<PmuWindow> {
    if !(1..=16).contains(&bits) {
        return Err(Error::config(format!("bit depth {bits} outside 1..=16")));
    }
    if smooth_window == 0 || smooth_window % 2 == 0 {
        return Err(Error::config(format!(
            "smoothing window {smooth_window} must be odd >= 1"
        )));
    }
    let levels = (1u32 << bits) as f64 - 1.0;
    let mut out = x.clone();
    for (i, v) in out.values_mut().data_mut().iter_mut().enumerate() {
        let (lo, hi) = ranges[i % NUM_CHANNELS];
        let span = hi - lo;
        if span <= 0.0 {
            continue; // constant channel: quantization is the identity
        }
        let unit = ((*v - lo) / span).clamp(0.0, 1.0);
        *v = lo + (unit * levels).round() / levels * span;
    }
    if smooth_window > 1 {
        moving_average_time(&mut out, smooth_window);
    }
    Ok(out)
}

fn moving_average_time(x: &mut PmuWindow, window: usize) {
    let (w, k) = x.dims();
    let half = (window / 2) as isize;
    let mut series = vec![0.0; w];
    for pmu in 0..k {
        for c in 0..NUM_CHANNELS {
            for t in 0..w {
                series[t] = x.values().data()[x.values().idx3(t, pmu, c)];
            }
            for t in 0..w {
                let mut sum = 0.0;
                for d in -half..=half {
                    let tt = (t as isize + d).clamp(0, w as isize - 1) as usize;
                    sum += series[tt];
                }
                let idx = x.values().idx3(t, pmu, c);
                x.values_mut().data_mut()[idx] = sum / window as f64;
            }
        }
    }
}

/// Truncated-SVD reconstruction of one channel matrix.
pub fn svd_truncate_channel(m: &Tensor, rank: usize) -> Result<Tensor> {
    Ok(compact_svd(m)?.reconstruct(rank))
}

/// Per-channel truncated-SVD reconstruction with the top `rank` triples.
pub fn svd_purify(x: &PmuWindow, rank: usize) -> Result<PmuWindow> {
    let (w, k) = x.dims();
    if rank == 0 || rank > w.min(k) {
        return Err(Error::config(format!(
            "svd rank {rank} outside 1..={}",
            w.min(k)
        )));
    }
    let mut out = x.clone();
    for c in 0..NUM_CHANNELS {
        let m = channel_matrix(x, c);
        let rec = svd_truncate_channel(&m, rank)?;
        write_channel(&mut out, c, &rec);
    }
    Ok(out)
}

/// Simplified event-participation reconstruction: per channel,
/// x_hat = 1 b^T + u p^T with b the per-PMU temporal mean (steady state),
/// u the leading left singular vector of the centered matrix (event
/// signature), and p the corresponding loadings (participation factors).
pub fn event_participation_purify(x: &PmuWindow) -> Result<PmuWindow> {
    let (w, _) = x.dims();
    if w < 2 {
        return Err(Error::config("event participation needs W >= 2"));
    }
    let mut out = x.clone();
    for c in 0..NUM_CHANNELS {
        let m = channel_matrix(x, c);
        let rec = event_participation_channel(&m)?;
        write_channel(&mut out, c, &rec);
    }
    Ok(out)
}

/// Event-participation reconstruction of one [W, K] channel matrix.
pub fn event_participation_channel(m: &Tensor) -> Result<Tensor> {
    let (w, k) = (m.shape()[0], m.shape()[1]);
    // Steady-state per-PMU mean.
    let mut b = vec![0.0; k];
    for row in 0..w {
        for (col, bv) in b.iter_mut().enumerate() {
            *bv += m.data()[m.idx2(row, col)];
        }
    }
    b.iter_mut().for_each(|v| *v /= w as f64);
    // Centered matrix and its leading singular triple.
    let mut centered = m.clone();
    for row in 0..w {
        for col in 0..k {
            let idx = centered.idx2(row, col);
            centered.data_mut()[idx] -= b[col];
        }
    }
    let factors = compact_svd(&centered)?;
    let event = factors.reconstruct(1);
    let mut rec = vec![0.0; w * k];
    for row in 0..w {
        for col in 0..k {
            rec[row * k + col] = b[col] + event.data()[event.idx2(row, col)];
        }
    }
    Ok(Tensor::from_raw(vec![w, k], rec))
}

/// Extract channel `c` as a [W, K] matrix.
pub fn channel_matrix(x: &PmuWindow, c: usize) -> Tensor {
    let (w, k) = x.dims();
    let mut data = vec![0.0; w * k];
    for t in 0..w {
        for pmu in 0..k {
            data[t * k + pmu] = x.values().data()[x.values().idx3(t, pmu, c)];
        }
    }
    Tensor::from_raw(vec![w, k], data)
}

fn write_channel(x: &mut PmuWindow, c: usize, m: &Tensor) {
    let (w, k) = x.dims();
    for t in 0..w {
        for pmu in 0..k {
            let idx = x.values().idx3(t, pmu, c);
            x.values_mut().data_mut()[idx] = m.data()[m.idx2(t, pmu)];
        }
    }
}
