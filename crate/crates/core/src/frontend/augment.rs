//! Time and channel block masking.

use rand::Rng;

use super::mel::FeatureMap;
use crate::error::{Error, Result};

/// A contiguous mask `[start, start + len)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Replace a frame block and a channel block with the mean of the whole map.
pub fn apply_masks(x: &FeatureMap, frames: Span, channels: Span) -> Result<FeatureMap> {
    let (_, c, t) = x.data.dims3()?;
    if frames.start + frames.len > t || channels.start + channels.len > c {
        return Err(Error::InvalidInput("mask extends past the feature map".into()));
    }
    let mean = x.data.mean();
    let mut out = x.clone();
    let d = out.data.data_mut();
    for ch in 0..c {
        let in_band = (channels.start..channels.start + channels.len).contains(&ch);
        for f in 0..t {
            if in_band || (frames.start..frames.start + frames.len).contains(&f) {
                d[ch * t + f] = mean;
            }
        }
    }
    Ok(out)
}

/// Mask `0..=max_time_frames` consecutive frames and `0..=max_channels` consecutive channels.
pub fn spec_augment<R: Rng + ?Sized>(
    x: &FeatureMap,
    max_time_frames: usize,
    max_channels: usize,
    rng: &mut R,
) -> Result<FeatureMap> {
    let (_, c, t) = x.data.dims3()?;
    if max_time_frames > t || max_channels > c {
        return Err(Error::InvalidInput(format!(
            "mask limits ({max_time_frames}, {max_channels}) exceed map {c}x{t}"
        )));
    }
    let tl = rng.random_range(0..=max_time_frames);
    let cl = rng.random_range(0..=max_channels);
    let ts = rng.random_range(0..=t - tl);
    let cs = rng.random_range(0..=c - cl);
    apply_masks(x, Span { start: ts, len: tl }, Span { start: cs, len: cl })
}
