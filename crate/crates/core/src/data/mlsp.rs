use super::EmbeddingVector;
use crate::error::{Error, Result};

/// Channel counts of the five pooled backbone blocks in the default
/// configuration. They sum to [`DEFAULT_EMBEDDING_DIM`].
pub const DEFAULT_CHANNELS: [usize; 5] = [112, 160, 272, 272, 448];
pub const DEFAULT_EMBEDDING_DIM: usize = 1264;

/// One `height x width x channels` activation map, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height * width == 0 {
            return Err(Error::Degenerate(format!(
                "activation map has zero spatial extent ({height}x{width})"
            )));
        }
        if channels == 0 {
            return Err(Error::Invalid("activation map has no channels".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape {
                op: "ActivationMap::new",
                left: vec![height, width, channels],
                right: vec![data.len()],
            });
        }
        Ok(ActivationMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        ActivationMap::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Global average over the spatial axes, one value per channel.
    ///
    /// Accumulated as offsets from the first pixel, so a constant map pools
    /// to its constant exactly.
    pub fn global_average(&self) -> Vec<f64> {
        let c = self.channels;
        let first = &self.data[..c];
        let mut acc = vec![0.0; c];
        for px in self.data.chunks(c).skip(1) {
            for ((a, v), f) in acc.iter_mut().zip(px).zip(first) {
                *a += v - f;
            }
        }
        let n = (self.height * self.width) as f64;
        first.iter().zip(acc).map(|(f, a)| f + a / n).collect()
    }
}

/// Activations of several backbone blocks for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSet {
    pub image_id: String,
    pub maps: Vec<ActivationMap>,
}

/// Pools every map and stacks the channel vectors in map order.
pub fn mlsp_pool(set: &ActivationSet) -> Result<EmbeddingVector> {
    if set.maps.is_empty() {
        return Err(Error::Invalid(format!("{}: no activation maps", set.image_id)));
    }
    let mut values = Vec::with_capacity(set.maps.iter().map(|m| m.channels).sum());
    for m in &set.maps {
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("{}: non-finite activation", set.image_id)));
        }
        values.extend(m.global_average());
    }
    Ok(EmbeddingVector {
        id: set.image_id.clone(),
        values,
    })
}
