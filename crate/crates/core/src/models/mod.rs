//! Lite super-resolution networks, the ship classifier, and checkpoints.

mod checkpoint;
mod classifier;
mod params;
mod sr;

pub use checkpoint::{Checkpoint, ModelSpec, StageTag, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use classifier::{
    build_classifier, classifier_forward, Backbone, Classifier, ClassifierConfig, Mode,
};
pub use params::{ConvRef, DenseRef, ParamSet, ParameterSnapshot};
pub(crate) use sr::bicubic_skip;
pub use sr::{build_sr_model, sr_forward, SrFamily, SrModel, SrModelConfig};

use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::nn::Tensor;

/// Anything with a named parameter set.
pub trait Model {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

pub fn parameters(model: &impl Model) -> ParameterSnapshot {
    model.params().snapshot()
}

/// Loads `snapshot` into `model`; any name or shape mismatch is a checkpoint error.
pub fn load_parameters(model: &mut impl Model, snapshot: &ParameterSnapshot) -> Result<()> {
    model.params_mut().load(snapshot)
}

/// Stacks same-sized images into an `[n, 1, h, w]` tensor scaled to `[0, 1]`.
pub fn images_to_tensor(batch: &[Image]) -> Result<Tensor> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Domain("empty batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(batch.len() * h * w);
    for img in batch {
        if img.dims() != (h, w) {
            return shape_err(format!(
                "mixed image sizes in batch: {:?} vs {:?}",
                img.dims(),
                (h, w)
            ));
        }
        let inv = 1.0 / img.peak();
        data.extend(img.as_slice().iter().map(|v| (v * inv) as f32));
    }
    Tensor::new(vec![batch.len(), 1, h, w], data)
}

/// Splits an `[n, 1, h, w]` tensor in `[0, 1]` units back into images with the given peak.
pub fn tensor_to_images(t: &Tensor, peak: f64) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 {
        return shape_err(format!("expected one channel, got {c}"));
    }
    if !t.is_finite() {
        return Err(Error::Numeric("non-finite network output".into()));
    }
    t.data()
        .chunks(h * w)
        .take(n)
        .map(|plane| {
            Image::from_clamped(
                h,
                w,
                plane.iter().map(|&v| f64::from(v) * peak).collect(),
                peak,
            )
        })
        .collect()
}
