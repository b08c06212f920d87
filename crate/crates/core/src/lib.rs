//! Two-stage 3D fully-convolutional detection and segmentation.
//!
//! A proposal network segments a downsampled whole volume; the proposal is
//! projected onto each axis to localize the target, turned into an
//! enhancement mask `M = L·α + β`, and multiplied into a full-resolution crop
//! that a second network of identical architecture segments finely.

pub mod dataset;
pub mod dice;
pub mod error;
pub mod io;
pub mod localize;
pub mod mask;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod tensor;
pub mod volume;

pub use dataset::{Manifest, Sample, Side};
pub use dice::MetricReport;
pub use error::{Error, Result};
pub use localize::{CropWindow, Localization};
pub use mask::MaskParams;
pub use model::{FcnModel, NetworkConfig};
pub use phantom::PhantomSpec;
pub use pipeline::{PipelineConfig, TrainRecord};
pub use tensor::{Real, Tensor};
pub use volume::{Axis, Dims, LabelVolume, Volume};
