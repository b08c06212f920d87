//! Volume ingestion, native storage, and slice export.

mod native;
mod nifti;
mod pgm;

pub use native::{load_native, read_native, save_native, write_native, NATIVE_MAGIC};
pub use nifti::{load_nifti, read_nifti};
pub use pgm::{export_slice, slice_to_pgm};

use crate::error::Result;
use crate::volume::Volume;
use std::path::Path;

/// Loads a volume, picking the reader from the file extension
/// (`.nii` for NIfTI-1, anything else for the native format).
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => load_nifti(path),
        _ => load_native(path),
    }
}
