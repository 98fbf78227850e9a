//! On-disk formats: tensors, images, text records, configuration and
//! manifests.

mod cameras;
mod checkpoint;
mod images;
pub mod ini;
mod manifest;
mod tensor;
mod text;
mod tracks;

use std::path::Path;

pub use cameras::{read_cameras, write_cameras};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use images::{decode_mask, decode_ppm, encode_mask, encode_ppm};
pub use manifest::{sha256_hex, Manifest};
pub use tensor::{depth_from_tensor, depth_to_tensor, flow_from_tensor, flow_to_tensor, Tensor, TensorData};
pub use tracks::{read_tracks, write_tracks};

use crate::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
