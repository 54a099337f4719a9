//! Image handles passed between backends. Payloads are PNG.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An image plus its content hash. Serialized form carries metadata only; bytes stay in memory
/// or on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip)]
    data: Option<Arc<[u8]>>,
}

impl PartialEq for ImageRef {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.width == other.width
            && self.height == other.height
            && self.seed == other.seed
            && self.path == other.path
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads width and height from a PNG header.
pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    Ok((info.width, info.height))
}

impl ImageRef {
    /// Wraps PNG bytes, validating the header.
    pub fn from_png(bytes: Vec<u8>, seed: Option<u64>) -> Result<Self> {
        let (width, height) = png_dimensions(&bytes).map_err(|detail| Error::Image {
            path: PathBuf::from("<memory>"),
            detail,
        })?;
        Ok(Self::raw(bytes, width, height, seed))
    }

    /// Wraps bytes without validation.
    pub fn raw(bytes: Vec<u8>, width: u32, height: u32, seed: Option<u64>) -> Self {
        Self {
            id: content_hash(&bytes),
            width,
            height,
            seed,
            path: None,
            data: Some(bytes.into()),
        }
    }

    /// Loads a PNG from disk and keeps the path.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (width, height) = png_dimensions(&bytes).map_err(|detail| Error::Image {
            path: path.to_path_buf(),
            detail,
        })?;
        let mut image = Self::raw(bytes, width, height, None);
        image.path = Some(path.to_path_buf());
        Ok(image)
    }

    /// Image bytes, from memory or re-read from `path`.
    pub fn bytes(&self) -> Result<Arc<[u8]>> {
        if let Some(data) = &self.data {
            return Ok(data.clone());
        }
        match &self.path {
            Some(path) => std::fs::read(path)
                .map(Into::into)
                .map_err(|e| Error::io(path, e)),
            None => Err(Error::Image {
                path: PathBuf::from("<detached>"),
                detail: format!("image {} has neither bytes nor path", self.id),
            }),
        }
    }

    pub fn has_bytes(&self) -> bool {
        self.data.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock;

    #[test]
    fn id_is_stable_for_identical_bytes() {
        let png = mock::render_png(&["cat"], 8, 8, 1);
        let a = ImageRef::from_png(png.clone(), Some(1)).unwrap();
        let b = ImageRef::from_png(png, Some(1)).unwrap();
        assert_eq!(a.id, b.id);
        assert_eq!((a.width, a.height), (8, 8));
    }

    #[test]
    fn rejects_non_png() {
        assert!(ImageRef::from_png(b"not a png".to_vec(), None).is_err());
    }

    #[test]
    fn path_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, mock::render_png(&["dog"], 4, 6, 0)).unwrap();
        let img = ImageRef::from_path(&path).unwrap();
        assert_eq!((img.width, img.height), (4, 6));
        let json = serde_json::to_string(&img).unwrap();
        let back: ImageRef = serde_json::from_str(&json).unwrap();
        assert!(!back.has_bytes());
        assert_eq!(back.bytes().unwrap(), img.bytes().unwrap());
    }
}
