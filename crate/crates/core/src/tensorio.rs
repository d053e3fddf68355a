//! `.amrt` tensor container and the boundary around network forward passes.
//!
//! Layout, all little-endian:
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `AMRT`                  |
//! | 4      | 4         | version (u32) = 1             |
//! | 8      | 1         | dtype (u8) = 0, f32           |
//! | 9      | 1         | ndim (u8), 1..=4              |
//! | 10     | 6         | zero padding                  |
//! | 16     | 4 * ndim  | dims (u32 each)               |
//! | ...    | 4 * numel | payload (f32, row-major)      |

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BBox;

mod oracle;

pub use oracle::{oracle_provider, OracleError, OracleLayout, OracleNoise, OracleProvider};

pub const MAGIC: &[u8; 4] = b"AMRT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_DIMS: usize = 4;
/// Bytes before the dims array.
pub const FIXED_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("bad magic {0:?}, expected \"AMRT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("truncated: need {expected} bytes, have {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-zero header padding")]
    NonZeroPadding,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

/// Dense row-major f32 tensor, 1 to 4 dimensions, all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl PredictionTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(TensorError::InvalidShape(format!(
                "{} dimensions, expected 1..={MAX_DIMS}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(TensorError::InvalidShape(format!("dims {dims:?}")));
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::InvalidShape(format!("dims {dims:?} overflow")))?;
        if numel != data.len() {
            return Err(TensorError::InvalidShape(format!(
                "dims {dims:?} hold {numel} values, data has {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue(i));
        }
        Ok(PredictionTensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub fn encoded_len(ndim: usize, numel: usize) -> usize {
    FIXED_HEADER_LEN + 4 * ndim + 4 * numel
}

pub fn write_tensor(t: &PredictionTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(t.dims.len(), t.numel()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(t.dims.len() as u8);
    out.extend_from_slice(&[0u8; 6]);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(bytes: &[u8]) -> Result<PredictionTensor, TensorError> {
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(TensorError::TruncatedPayload {
                expected,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    need(FIXED_HEADER_LEN)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    if bytes[8] != DTYPE_F32 {
        return Err(TensorError::UnsupportedDtype(bytes[8]));
    }
    let ndim = bytes[9] as usize;
    if ndim == 0 || ndim > MAX_DIMS {
        return Err(TensorError::InvalidShape(format!("ndim {ndim}")));
    }
    if bytes[10..16].iter().any(|&b| b != 0) {
        return Err(TensorError::NonZeroPadding);
    }
    need(FIXED_HEADER_LEN + 4 * ndim)?;
    let dims: Vec<usize> = bytes[FIXED_HEADER_LEN..FIXED_HEADER_LEN + 4 * ndim]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::InvalidShape(format!("dims {dims:?} overflow")))?;
    let total = numel
        .checked_mul(4)
        .and_then(|p| p.checked_add(FIXED_HEADER_LEN + 4 * ndim))
        .ok_or_else(|| TensorError::InvalidShape(format!("dims {dims:?} overflow")))?;
    need(total)?;
    if bytes.len() > total {
        return Err(TensorError::TrailingBytes(bytes.len() - total));
    }
    let data: Vec<f32> = bytes[FIXED_HEADER_LEN + 4 * ndim..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    PredictionTensor::new(dims, data)
}

/// Which network a tensor comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Detector,
    RecognizerCrnet,
    RecognizerMultitask,
    RecognizerCrnn,
}

impl ModelRole {
    pub const ALL: [ModelRole; 4] = [
        ModelRole::Detector,
        ModelRole::RecognizerCrnet,
        ModelRole::RecognizerMultitask,
        ModelRole::RecognizerCrnn,
    ];

    /// Tag used in dump file names: `<image_id>.<tag>.amrt`.
    pub fn file_tag(self) -> &'static str {
        match self {
            ModelRole::Detector => "detector",
            ModelRole::RecognizerCrnet => "crnet",
            ModelRole::RecognizerMultitask => "multitask",
            ModelRole::RecognizerCrnn => "crnn",
        }
    }
}

/// One forward pass: `input` is `region` of image `image_id`, already
/// resampled to the network's input size.
#[derive(Debug, Clone, Copy)]
pub struct InferenceRequest<'a> {
    pub image_id: &'a str,
    pub role: ModelRole,
    pub input: &'a RgbImage,
    pub region: BBox,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider does not serve role {0:?}")]
    UnsupportedRole(ModelRole),
    #[error("no {role:?} output for image {image_id:?}")]
    MissingOutput { image_id: String, role: ModelRole },
    #[error("{role:?} output has shape {actual:?}, declared {expected:?}")]
    ShapeMismatch {
        role: ModelRole,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor for {image_id:?}: {source}")]
    Tensor { image_id: String, source: TensorError },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Stand-in for a network forward pass. Output shapes are fixed per role.
/// Implementations must be usable from several threads at once.
pub trait InferenceProvider: Send + Sync {
    fn output_shape(&self, role: ModelRole) -> Option<Vec<usize>>;
    fn infer(&self, request: &InferenceRequest<'_>) -> Result<PredictionTensor, ProviderError>;
}

/// Serves pre-computed network dumps from `<dir>/<image_id>.<role>.amrt`.
#[derive(Debug, Clone)]
pub struct DirectoryProvider {
    dir: PathBuf,
    shapes: HashMap<ModelRole, Vec<usize>>,
}

impl DirectoryProvider {
    pub fn new(dir: impl Into<PathBuf>, shapes: HashMap<ModelRole, Vec<usize>>) -> Self {
        DirectoryProvider {
            dir: dir.into(),
            shapes,
        }
    }

    pub fn path_for(&self, image_id: &str, role: ModelRole) -> PathBuf {
        self.dir.join(format!("{image_id}.{}.amrt", role.file_tag()))
    }
}

impl InferenceProvider for DirectoryProvider {
    fn output_shape(&self, role: ModelRole) -> Option<Vec<usize>> {
        self.shapes.get(&role).cloned()
    }

    fn infer(&self, request: &InferenceRequest<'_>) -> Result<PredictionTensor, ProviderError> {
        let expected = self
            .output_shape(request.role)
            .ok_or(ProviderError::UnsupportedRole(request.role))?;
        let path = self.path_for(request.image_id, request.role);
        let bytes = fs::read(&path).map_err(|_| ProviderError::MissingOutput {
            image_id: request.image_id.to_string(),
            role: request.role,
        })?;
        let t = read_tensor(&bytes).map_err(|source| ProviderError::Tensor {
            image_id: request.image_id.to_string(),
            source,
        })?;
        if t.dims() != expected.as_slice() {
            return Err(ProviderError::ShapeMismatch {
                role: request.role,
                expected,
                actual: t.dims().to_vec(),
            });
        }
        Ok(t)
    }
}

pub fn write_tensor_file(path: &Path, t: &PredictionTensor) -> std::io::Result<()> {
    fs::write(path, write_tensor(t))
}
