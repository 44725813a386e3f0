//! Dataset file pair: a JSON metadata document plus a blob of
//! little-endian f32 samples, each being the normalized parameter vector
//! followed by the field values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::Standardization;
use crate::error::{check_dim, Error, Result};
use crate::io::{read_bytes, read_json, write_atomic, write_json};
use crate::surrogate::ParamSpace;
use crate::types::{min_max, FieldGrid, ParamVector};

pub const DATASET_FORMAT: &str = "paramflow-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub param_space: ParamSpace,
    /// Fitted on the training split only.
    pub standardization: Standardization,
    pub value_range: (f64, f64),
    pub sample_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// Blob file name, relative to the metadata file.
    pub blob: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub params: Vec<ParamVector>,
    pub fields: Vec<FieldGrid>,
}

impl Dataset {
    /// Builds a dataset whose first `train_count` samples form the
    /// training split. Every field is given the shared value range.
    pub fn new(
        param_space: ParamSpace,
        params: Vec<ParamVector>,
        mut fields: Vec<FieldGrid>,
        train_count: usize,
    ) -> Result<Self> {
        param_space.validate()?;
        check_dim("dataset fields", params.len(), fields.len())?;
        if train_count == 0 || train_count > params.len() {
            return Err(Error::Config(format!(
                "train count {train_count} must be in 1..={}",
                params.len()
            )));
        }
        let dims = fields[0].dims;
        for (p, f) in params.iter().zip(&fields) {
            check_dim("parameter vector", param_space.dim(), p.dim())?;
            if f.dims != dims {
                return Err(Error::Config("all fields must share dims".into()));
            }
        }
        let value_range = fields
            .iter()
            .map(|f| min_max(&f.values))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| {
                (a.min(c), b.max(d))
            });
        for f in &mut fields {
            f.value_range = value_range;
        }
        let meta = DatasetMeta {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            dims,
            param_space,
            standardization: Standardization::fit(&fields[..train_count]),
            value_range,
            sample_count: params.len(),
            train_count,
            test_count: params.len() - train_count,
            blob: String::new(),
        };
        Ok(Self {
            meta,
            params,
            fields,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn train(&self) -> (&[ParamVector], &[FieldGrid]) {
        let n = self.meta.train_count;
        (&self.params[..n], &self.fields[..n])
    }

    pub fn test(&self) -> (&[ParamVector], &[FieldGrid]) {
        let n = self.meta.train_count;
        (&self.params[n..], &self.fields[n..])
    }

    pub fn blob_path(meta_path: &Path) -> PathBuf {
        meta_path.with_extension("bin")
    }

    /// Writes `meta_path` and the blob next to it.
    pub fn save(&mut self, meta_path: &Path) -> Result<()> {
        let blob_path = Self::blob_path(meta_path);
        self.meta.blob = blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let per = self.meta.param_space.dim() + self.fields[0].len();
        let mut bytes = Vec::with_capacity(4 * per * self.len());
        for (p, f) in self.params.iter().zip(&self.fields) {
            for v in p.iter().chain(&f.values) {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        write_atomic(&blob_path, &bytes)?;
        write_json(meta_path, &self.meta)
    }

    pub fn load(meta_path: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(meta_path)?;
        if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "{}: expected {DATASET_FORMAT} v{DATASET_VERSION}, found {} v{}",
                meta_path.display(),
                meta.format,
                meta.version
            )));
        }
        meta.param_space.validate()?;
        if meta.train_count + meta.test_count != meta.sample_count {
            return Err(Error::Format(
                "split counts do not add up to the sample count".into(),
            ));
        }
        let blob_path = meta_path.parent().unwrap_or(Path::new("")).join(&meta.blob);
        let bytes = read_bytes(&blob_path)?;
        let n = meta.param_space.dim();
        let len: usize = meta.dims.iter().product();
        let per = n + len;
        if bytes.len() != 4 * per * meta.sample_count {
            return Err(Error::Format(format!(
                "{}: expected {} bytes, found {}",
                blob_path.display(),
                4 * per * meta.sample_count,
                bytes.len()
            )));
        }
        let floats: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let mut params = Vec::with_capacity(meta.sample_count);
        let mut fields = Vec::with_capacity(meta.sample_count);
        for sample in floats.chunks_exact(per) {
            params.push(ParamVector(sample[..n].to_vec()));
            fields.push(FieldGrid::new(
                meta.dims,
                sample[n..].to_vec(),
                meta.value_range,
            )?);
        }
        Ok(Self {
            meta,
            params,
            fields,
        })
    }
}

/// Encodes field values as little-endian f32.
pub fn field_to_le_bytes(field: &FieldGrid) -> Vec<u8> {
    field
        .values
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

/// Decodes a raw little-endian f32 field with known dims.
pub fn field_from_le_bytes(
    bytes: &[u8],
    dims: [usize; 3],
    value_range: (f64, f64),
) -> Result<FieldGrid> {
    let len: usize = dims.iter().product();
    if bytes.len() != 4 * len {
        return Err(Error::Format(format!(
            "field payload has {} bytes, expected {} for dims {dims:?}",
            bytes.len(),
            4 * len
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FieldGrid::new(dims, values, value_range)
}

pub fn write_field(path: &Path, field: &FieldGrid) -> Result<()> {
    write_atomic(path, &field_to_le_bytes(field))
}

pub fn read_field(path: &Path, dims: [usize; 3], value_range: (f64, f64)) -> Result<FieldGrid> {
    field_from_le_bytes(&read_bytes(path)?, dims, value_range)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
