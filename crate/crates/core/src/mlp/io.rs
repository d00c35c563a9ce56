//! Binary model container.
//!
//! Layout (little-endian): 8-byte magic `BEAMQMLP`, `u32` version, `u32`
//! width count, `u64` widths, then for each layer its `out × in` weights
//! row-major followed by its biases as `f64`, then a `u64` length and a JSON
//! metadata block.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use super::model::{Layer, MlpModel, ModelMeta};
use crate::beamformer::MlpMapper;
use crate::error::{Error, Result};
use crate::geometry::AngleGrid;
use crate::questioner::MeasurementRule;

pub const MAGIC: &[u8; 8] = b"BEAMQMLP";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(model: &MlpModel) -> Result<Vec<u8>> {
    let widths = model.widths();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        buf.extend_from_slice(&(*w as u64).to_le_bytes());
    }
    for layer in model.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = serde_json::to_vec(model.meta())?;
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<MlpModel> {
    let fail = |reason: String| Error::ModelFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(&fail)? != MAGIC {
        return Err(fail("bad magic tag".into()));
    }
    let version = r.u32().map_err(&fail)?;
    if version != FORMAT_VERSION {
        return Err(fail(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = r.u32().map_err(&fail)? as usize;
    if count < 2 || count > 64 {
        return Err(fail(format!("implausible layer-width count {count}")));
    }
    let widths = (0..count)
        .map(|_| r.u64().map(|w| w as usize))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(&fail)?;
    let mut layers = Vec::with_capacity(count - 1);
    for w in widths.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let n = inputs
            .checked_mul(outputs)
            .ok_or_else(|| fail("size overflow".into()))?;
        let weights = Array2::from_shape_vec((outputs, inputs), r.f64s(n).map_err(&fail)?)
            .map_err(|e| fail(e.to_string()))?;
        let bias = Array1::from(r.f64s(outputs).map_err(&fail)?);
        layers.push(Layer { weights, bias });
    }
    let len = r.u64().map_err(&fail)? as usize;
    let meta: ModelMeta = serde_json::from_slice(r.take(len).map_err(&fail)?)
        .map_err(|e| fail(format!("metadata: {e}")))?;
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    MlpModel::new(layers, meta).map_err(|e| fail(e.to_string()))
}

pub fn save(model: &MlpModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MlpModel> {
    decode(&fs::read(path)?, path)
}

/// Canonical file name for a model keyed by grid, query size and rule.
pub fn model_file_name(
    bins: usize,
    antennas: usize,
    secondary: usize,
    query_size: usize,
    rule: MeasurementRule,
) -> String {
    format!("mlp_M{bins}_N{antennas}_k{secondary}_K{query_size}_{rule}.bin")
}

pub fn model_path(
    dir: &Path,
    grid: &AngleGrid,
    query_size: usize,
    rule: MeasurementRule,
) -> PathBuf {
    dir.join(model_file_name(
        grid.bins(),
        grid.antennas(),
        grid.secondary(),
        query_size,
        rule,
    ))
}

/// Saves under the canonical name in `dir` and returns the path written.
pub fn save_in(model: &MlpModel, dir: &Path) -> Result<PathBuf> {
    let m = model.meta();
    let path = dir.join(model_file_name(
        m.bins,
        m.antennas,
        m.secondary,
        m.query_size,
        m.rule,
    ));
    save(model, &path)?;
    Ok(path)
}

/// Loads the models for every size in `sizes`; a missing file is
/// [`Error::ModelNotFound`].
pub fn load_mapper(
    dir: &Path,
    grid: &AngleGrid,
    rule: MeasurementRule,
    sizes: impl IntoIterator<Item = usize>,
) -> Result<MlpMapper> {
    sizes
        .into_iter()
        .map(|k| {
            let path = model_path(dir, grid, k, rule);
            if !path.is_file() {
                return Err(Error::ModelNotFound(k));
            }
            load(&path)
        })
        .collect()
}
