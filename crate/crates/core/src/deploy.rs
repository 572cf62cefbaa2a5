//! Checkpoints, magnitude pruning and 8-bit weight quantization.
//!
//! Checkpoint byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HWDM"
//! 4       2     format version (1)
//! 6       2     kind: 1 full, 2 pretrain-only, 3 quantized, 4 generator
//! 8       4     metadata length M
//! 12      M     metadata, UTF-8 `key=value` lines (backbone shape)
//! 12+M    4     entry count N
//! then N entries, sorted by name:
//!         2     name length L
//!         L     name, UTF-8
//!         1     encoding: 0 float32, 1 int8 symmetric
//!         1     rank R
//!         4·R   extents
//!   float32:   4 per element, IEEE-754 binary32
//!   int8:      8 scale (binary64), 1 zero point (always 0), 1 per element code
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::model::{HybridModel, Prediction};
use crate::params::ParamStore;
use crate::reports::write_atomic;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HWDM";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "hwdm";
const QMAX: f64 = 127.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Full,
    PretrainOnly,
    Quantized,
    Generator,
}

impl CheckpointKind {
    fn code(self) -> u16 {
        match self {
            CheckpointKind::Full => 1,
            CheckpointKind::PretrainOnly => 2,
            CheckpointKind::Quantized => 3,
            CheckpointKind::Generator => 4,
        }
    }

    fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            1 => CheckpointKind::Full,
            2 => CheckpointKind::PretrainOnly,
            3 => CheckpointKind::Quantized,
            4 => CheckpointKind::Generator,
            _ => return None,
        })
    }
}

/// Symmetric per-tensor int8 codes: `value ≈ code · scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<i8>,
    pub scale: f64,
}

/// `scale = max|x| / 127` (1 for an all-zero tensor) and
/// `code = clamp(round(127·x / max|x|), −127, 127)`.
///
/// Rounding `127·x / max|x|` rather than `x / scale` keeps exact ties
/// exact: `−0.5` against a maximum of `1` lands on `−63.5` and rounds away
/// from zero.
pub fn quantize(t: &Tensor) -> Result<QuantizedTensor> {
    if !t.is_finite() {
        return Err(Error::contract("cannot quantize a tensor with non-finite values"));
    }
    let max = t.max_abs();
    let (scale, codes) = if max == 0.0 {
        (1.0, vec![0; t.numel()])
    } else {
        let codes = t.data().iter().map(|&x| (x * QMAX / max).round().clamp(-QMAX, QMAX) as i8).collect();
        (max / QMAX, codes)
    };
    Ok(QuantizedTensor { shape: t.shape().to_vec(), codes, scale })
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    Tensor::from_fn(q.shape.clone(), |i| f64::from(q.codes[i]) * q.scale)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Float(Tensor),
    Quantized(QuantizedTensor),
}

impl Entry {
    pub fn shape(&self) -> &[usize] {
        match self {
            Entry::Float(t) => t.shape(),
            Entry::Quantized(q) => &q.shape,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        match self {
            Entry::Float(t) => t.clone(),
            Entry::Quantized(q) => dequantize(q),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub metadata: String,
    pub entries: BTreeMap<String, Entry>,
}

impl Checkpoint {
    pub fn from_params(kind: CheckpointKind, metadata: impl Into<String>, params: &ParamStore) -> Self {
        let entries = params.iter().map(|(n, t)| (n.to_string(), Entry::Float(t.clone()))).collect();
        Self { kind, metadata: metadata.into(), entries }
    }

    /// Every entry as a float tensor, dequantizing where needed.
    pub fn params(&self) -> ParamStore {
        self.entries.iter().map(|(n, e)| (n.clone(), e.to_tensor())).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&len32(self.metadata.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&len32(self.entries.len(), "entry count")?.to_le_bytes());
        for (name, entry) in &self.entries {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::contract(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match entry {
                Entry::Float(_) => 0,
                Entry::Quantized(_) => 1,
            });
            let shape = entry.shape();
            out.push(u8::try_from(shape.len()).map_err(|_| Error::contract(format!("{name}: rank above 255")))?);
            for &d in shape {
                out.extend_from_slice(&len32(d, "extent")?.to_le_bytes());
            }
            match entry {
                Entry::Float(t) => {
                    for &v in t.data() {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                Entry::Quantized(q) => {
                    out.extend_from_slice(&q.scale.to_le_bytes());
                    out.push(0);
                    out.extend(q.codes.iter().map(|&c| c as u8));
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic; not a checkpoint"));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported format version {version}")));
        }
        let kind_code = r.u16("kind")?;
        let kind = CheckpointKind::from_code(kind_code)
            .ok_or_else(|| Error::format(6, format!("unknown checkpoint kind {kind_code}")))?;
        let meta_len = r.u32("metadata length")? as usize;
        let meta_at = r.pos;
        let metadata = String::from_utf8(r.take(meta_len, "metadata")?.to_vec())
            .map_err(|_| Error::format(meta_at, "metadata is not UTF-8"))?;
        let count = r.u32("entry count")? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u16("name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
                .map_err(|_| Error::format(at + 2, "parameter name is not UTF-8"))?;
            let enc_at = r.pos;
            let encoding = r.u8("encoding")?;
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank).map(|_| Ok(r.u32("extent")? as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::format(enc_at, format!("{name}: element count overflows")))?;
            let entry = match encoding {
                0 => {
                    let raw = r.take(numel.saturating_mul(4), "float payload")?;
                    let data = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
                    Entry::Float(Tensor::from_parts(shape, data))
                }
                1 => {
                    let scale = f64::from_le_bytes(r.take(8, "scale")?.try_into().expect("8 bytes"));
                    let zp_at = r.pos;
                    if r.u8("zero point")? != 0 {
                        return Err(Error::format(zp_at, format!("{name}: only zero point 0 is supported")));
                    }
                    if !(scale > 0.0 && scale.is_finite()) {
                        return Err(Error::format(zp_at - 8, format!("{name}: scale {scale} must be positive")));
                    }
                    let codes = r.take(numel, "int8 payload")?.iter().map(|&b| b as i8).collect();
                    Entry::Quantized(QuantizedTensor { shape, codes, scale })
                }
                other => return Err(Error::format(enc_at, format!("{name}: unknown encoding {other}"))),
            };
            if entries.insert(name.clone(), entry).is_some() {
                return Err(Error::format(at, format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { kind, metadata, entries })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// The backbone description stored by [`model_checkpoint`].
    pub fn backbone(&self) -> Result<BackboneConfig> {
        BackboneConfig::from_text(&self.metadata)
    }

    /// Rebuilds the float model; quantized entries are dequantized.
    pub fn model(&self) -> Result<HybridModel> {
        if !matches!(self.kind, CheckpointKind::Full | CheckpointKind::Quantized) {
            return Err(Error::contract(format!("a {:?} checkpoint does not hold a complete model", self.kind)));
        }
        HybridModel::from_parts(self.backbone()?, self.params())
    }
}

fn len32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::contract(format!("{what} {n} does not fit in 32 bits")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.pos, format!("truncated {what}: need {n} bytes")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Full float checkpoint of `model`, with its backbone in the metadata.
pub fn model_checkpoint(model: &HybridModel) -> Checkpoint {
    Checkpoint::from_params(CheckpointKind::Full, model.config.to_text(), &model.params)
}

/// Bytes of a full checkpoint holding `params` and no metadata.
pub fn save(params: &ParamStore) -> Result<Vec<u8>> {
    Checkpoint::from_params(CheckpointKind::Full, "", params).to_bytes()
}

/// Parameters of any checkpoint, dequantized where needed.
pub fn load(bytes: &[u8]) -> Result<ParamStore> {
    Ok(Checkpoint::from_bytes(bytes)?.params())
}

/// Weight tensors: matrices and kernels. Biases, gains and the positional
/// table are left alone by pruning and quantization.
pub fn is_weight(name: &str, t: &Tensor) -> bool {
    t.rank() >= 2 && !name.ends_with(".pos")
}

/// Per weight tensor, `true` where an entry survived pruning.
pub type PruneMask = BTreeMap<String, Vec<bool>>;

/// Zeroes the `⌊fraction·n⌋` smallest-magnitude entries of every weight
/// tensor; equal magnitudes are pruned in index order.
pub fn prune_magnitude(params: &ParamStore, fraction: f64) -> Result<(ParamStore, PruneMask)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::contract(format!("pruning fraction {fraction} must be in [0, 1)")));
    }
    let mut out = ParamStore::new();
    let mut masks = PruneMask::new();
    for (name, t) in params.iter() {
        if !is_weight(name, t) {
            out.insert(name, t.clone());
            continue;
        }
        let n = t.numel();
        let k = (fraction * n as f64).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| t.data()[a].abs().total_cmp(&t.data()[b].abs()).then(a.cmp(&b)));
        let mut keep = vec![true; n];
        order[..k].iter().for_each(|&i| keep[i] = false);
        let pruned = Tensor::from_fn(t.shape().to_vec(), |i| if keep[i] { t.data()[i] } else { 0.0 });
        out.insert(name, pruned);
        masks.insert(name.to_string(), keep);
    }
    Ok((out, masks))
}

/// Quantized checkpoint of `model`: int8 weights, float everything else.
pub fn quantize_model(model: &HybridModel) -> Result<Checkpoint> {
    let mut entries = BTreeMap::new();
    for (name, t) in model.params.iter() {
        let entry = if is_weight(name, t) { Entry::Quantized(quantize(t)?) } else { Entry::Float(t.clone()) };
        entries.insert(name.to_string(), entry);
    }
    Ok(Checkpoint { kind: CheckpointKind::Quantized, metadata: model.config.to_text(), entries })
}

/// Inference from int8 weights, dequantized on every call; activations
/// stay in floating point and no gradients are recorded.
#[derive(Clone, Debug)]
pub struct QuantizedModel {
    config: BackboneConfig,
    checkpoint: Checkpoint,
}

impl QuantizedModel {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.kind != CheckpointKind::Quantized {
            return Err(Error::contract(format!("expected a quantized checkpoint, got {:?}", checkpoint.kind)));
        }
        let config = checkpoint.backbone()?;
        HybridModel::from_parts(config.clone(), checkpoint.params())?;
        Ok(Self { config, checkpoint })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        quantized_forward(&self.config, &self.checkpoint, image)
    }
}

pub fn quantized_forward(config: &BackboneConfig, checkpoint: &Checkpoint, image: &Tensor) -> Result<Prediction> {
    if checkpoint.kind != CheckpointKind::Quantized {
        return Err(Error::contract("quantized inference needs a quantized checkpoint"));
    }
    HybridModel { config: config.clone(), params: checkpoint.params() }.predict(image)
}

/// How closely quantized predictions follow the float model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgreementReport {
    pub samples: usize,
    /// Fraction of images with the same top-1 class.
    pub agreement: f64,
    /// Largest |ln p_quantized − ln p_float| over classes and images.
    pub max_log_prob_drift: f64,
}

pub fn compare_quantized(float: &HybridModel, quantized: &QuantizedModel, images: &[Tensor]) -> Result<AgreementReport> {
    if images.is_empty() {
        return Err(Error::contract("no images to compare on"));
    }
    let (mut same, mut drift) = (0usize, 0f64);
    for image in images {
        let f = float.predict(image)?;
        let q = quantized.predict(image)?;
        same += usize::from(f.predicted_class() == q.predicted_class());
        for (a, b) in f.class_probs.data().iter().zip(q.class_probs.data()) {
            drift = drift.max((a.max(1e-300).ln() - b.max(1e-300).ln()).abs());
        }
    }
    Ok(AgreementReport { samples: images.len(), agreement: same as f64 / images.len() as f64, max_log_prob_drift: drift })
}
