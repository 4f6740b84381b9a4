//! `OSAE-CKPT v1` checkpoints.
//!
//! ```text
//! magic    8 bytes  "OSAECKPT"
//! version  u32      1
//! entries  u32
//! toc      entries x { name_len u32, name utf-8, offset u64, length u64 }
//! sections "meta" (JSON), "enc_weights", "enc_bias", "decoder",
//!          optional "input_center" (each an OSAE-MAT f64 tensor)
//! ```
//!
//! Offsets are absolute from the start of the file. All integers little-endian.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, OsaeError, Result};
use crate::matfile::{DType, Tensor};
use crate::sae::{Activation, LossSpec, SaeModel};
use crate::synthgen::Dictionary;

pub const CKPT_MAGIC: &[u8; 8] = b"OSAECKPT";
pub const CKPT_VERSION: u32 = 1;

/// Unit-sweeping progress.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepState {
    /// Units `0..frozen_count` are frozen.
    pub frozen_count: usize,
    /// Epoch at which each frozen unit was frozen, in unit order.
    pub freeze_epochs: Vec<usize>,
}

/// A model snapshot plus the training state needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SaeModel,
    pub sweep: SweepState,
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
    pub effective_k: usize,
    pub loss: Option<LossSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    d: usize,
    k: usize,
    m: usize,
    activation: Activation,
    loss: Option<LossSpec>,
    seed: u64,
    step: u64,
    epoch: usize,
    effective_k: usize,
    sweep: SweepState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.model;
        let meta = Meta {
            format: "OSAE-CKPT v1".into(),
            d: model.d(),
            k: model.k(),
            m: model.m,
            activation: model.activation,
            loss: self.loss.clone(),
            seed: self.seed,
            step: self.step,
            epoch: self.epoch,
            effective_k: self.effective_k,
            sweep: self.sweep.clone(),
        };
        let mut sections: Vec<(&str, Vec<u8>)> = vec![
            ("meta", serde_json::to_vec(&meta)?),
            ("enc_weights", Tensor::from_matrix(&model.enc_weights, DType::F64).encode()),
            ("enc_bias", Tensor::from_vector(model.enc_bias.as_slice(), DType::F64).encode()),
            ("decoder", Tensor::from_matrix(model.decoder.atoms(), DType::F64).encode()),
        ];
        if let Some(c) = &model.input_center {
            sections.push(("input_center", Tensor::from_vector(c.as_slice(), DType::F64).encode()));
        }

        let toc_len: usize = sections.iter().map(|(n, _)| 4 + n.len() + 16).sum();
        let mut offset = (8 + 4 + 4 + toc_len) as u64;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, body) in &sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(body.len() as u64).to_le_bytes());
            offset += body.len() as u64;
        }
        for (_, body) in sections {
            out.extend_from_slice(&body);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head = bytes.get(..16).ok_or_else(|| format_err("header", "truncated header"))?;
        if &head[..8] != CKPT_MAGIC {
            return Err(format_err("magic", "expected \"OSAECKPT\""));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(format_err("version", format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        if count > 64 {
            return Err(format_err("toc", format!("implausible section count {count}")));
        }
        let mut pos = 16;
        let mut take = |n: usize, field: &str| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| format_err(field, "truncated table of contents"))?;
            pos += n;
            Ok(s)
        };
        let mut toc = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4, "toc")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(len, "toc")?)
                .map_err(|_| format_err("toc", "section name is not utf-8"))?
                .to_string();
            let off = u64::from_le_bytes(take(8, "toc")?.try_into().unwrap()) as usize;
            let size = u64::from_le_bytes(take(8, "toc")?.try_into().unwrap()) as usize;
            toc.push((name, off, size));
        }
        let section = |name: &str| -> Result<Option<&[u8]>> {
            match toc.iter().find(|(n, _, _)| n == name) {
                None => Ok(None),
                Some((_, off, size)) => bytes
                    .get(*off..off.saturating_add(*size))
                    .map(Some)
                    .ok_or_else(|| format_err(name, "section extends past end of file")),
            }
        };
        let required = |name: &str| section(name)?.ok_or_else(|| format_err(name, "missing section"));

        let meta: Meta = serde_json::from_slice(required("meta")?)
            .map_err(|e| format_err("meta", e.to_string()))?;
        let tensor = |name: &str| -> Result<Tensor> {
            Tensor::decode(required(name)?).map_err(|e| match e {
                OsaeError::Format { field, message } => format_err(format!("{name}.{field}"), message),
                other => other,
            })
        };
        let enc = tensor("enc_weights")?;
        let bias = tensor("enc_bias")?;
        let dec = tensor("decoder")?;
        if enc.dims != [meta.k, meta.d] {
            return Err(format_err("enc_weights", format!("dims {:?}, meta says {}x{}", enc.dims, meta.k, meta.d)));
        }
        if bias.dims != [meta.k] {
            return Err(format_err("enc_bias", format!("dims {:?}, meta says K = {}", bias.dims, meta.k)));
        }
        if dec.dims != [meta.d, meta.k] {
            return Err(format_err("decoder", format!("dims {:?}, meta says {}x{}", dec.dims, meta.d, meta.k)));
        }
        let decoder = Dictionary::new(dec.into_matrix()?).map_err(|e| format_err("decoder", e.to_string()))?;
        let mut model = SaeModel::new(
            enc.into_matrix()?,
            DVector::from_vec(bias.data),
            decoder,
            meta.activation,
            meta.m,
        )
        .map_err(|e| format_err("meta", e.to_string()))?;
        if let Some(c) = section("input_center")? {
            let t = Tensor::decode(c)?;
            if t.dims != [meta.d] {
                return Err(format_err("input_center", "length differs from d"));
            }
            model.input_center = Some(DVector::from_vec(t.data));
        }
        Ok(Self {
            model,
            sweep: meta.sweep,
            step: meta.step,
            epoch: meta.epoch,
            seed: meta.seed,
            effective_k: meta.effective_k,
            loss: meta.loss,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Load and require the given input dimension and/or dictionary size.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, d: Option<usize>, k: Option<usize>) -> Result<Checkpoint> {
    let p = path.as_ref();
    let ckpt = load_checkpoint(p)?;
    if let Some(k) = k.filter(|&k| k != ckpt.model.k()) {
        return Err(OsaeError::Dimension(format!(
            "{} has K = {}, expected K = {k}",
            p.display(),
            ckpt.model.k()
        )));
    }
    if let Some(d) = d.filter(|&d| d != ckpt.model.d()) {
        return Err(OsaeError::Dimension(format!(
            "{} has d = {}, expected d = {d}",
            p.display(),
            ckpt.model.d()
        )));
    }
    Ok(ckpt)
}

/// Compare two checkpoints' parameters bit for bit.
pub fn bit_identical(a: &SaeModel, b: &SaeModel) -> bool {
    fn bits(s: &[f64]) -> impl Iterator<Item = u64> + '_ {
        s.iter().map(|v| v.to_bits())
    }
    a.enc_weights.shape() == b.enc_weights.shape()
        && a.decoder.atoms().shape() == b.decoder.atoms().shape()
        && bits(a.enc_weights.as_slice()).eq(bits(b.enc_weights.as_slice()))
        && bits(a.enc_bias.as_slice()).eq(bits(b.enc_bias.as_slice()))
        && bits(a.decoder.atoms().as_slice()).eq(bits(b.decoder.atoms().as_slice()))
}
