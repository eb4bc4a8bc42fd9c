//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "ADBCRCKP"
//! version      u32       1
//! kind         u8        1 adbcr, 2 danncr, 3 lasso
//! fingerprint  u32 length + UTF-8 bytes
//! criterion    f64       selection value of the saved model
//! payload      model specific, see below
//! checksum     32 bytes  SHA-256 of everything before it
//! ```
//!
//! Network payload: `input_dim u64`, `dropout f64`, shared and head layer
//! lists (`u32` count + `u64` widths), covariate means and scales (`u32`
//! count + `f64`s), outcome mean and scale (`f64`, `f64`), then the
//! parameter tensors (`u32` count, each `rows u64`, `cols u64`, `f64` data
//! in row-major order).
//!
//! Lasso payload: `variant u8` (1 single, 2 per treatment), `alpha f64`,
//! `u32` fit count, each `intercept f64` plus a `u32`-counted weight list.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{ParamSet, Tensor};
use crate::baselines::{DanncrModel, LassoModel, LassoVariant, LinearFit};
use crate::error::{Error, Result};
use crate::model::{AdbcrModel, CateModel, PotentialOutcomes};
use crate::nn::{OutcomeScaler, Standardizer};

pub const MAGIC: &[u8; 8] = b"ADBCRCKP";
pub const VERSION: u32 = 1;

/// Any estimator the toolkit can fit, save and evaluate.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Adbcr(AdbcrModel),
    Danncr(DanncrModel),
    Lasso(LassoModel),
}

impl FittedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            FittedModel::Adbcr(_) => "adbcr",
            FittedModel::Danncr(_) => "danncr",
            FittedModel::Lasso(m) => m.variant.as_str(),
        }
    }
}

impl CateModel for FittedModel {
    fn input_dim(&self) -> usize {
        match self {
            FittedModel::Adbcr(m) => m.input_dim(),
            FittedModel::Danncr(m) => m.input_dim(),
            FittedModel::Lasso(m) => m.input_dim(),
        }
    }

    fn potential_outcomes(&self, x: &Tensor) -> Result<PotentialOutcomes> {
        match self {
            FittedModel::Adbcr(m) => m.potential_outcomes(x),
            FittedModel::Danncr(m) => m.potential_outcomes(x),
            FittedModel::Lasso(m) => m.potential_outcomes(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FittedModel,
    pub fingerprint: String,
    /// Validation value the model was selected on.
    pub criterion: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        match &self.model {
            FittedModel::Adbcr(_) => w.u8(1),
            FittedModel::Danncr(_) => w.u8(2),
            FittedModel::Lasso(_) => w.u8(3),
        }
        w.str(&self.fingerprint);
        w.f64(self.criterion);
        match &self.model {
            FittedModel::Adbcr(m) => w.network(Network {
                input_dim: m.input_dim(),
                dropout_p: m.dropout_p(),
                shared_layers: m.shared_layers(),
                head_layers: m.head_layers(),
                x_scaler: &m.x_scaler,
                y_scaler: m.y_scaler,
                params: m.params(),
            }),
            FittedModel::Danncr(m) => w.network(Network {
                input_dim: m.input_dim(),
                dropout_p: m.dropout_p(),
                shared_layers: m.shared_layers(),
                head_layers: m.head_layers(),
                x_scaler: &m.x_scaler,
                y_scaler: m.y_scaler,
                params: m.params(),
            }),
            FittedModel::Lasso(m) => {
                w.u8(match m.variant {
                    LassoVariant::Single => 1,
                    LassoVariant::PerTreatment => 2,
                });
                w.f64(m.alpha);
                w.u32(m.fits.len() as u32);
                for f in &m.fits {
                    w.f64(f.intercept);
                    w.f64s(&f.weights);
                }
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.buf.extend_from_slice(&digest);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads version {VERSION}"
            )));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Checkpoint("checksum mismatch; file is truncated or corrupt".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let kind = r.u8()?;
        let fingerprint = r.str()?;
        let criterion = r.f64()?;
        let model = match kind {
            1 => {
                let n = r.network()?;
                FittedModel::Adbcr(AdbcrModel::from_parts(
                    n.input_dim,
                    n.shared_layers,
                    n.head_layers,
                    n.dropout_p,
                    n.tensors,
                    n.x_scaler,
                    n.y_scaler,
                )?)
            }
            2 => {
                let n = r.network()?;
                FittedModel::Danncr(DanncrModel::from_parts(
                    n.input_dim,
                    n.shared_layers,
                    n.head_layers,
                    n.dropout_p,
                    n.tensors,
                    n.x_scaler,
                    n.y_scaler,
                )?)
            }
            3 => {
                let variant = match r.u8()? {
                    1 => LassoVariant::Single,
                    2 => LassoVariant::PerTreatment,
                    v => return Err(Error::Checkpoint(format!("unknown lasso variant tag {v}"))),
                };
                let alpha = r.f64()?;
                let count = r.u32()? as usize;
                let expected = match variant {
                    LassoVariant::Single => 1,
                    LassoVariant::PerTreatment => 2,
                };
                if count != expected {
                    return Err(Error::Checkpoint(format!("{variant} needs {expected} fits, found {count}")));
                }
                let mut fits = Vec::with_capacity(count);
                for _ in 0..count {
                    let intercept = r.f64()?;
                    let weights = r.f64s()?;
                    fits.push(LinearFit { intercept, weights });
                }
                FittedModel::Lasso(LassoModel { variant, alpha, fits })
            }
            k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            model,
            fingerprint,
            criterion,
        })
    }

    /// Write via a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Replace every tensor of `params`, checking count and shapes.
pub(crate) fn install(params: &mut ParamSet, tensors: Vec<Tensor>) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors for an architecture with {}",
            tensors.len(),
            params.len()
        )));
    }
    for (i, t) in tensors.into_iter().enumerate() {
        if t.shape() != params.get(i).shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?}",
                params.name(i),
                t.shape(),
                params.get(i).shape()
            )));
        }
        *params.get_mut(i) = t;
    }
    Ok(())
}

struct Network<'a> {
    input_dim: usize,
    dropout_p: f64,
    shared_layers: &'a [usize],
    head_layers: &'a [usize],
    x_scaler: &'a Standardizer,
    y_scaler: OutcomeScaler,
    params: &'a ParamSet,
}

struct NetworkParts {
    input_dim: usize,
    dropout_p: f64,
    shared_layers: Vec<usize>,
    head_layers: Vec<usize>,
    x_scaler: Standardizer,
    y_scaler: OutcomeScaler,
    tensors: Vec<Tensor>,
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.f64(x));
    }

    fn sizes(&mut self, v: &[usize]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.u64(x as u64));
    }

    fn network(&mut self, n: Network<'_>) {
        self.u64(n.input_dim as u64);
        self.f64(n.dropout_p);
        self.sizes(n.shared_layers);
        self.sizes(n.head_layers);
        self.f64s(&n.x_scaler.mean);
        self.f64s(&n.x_scaler.std);
        self.f64(n.y_scaler.mean);
        self.f64(n.y_scaler.std);
        self.u32(n.params.len() as u32);
        for t in n.params.values() {
            self.u64(t.rows() as u64);
            self.u64(t.cols() as u64);
            t.data().iter().for_each(|&x| self.f64(x));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(width) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint("length field exceeds the data".into()));
        }
        Ok(n)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("fingerprint is not UTF-8".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn sizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn network(&mut self) -> Result<NetworkParts> {
        let input_dim = self.u64()? as usize;
        let dropout_p = self.f64()?;
        let shared_layers = self.sizes()?;
        let head_layers = self.sizes()?;
        let mean = self.f64s()?;
        let std = self.f64s()?;
        if mean.len() != std.len() {
            return Err(Error::Checkpoint("scaler blocks differ in length".into()));
        }
        let y_scaler = OutcomeScaler {
            mean: self.f64()?,
            std: self.f64()?,
        };
        let count = self.len(16)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = self.u64()? as usize;
            let cols = self.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l.saturating_mul(8) <= self.buf.len() - self.pos)
                .ok_or_else(|| Error::Checkpoint("tensor exceeds the data".into()))?;
            let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(rows, cols, data)?);
        }
        Ok(NetworkParts {
            input_dim,
            dropout_p,
            shared_layers,
            head_layers,
            x_scaler: Standardizer { mean, std },
            y_scaler,
            tensors,
        })
    }
}
