//! Binary model container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   8 bytes  "EMPCMODL"
//! version u32      1
//! count   u32      number of records
//! record  u8 kind, u64 payload length, payload
//! ```
//!
//! Record kinds: 1 dynamics, 2 energy, 3 denoiser, 4 UTF-8 metadata. Each
//! kind appears at most once. Floats are stored as raw IEEE-754 bits, so a
//! save/load round trip is bit-exact. See `docs/model-format.md`.

use std::fs;
use std::path::Path;

use crate::density::{DenoiserModel, EnergyModel};
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, NetworkParams};
use crate::normalize::Normalizer;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"EMPCMODL";
pub const VERSION: u32 = 1;

const KIND_DYNAMICS: u8 = 1;
const KIND_ENERGY: u8 = 2;
const KIND_DENOISER: u8 = 3;
const KIND_META: u8 = 4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub dynamics: Option<DynamicsModel>,
    pub energy: Option<EnergyModel>,
    pub denoiser: Option<DenoiserModel>,
    /// Free-form metadata, JSON by convention.
    pub meta: Option<String>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn network(&mut self, p: &NetworkParams) {
        self.u32(p.layers().len());
        for l in p.layers() {
            self.u32(l.fan_out());
            self.u32(l.fan_in());
            self.u8(l.activation.tag());
            self.f64s(l.weight.data());
            self.f64s(l.bias.data());
        }
    }
    fn normalizer(&mut self, n: &Normalizer) {
        self.u32(n.dim());
        self.f64s(&n.mean);
        self.f64s(&n.std);
        self.u32(n.degenerate.len());
        for d in &n.degenerate {
            self.u32(*d);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Format(format!("array of {n} floats overruns the record")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn network(&mut self) -> Result<NetworkParams> {
        let n = self.u32()?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let (out, inp) = (self.u32()?, self.u32()?);
            let tag = self.u8()?;
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
            let weight = Tensor::matrix(out, inp, self.f64s(out.saturating_mul(inp))?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = Tensor::vector(self.f64s(out)?);
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        NetworkParams::new(layers).map_err(|e| Error::Format(e.to_string()))
    }
    fn normalizer(&mut self) -> Result<Normalizer> {
        let d = self.u32()?;
        let mean = self.f64s(d)?;
        let std = self.f64s(d)?;
        let k = self.u32()?;
        let degenerate = (0..k).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        Ok(Normalizer {
            mean,
            std,
            degenerate,
        })
    }
}

fn format_err(e: Error) -> Error {
    match e {
        Error::Format(_) => e,
        other => Error::Format(other.to_string()),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records: Vec<(u8, Vec<u8>)> = Vec::new();
        if let Some(m) = &self.dynamics {
            let mut w = Writer(Vec::new());
            w.u32(m.state_dim);
            w.u32(m.action_dim);
            w.f64(m.logvar_min);
            w.f64(m.logvar_max);
            w.network(&m.params);
            w.normalizer(&m.input_norm);
            w.normalizer(&m.output_norm);
            records.push((KIND_DYNAMICS, w.0));
        }
        if let Some(m) = &self.energy {
            let mut w = Writer(Vec::new());
            w.f64(m.sigma);
            w.network(&m.params);
            w.normalizer(&m.normalizer);
            records.push((KIND_ENERGY, w.0));
        }
        if let Some(m) = &self.denoiser {
            let mut w = Writer(Vec::new());
            w.f64(m.sigma);
            w.network(&m.params);
            w.normalizer(&m.normalizer);
            records.push((KIND_DENOISER, w.0));
        }
        if let Some(meta) = &self.meta {
            records.push((KIND_META, meta.as_bytes().to_vec()));
        }
        let mut out = Writer(MAGIC.to_vec());
        out.u32(VERSION as usize);
        out.u32(records.len());
        for (kind, payload) in records {
            out.u8(kind);
            out.0.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.0.extend_from_slice(&payload);
        }
        out.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let kind = r.u8()?;
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            let mut p = Reader { buf: payload, pos: 0 };
            match kind {
                KIND_DYNAMICS if ck.dynamics.is_none() => {
                    let (ds, da) = (p.u32()?, p.u32()?);
                    let (lo, hi) = (p.f64()?, p.f64()?);
                    let params = p.network()?;
                    let inp = p.normalizer()?;
                    let out = p.normalizer()?;
                    let mut m = DynamicsModel::new(params, inp, out, ds, da).map_err(format_err)?;
                    m.logvar_min = lo;
                    m.logvar_max = hi;
                    m.validate().map_err(format_err)?;
                    ck.dynamics = Some(m);
                }
                KIND_ENERGY if ck.energy.is_none() => {
                    let sigma = p.f64()?;
                    let params = p.network()?;
                    let n = p.normalizer()?;
                    ck.energy = Some(EnergyModel::new(params, n, sigma).map_err(format_err)?);
                }
                KIND_DENOISER if ck.denoiser.is_none() => {
                    let sigma = p.f64()?;
                    let params = p.network()?;
                    let n = p.normalizer()?;
                    ck.denoiser = Some(DenoiserModel::new(params, n, sigma).map_err(format_err)?);
                }
                KIND_META if ck.meta.is_none() => {
                    let s = std::str::from_utf8(payload).map_err(|e| Error::Format(e.to_string()))?;
                    p.pos = payload.len();
                    ck.meta = Some(s.to_owned());
                }
                other => return Err(Error::Format(format!("unexpected or repeated record kind {other}"))),
            }
            if p.pos != payload.len() {
                return Err(Error::Format(format!("record kind {kind} has trailing bytes")));
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after the last record".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
