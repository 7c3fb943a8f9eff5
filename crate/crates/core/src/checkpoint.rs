//! Versioned binary checkpoints.
//!
//! Layout (little endian): 8-byte magic, u32 version, u8 kind, then a kind
//! specific body. Networks store arch tag, seed, dropout rate and every named
//! parameter (name, rank, dims, values). HMM ensembles are stored as a
//! length-prefixed JSON document. The oracle kind has no body.

use std::path::Path;

use crate::architectures::{Arch, Model};
use crate::error::{Error, Result};
use crate::hmm::HmmEnsemble;
use crate::metrics::{PerfectOracle, StageEstimator};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CGSECKPT";
pub const VERSION: u32 = 1;

const KIND_NETWORK: u8 = 0;
const KIND_HMM: u8 = 1;
const KIND_ORACLE: u8 = 2;

#[derive(Clone, Debug)]
pub enum Checkpoint {
    Network(Model),
    Hmm(HmmEnsemble),
    /// Feeds the true target back; used to validate the evaluation path.
    Oracle,
}

impl Checkpoint {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Checkpoint::Network(m) => m.arch.name(),
            Checkpoint::Hmm(_) => "hmm",
            Checkpoint::Oracle => "oracle",
        }
    }

    pub fn estimator(&self) -> &dyn StageEstimator {
        match self {
            Checkpoint::Network(m) => m,
            Checkpoint::Hmm(h) => h,
            Checkpoint::Oracle => &PerfectOracle,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        match self {
            Checkpoint::Network(m) => {
                out.push(KIND_NETWORK);
                out.push(m.arch as u8);
                out.extend_from_slice(&m.seed.to_le_bytes());
                out.extend_from_slice(&m.dropout.rate.to_le_bytes());
                out.extend_from_slice(&(m.store.len() as u32).to_le_bytes());
                for id in m.store.ids() {
                    let name = m.store.name(id).as_bytes();
                    let v = m.store.value(id);
                    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                    out.extend_from_slice(name);
                    out.extend_from_slice(&(v.shape().len() as u32).to_le_bytes());
                    for &d in v.shape() {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for x in v.data() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            Checkpoint::Hmm(h) => {
                out.push(KIND_HMM);
                let json = serde_json::to_vec(h)?;
                out.extend_from_slice(&(json.len() as u64).to_le_bytes());
                out.extend_from_slice(&json);
            }
            Checkpoint::Oracle => out.push(KIND_ORACLE),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let ck = match r.u8()? {
            KIND_NETWORK => {
                let arch = match r.u8()? {
                    0 => Arch::Dense,
                    1 => Arch::Sequential,
                    2 => Arch::Dgnn,
                    t => return Err(Error::Checkpoint(format!("unknown architecture tag {t}"))),
                };
                let seed = r.u64()?;
                let rate = r.f64()?;
                let mut model = Model::build(arch, seed)?.with_dropout(rate)?;
                let n = r.u32()? as usize;
                if n != model.store.len() {
                    return Err(Error::Checkpoint(format!(
                        "{arch} checkpoint has {n} parameters, architecture has {}",
                        model.store.len()
                    )));
                }
                for _ in 0..n {
                    let len = r.u32()? as usize;
                    let name = std::str::from_utf8(r.take(len)?)
                        .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                        .to_string();
                    let rank = r.u32()? as usize;
                    let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                    let numel: usize = shape.iter().product();
                    let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
                    model.store.set(&name, t)?;
                }
                Checkpoint::Network(model)
            }
            KIND_HMM => {
                let len = r.u64()? as usize;
                let h: HmmEnsemble = serde_json::from_slice(r.take(len)?)?;
                h.validate()?;
                Checkpoint::Hmm(h)
            }
            KIND_ORACLE => Checkpoint::Oracle,
            k => return Err(Error::Checkpoint(format!("unknown checkpoint kind {k}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint body".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&b)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        };
        let s = &self.b[self.pos..end];
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
}
