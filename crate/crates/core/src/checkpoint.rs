//! "WBNN" parameter files shared by the scheduler and precoder networks.
//!
//! Layout (little endian):
//!
//! ```text
//! "WBNN"  u32 version  u8 tag (0 precoder, 1 ngnn, 2 sgnn)  u32 aux (N_RF or network count)
//! per network:
//!   u32 layers, u32 matrices per layer
//!   per layer: u32 out, u32 in, u8 has_norm
//!   f64 weights, layer by layer, matrix by matrix, row-major
//!   f64 running mean then variance of every normalized layer
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::gnn::{Layer, Network};
use crate::precoder::{PrecoderParams, PRECODER_WEIGHTS};
use crate::report::write_atomic;
use crate::scheduler::{SchedulerParams, Variant, SCHEDULER_WEIGHTS};
use crate::tensor::{ChannelStats, Tensor};

const MAGIC: &[u8; 4] = b"WBNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a WBNN checkpoint")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unknown network tag {0}")]
    Tag(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("{0} trailing bytes after the checkpoint")]
    Trailing(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: &'static str, found: &'static str },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Precoder(PrecoderParams),
    Scheduler(SchedulerParams),
}

impl Checkpoint {
    fn kind(&self) -> &'static str {
        match self {
            Self::Precoder(_) => "precoder",
            Self::Scheduler(_) => "scheduler",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let nets: Vec<&Network> = match self {
            Self::Precoder(p) => {
                out.push(0);
                out.extend_from_slice(&(p.n_rf as u32).to_le_bytes());
                vec![&p.net]
            }
            Self::Scheduler(s) => {
                out.push(match s.variant {
                    Variant::Ngnn => 1,
                    Variant::Sgnn => 2,
                });
                out.extend_from_slice(&(s.nets.len() as u32).to_le_bytes());
                s.nets.iter().collect()
            }
        };
        for net in nets {
            encode_network(net, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let tag = r.u8()?;
        let aux = r.u32()? as usize;
        let ck = match tag {
            0 => {
                let net = decode_network(&mut r, PRECODER_WEIGHTS)?;
                let p = PrecoderParams { net, n_rf: aux };
                p.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
                Self::Precoder(p)
            }
            1 | 2 => {
                let variant = if tag == 1 { Variant::Ngnn } else { Variant::Sgnn };
                if aux == 0 || aux > 1 << 16 {
                    return Err(CheckpointError::Malformed(format!("{aux} scheduler networks")));
                }
                let nets = (0..aux).map(|_| decode_network(&mut r, SCHEDULER_WEIGHTS)).collect::<Result<_>>()?;
                let s = SchedulerParams { variant, nets };
                s.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
                Self::Scheduler(s)
            }
            t => return Err(CheckpointError::Tag(t)),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, &self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn into_precoder(self) -> Result<PrecoderParams> {
        match self {
            Self::Precoder(p) => Ok(p),
            other => Err(CheckpointError::Kind { expected: "precoder", found: other.kind() }),
        }
    }

    pub fn into_scheduler(self) -> Result<SchedulerParams> {
        match self {
            Self::Scheduler(s) => Ok(s),
            other => Err(CheckpointError::Kind { expected: "scheduler", found: other.kind() }),
        }
    }
}

pub fn save_precoder(params: &PrecoderParams, path: &Path) -> Result<()> {
    Checkpoint::Precoder(params.clone()).save(path)
}

pub fn load_precoder(path: &Path) -> Result<PrecoderParams> {
    Checkpoint::load(path)?.into_precoder()
}

pub fn save_scheduler(params: &SchedulerParams, path: &Path) -> Result<()> {
    Checkpoint::Scheduler(params.clone()).save(path)
}

pub fn load_scheduler(path: &Path) -> Result<SchedulerParams> {
    Checkpoint::load(path)?.into_scheduler()
}

// ── Encoding ──

fn encode_network(net: &Network, out: &mut Vec<u8>) {
    let per = net.layers.first().map_or(0, |l| l.weights.len());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(per as u32).to_le_bytes());
    for l in &net.layers {
        out.extend_from_slice(&(l.out_width() as u32).to_le_bytes());
        out.extend_from_slice(&(l.in_width() as u32).to_le_bytes());
        out.push(l.norm.is_some() as u8);
    }
    for w in net.tensors() {
        w.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    for stats in net.layers.iter().filter_map(|l| l.norm.as_ref()) {
        stats.mean.iter().chain(&stats.var).for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CheckpointError::Malformed("non-finite value".into()));
        }
        Ok(v)
    }
}

fn decode_network(r: &mut Reader, expected_per: usize) -> Result<Network> {
    let n = r.u32()? as usize;
    let per = r.u32()? as usize;
    if n == 0 || per != expected_per {
        return Err(CheckpointError::Malformed(format!("{n} layers with {per} matrices each")));
    }
    let mut dims = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let (out, inp, norm) = (r.u32()? as usize, r.u32()? as usize, r.u8()?);
        if out == 0 || inp == 0 || norm > 1 {
            return Err(CheckpointError::Malformed(format!("layer {out}×{inp}, norm flag {norm}")));
        }
        dims.push((out, inp, norm == 1));
    }
    let mut layers: Vec<Layer> = Vec::with_capacity(n);
    for &(out, inp, _) in &dims {
        let weights = (0..per)
            .map(|_| Ok(Tensor::new(&[out, inp], r.f64s(out * inp)?).expect("sized")))
            .collect::<Result<_>>()?;
        layers.push(Layer { weights, norm: None });
    }
    for (l, &(out, _, norm)) in layers.iter_mut().zip(&dims) {
        if norm {
            let (mean, var) = (r.f64s(out)?, r.f64s(out)?);
            if var.iter().any(|&v| v < 0.0) {
                return Err(CheckpointError::Malformed("negative running variance".into()));
            }
            l.norm = Some(ChannelStats { mean, var });
        }
    }
    Ok(Network { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_like() -> (PrecoderParams, SchedulerParams) {
        let mut p = PrecoderParams::new(&[6, 5], 2, 1);
        p.net.layers[0].norm = Some(ChannelStats { mean: vec![0.5; 6], var: vec![2.0; 6] });
        let s = SchedulerParams::new(Variant::Sgnn, &[4], 3, 2);
        (p, s)
    }

    #[test]
    fn round_trip_is_exact() {
        let (p, s) = trained_like();
        for ck in [Checkpoint::Precoder(p), Checkpoint::Scheduler(s)] {
            let bytes = ck.encode();
            assert_eq!(&bytes[..4], b"WBNN");
            assert_eq!(Checkpoint::decode(&bytes).unwrap(), ck);
        }
        let n = Checkpoint::Scheduler(SchedulerParams::new(Variant::Ngnn, &[3, 3], 2, 0));
        assert_eq!(Checkpoint::decode(&n.encode()).unwrap(), n);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (p, _) = trained_like();
        let bytes = Checkpoint::Precoder(p).encode();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(Checkpoint::decode(&b), Err(CheckpointError::Magic)));
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(Checkpoint::decode(&b), Err(CheckpointError::Version(9))));
        let mut b = bytes.clone();
        b[8] = 7;
        assert!(matches!(Checkpoint::decode(&b), Err(CheckpointError::Tag(7))));
        let mut b = bytes.clone();
        b.push(0);
        assert!(matches!(Checkpoint::decode(&b), Err(CheckpointError::Trailing(1))));
        // N_RF that does not match the output width
        let mut b = bytes;
        b[9] = 3;
        assert!(matches!(Checkpoint::decode(&b), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn files_and_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let (p, s) = trained_like();
        let pp = dir.path().join("p.wbnn");
        save_precoder(&p, &pp).unwrap();
        assert_eq!(load_precoder(&pp).unwrap(), p);
        assert!(matches!(load_scheduler(&pp), Err(CheckpointError::Kind { .. })));
        let sp = dir.path().join("s.wbnn");
        save_scheduler(&s, &sp).unwrap();
        assert_eq!(load_scheduler(&sp).unwrap(), s);
        assert!(load_precoder(&dir.path().join("missing")).is_err());
    }
}
