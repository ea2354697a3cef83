//! Binary checkpoint format.
//!
//! ```text
//! "CFOF" | u32 version | [u8; 32] architecture hash
//! section*  := [u8; 4] tag | u64 payload length | payload
//! "STAT"    feature mean and std
//! "PARM"    named model arrays (parameters and running statistics)
//! "OPTM"    optimizer moments and step counter
//! "META"    best validation loss and string attributes
//! "END "    empty terminator
//! ```
//!
//! All integers and floats are little-endian; arrays are `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::FeatureStats;
use crate::error::{NnError, Result};
use crate::model::{standard_architecture_hash, CfoNet, NamedArray, ParamGroup, DEFAULT_DROPOUT};
use crate::optim::{AdamW, AdamWConfig};

pub const MAGIC: &[u8; 4] = b"CFOF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn from_adamw(opt: &AdamW) -> Self {
        Self { lr: opt.lr, step: opt.step, m: opt.m.clone(), v: opt.v.clone() }
    }

    pub fn to_adamw(&self, cfg: AdamWConfig) -> AdamW {
        AdamW { cfg, lr: self.lr, step: self.step, m: self.m.clone(), v: self.v.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_hash: [u8; 32],
    pub state: Vec<NamedArray<f32>>,
    pub optimizer: Option<OptimizerState>,
    pub stats: FeatureStats,
    pub best_val_loss: f64,
    pub attributes: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(net: &CfoNet<f32>, stats: FeatureStats, optimizer: Option<OptimizerState>, best_val_loss: f64) -> Self {
        Self {
            arch_hash: net.architecture_hash(),
            state: net.state(),
            optimizer,
            stats,
            best_val_loss,
            attributes: BTreeMap::new(),
        }
    }

    /// Standard network carrying this checkpoint's arrays.
    pub fn model(&self) -> Result<CfoNet<f32>> {
        let mut net = CfoNet::<f32>::zeroed(DEFAULT_DROPOUT)?;
        if net.architecture_hash() != self.arch_hash {
            return Err(NnError::ArchitectureMismatch);
        }
        net.load_state(&self.state)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.arch_hash);

        let mut stat = Writer::default();
        stat.u32(self.stats.mean.len() as u32);
        stat.f32s(&self.stats.mean);
        stat.f32s(&self.stats.std);
        section(&mut out, b"STAT", stat.0);

        let mut parm = Writer::default();
        parm.u32(self.state.len() as u32);
        for arr in &self.state {
            parm.str(&arr.name);
            parm.0.push(match arr.group {
                ParamGroup::Conv => 0,
                ParamGroup::Fc => 1,
            });
            parm.u32(arr.shape.len() as u32);
            arr.shape.iter().for_each(|&d| parm.u64(d as u64));
            parm.f32s(&arr.data);
        }
        section(&mut out, b"PARM", parm.0);

        let mut optm = Writer::default();
        match &self.optimizer {
            None => optm.0.push(0),
            Some(o) => {
                optm.0.push(1);
                optm.f64(o.lr);
                optm.u64(o.step);
                optm.u32(o.m.len() as u32);
                for (m, v) in o.m.iter().zip(&o.v) {
                    optm.u64(m.len() as u64);
                    optm.f32s(m);
                    optm.f32s(v);
                }
            }
        }
        section(&mut out, b"OPTM", optm.0);

        let mut meta = Writer::default();
        meta.f64(self.best_val_loss);
        meta.u32(self.attributes.len() as u32);
        for (k, v) in &self.attributes {
            meta.str(k);
            meta.str(v);
        }
        section(&mut out, b"META", meta.0);
        section(&mut out, b"END ", Vec::new());
        out
    }

    /// Parses and checks the header against `expected_hash`.
    pub fn from_bytes(bytes: &[u8], expected_hash: &[u8; 32]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let arch_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if &arch_hash != expected_hash {
            return Err(NnError::ArchitectureMismatch);
        }
        let (mut stats, mut state, mut optimizer, mut meta) = (None, None, None, None);
        loop {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(r.u64()?).map_err(|_| malformed("section length"))?;
            let mut s = Reader { buf: r.take(len)?, pos: 0 };
            match &tag {
                b"STAT" => {
                    let n = s.u32()? as usize;
                    stats = Some(FeatureStats { mean: s.f32s(n)?, std: s.f32s(n)? });
                }
                b"PARM" => {
                    let count = s.u32()? as usize;
                    let mut arrays = Vec::with_capacity(count.min(1024));
                    for _ in 0..count {
                        let name = s.str()?;
                        let group = match s.take(1)?[0] {
                            0 => ParamGroup::Conv,
                            1 => ParamGroup::Fc,
                            g => return Err(malformed(&format!("group tag {g}"))),
                        };
                        let ndim = s.u32()? as usize;
                        let shape = (0..ndim).map(|_| s.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| malformed("shape"))?;
                        arrays.push(NamedArray { name, group, shape, data: s.f32s(n)? });
                    }
                    state = Some(arrays);
                }
                b"OPTM" => {
                    optimizer = Some(match s.take(1)?[0] {
                        0 => None,
                        _ => {
                            let lr = s.f64()?;
                            let step = s.u64()?;
                            let count = s.u32()? as usize;
                            let (mut m, mut v) = (Vec::new(), Vec::new());
                            for _ in 0..count {
                                let n = usize::try_from(s.u64()?).map_err(|_| malformed("moment length"))?;
                                m.push(s.f32s(n)?);
                                v.push(s.f32s(n)?);
                            }
                            Some(OptimizerState { lr, step, m, v })
                        }
                    });
                }
                b"META" => {
                    let best = s.f64()?;
                    let n = s.u32()? as usize;
                    let mut attrs = BTreeMap::new();
                    for _ in 0..n {
                        let k = s.str()?;
                        attrs.insert(k, s.str()?);
                    }
                    meta = Some((best, attrs));
                }
                b"END " => break,
                other => return Err(malformed(&format!("unknown section {:?}", String::from_utf8_lossy(other)))),
            }
            if s.pos != s.buf.len() {
                return Err(malformed("trailing bytes in section"));
            }
        }
        if r.pos != bytes.len() {
            return Err(malformed("data after end marker"));
        }
        let (best_val_loss, attributes) = meta.ok_or_else(|| malformed("missing META"))?;
        Ok(Self {
            arch_hash,
            state: state.ok_or_else(|| malformed("missing PARM"))?,
            optimizer: optimizer.ok_or_else(|| malformed("missing OPTM"))?,
            stats: stats.ok_or_else(|| malformed("missing STAT"))?,
            best_val_loss,
            attributes,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

/// Loads a checkpoint of the standard architecture.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?, &standard_architecture_hash())
}

fn malformed(what: &str) -> NnError {
    NnError::Malformed(what.to_string())
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: Vec<u8>) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| malformed("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| malformed("array length"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("non-UTF-8 string"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tensor::Act;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Checkpoint, CfoNet<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = CfoNet::<f32>::new(DEFAULT_DROPOUT, &mut rng).unwrap();
        // One training-mode pass so running statistics differ from defaults.
        let x = Act::new(1, 4, 64, (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        net.forward(x, Mode::Train, &mut rng).unwrap();
        net.clear_caches();
        let stats = FeatureStats { mean: vec![0.5; 64], std: vec![2.0; 64] };
        let opt = OptimizerState { lr: 1e-3, step: 7, m: vec![vec![0.25; 3]], v: vec![vec![0.5; 3]] };
        let mut ckpt = Checkpoint::from_model(&net, stats, Some(opt), 0.0123);
        ckpt.attributes.insert("symbol_len".into(), "128".into());
        (ckpt, net)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (ckpt, mut net) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cfof");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let mut reloaded = back.model().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Act::new(1, 3, 320, (0..960).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let a = net.predict(x.clone()).unwrap();
        let b = reloaded.predict(x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn corrupt_headers_are_refused() {
        let (ckpt, _) = sample();
        let bytes = ckpt.to_bytes();
        let hash = standard_architecture_hash();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, &hash), Err(NnError::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad, &hash), Err(NnError::VersionMismatch { found: 9, .. })));

        let mut other = hash;
        other[0] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes, &other), Err(NnError::ArchitectureMismatch)));

        for cut in [10, 60, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut], &hash), Err(NnError::Malformed(_))), "cut {cut}");
        }
    }
}
