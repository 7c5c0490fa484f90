//! Binary checkpoint container.
//!
//! Little-endian throughout: the 8-byte magic `SOFTTPR\0`, a `u32` format
//! version, then sections, each a 4-byte tag, a `u64` payload length and the
//! payload. Sections, in order:
//!
//! - `CONF` the run config as TOML text
//! - `ITER` completed iterations (`u64`)
//! - `ROLE` role mode, embeddings and unbinders
//! - `PARM` every parameter (the filler codebook included) with Adam state
//! - `RNG ` seed and word position of the training stream
//!
//! Reals are stored as raw IEEE-754 bits, so a load/save cycle is exact.

use std::path::Path;

use softtpr_core::autodiff::{ParamStore, Parameter};
use softtpr_core::model::SoftTprAutoencoder;
use softtpr_core::tpr::{RoleMode, RoleSpace};
use softtpr_core::{DenseMatrix, SeededRng};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: [u8; 8] = *b"SOFTTPR\0";
pub const VERSION: u32 = 1;
const TAGS: [&[u8; 4]; 5] = [b"CONF", b"ITER", b"ROLE", b"PARM", b"RNG "];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: SoftTprAutoencoder,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn matrix(&mut self, m: &DenseMatrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for v in m.as_slice() {
            self.0.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Parse<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Parse<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Parse<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Parse<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Parse<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn u128(&mut self) -> Parse<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
    fn len(&mut self) -> Parse<usize> {
        usize::try_from(self.u64()?).map_err(|_| "length overflow".to_string())
    }
    fn bytes(&mut self) -> Parse<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn matrix(&mut self) -> Parse<DenseMatrix> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows.checked_mul(cols).ok_or("matrix size overflow")?;
        let raw = self.take(n.checked_mul(8).ok_or("matrix size overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        DenseMatrix::new(rows, cols, data).map_err(|e| e.to_string())
    }
    fn done(&self) -> Parse<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err("trailing bytes".into())
        }
    }
}

fn mode_code(mode: RoleMode) -> u8 {
    match mode {
        RoleMode::SemiOrthogonal => 0,
        RoleMode::Identity => 1,
        RoleMode::General => 2,
    }
}

fn mode_from(code: u8) -> Parse<RoleMode> {
    match code {
        0 => Ok(RoleMode::SemiOrthogonal),
        1 => Ok(RoleMode::Identity),
        2 => Ok(RoleMode::General),
        c => Err(format!("unknown role mode {c}")),
    }
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: SoftTprAutoencoder) -> Self {
        Self { config, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.model;
        let mut sections: Vec<Writer> = Vec::new();

        let mut w = Writer::default();
        w.0.extend_from_slice(self.config.to_toml_string()?.as_bytes());
        sections.push(w);

        let mut w = Writer::default();
        w.u64(model.iteration as u64);
        sections.push(w);

        let mut w = Writer::default();
        let roles = model.roles();
        w.u8(mode_code(roles.mode()));
        w.matrix(roles.embeddings());
        w.matrix(roles.unbinders());
        sections.push(w);

        let mut w = Writer::default();
        w.u64(model.params.len() as u64);
        for p in model.params.iter() {
            w.bytes(p.name.as_bytes());
            w.matrix(&p.value);
            w.matrix(&p.grad);
            w.matrix(&p.first_moment);
            w.matrix(&p.second_moment);
            w.u64(p.step);
        }
        sections.push(w);

        let mut w = Writer::default();
        let (seed, word_pos) = model.rng.state();
        w.u64(seed);
        w.u128(word_pos);
        sections.push(w);

        let mut out = Writer::default();
        out.0.extend_from_slice(&MAGIC);
        out.0.extend_from_slice(&VERSION.to_le_bytes());
        for (tag, s) in TAGS.iter().zip(sections) {
            out.0.extend_from_slice(*tag);
            out.bytes(&s.0);
        }
        Ok(out.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err("not a softtpr checkpoint".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let mut payloads = Vec::with_capacity(TAGS.len());
        for tag in TAGS {
            let got = r.take(4)?;
            if got != tag {
                return Err(format!(
                    "expected section {}, found {}",
                    String::from_utf8_lossy(tag),
                    String::from_utf8_lossy(got)
                ));
            }
            payloads.push(r.bytes()?);
        }
        r.done()?;

        let text = std::str::from_utf8(payloads[0]).map_err(|e| e.to_string())?;
        let config = RunConfig::from_toml_str(text).map_err(|e| e.to_string())?;

        let mut r = Reader::new(payloads[1]);
        let iteration = r.len()?;
        r.done()?;

        let mut r = Reader::new(payloads[2]);
        let mode = mode_from(r.u8()?)?;
        let emb = r.matrix()?;
        let unb = r.matrix()?;
        r.done()?;
        let roles = RoleSpace::from_parts(mode, emb, unb).map_err(|e| e.to_string())?;

        let mut r = Reader::new(payloads[3]);
        let count = r.len()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| e.to_string())?;
            let value = r.matrix()?;
            let mut p = Parameter::new(name, value);
            p.grad = r.matrix()?;
            p.first_moment = r.matrix()?;
            p.second_moment = r.matrix()?;
            p.step = r.u64()?;
            if [&p.grad, &p.first_moment, &p.second_moment]
                .iter()
                .any(|m| m.shape() != p.value.shape())
            {
                return Err(format!("parameter {} has inconsistent shapes", p.name));
            }
            params.push(p);
        }
        r.done()?;

        let mut r = Reader::new(payloads[4]);
        let rng = SeededRng::from_state(r.u64()?, r.u128()?);
        r.done()?;

        let model = SoftTprAutoencoder::from_parts(
            config.model_config(),
            config.data.obs_dim,
            roles,
            params,
            iteration,
            rng,
        )
        .map_err(|e| e.to_string())?;
        Ok(Self { config, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        Self::from_bytes(&bytes).map_err(|msg| CliError::format(path, msg))
    }
}
