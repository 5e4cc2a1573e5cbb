//! Precoder file format, a mirror of the CIR format with explicit start
//! offsets.
//!
//! Binary, little-endian: magic `"PRC1"`, version u32 = 1, N/M/L as u32,
//! kind u32 (0 = TR, 1 = ITRDMA), epsilon f64, n_max u64, then for each
//! target user: iterations_used u64 followed by M records of
//! `start i64, len u32, len × (f64 re, f64 im)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ItrdmaParams, PrecoderKind, PrecoderSet};
use crate::channel::format::{put_complex, Reader};
use crate::signals::ComplexSequence;
use crate::{Error, FormatError};

pub const PRECODER_MAGIC: [u8; 4] = *b"PRC1";
pub const PRECODER_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceJson {
    start: i64,
    taps: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrecoderSetJson {
    n_users: usize,
    n_antennas: usize,
    n_taps: usize,
    kind: PrecoderKind,
    epsilon: f64,
    n_max: usize,
    iterations_used: Vec<usize>,
    precoders: Vec<Vec<SequenceJson>>,
}

impl PrecoderSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&PRECODER_MAGIC);
        out.extend_from_slice(&PRECODER_FORMAT_VERSION.to_le_bytes());
        for v in [self.n_users(), self.n_antennas(), self.n_taps()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let kind: u32 = match self.kind {
            PrecoderKind::Tr => 0,
            PrecoderKind::Itrdma => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&self.params.epsilon.to_le_bytes());
        out.extend_from_slice(&(self.params.n_max as u64).to_le_bytes());
        for (seqs, &used) in self.precoders.iter().zip(&self.iterations_used) {
            out.extend_from_slice(&(used as u64).to_le_bytes());
            for s in seqs {
                out.extend_from_slice(&s.start().to_le_bytes());
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                for &v in s.taps() {
                    put_complex(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        r.magic(PRECODER_MAGIC)?;
        let version = r.u32("version")?;
        if version != PRECODER_FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let n = r.u32("dimensions")? as usize;
        let m = r.u32("dimensions")? as usize;
        let l = r.u32("dimensions")? as usize;
        let kind = match r.u32("metadata")? {
            0 => PrecoderKind::Tr,
            1 => PrecoderKind::Itrdma,
            k => return Err(FormatError::Invalid(format!("unknown precoder kind {k}")).into()),
        };
        let epsilon = r.f64("metadata")?;
        let n_max = r.i64("metadata")? as usize;
        let mut precoders = Vec::with_capacity(n);
        let mut used = Vec::with_capacity(n);
        for _ in 0..n {
            used.push(r.i64("precoders")? as usize);
            let mut seqs = Vec::with_capacity(m);
            for _ in 0..m {
                let start = r.i64("precoders")?;
                let len = r.u32("precoders")? as usize;
                if len.saturating_mul(16) > r.remaining() {
                    return Err(FormatError::Truncated { section: "precoders" }.into());
                }
                let taps = (0..len)
                    .map(|_| r.complex("precoders"))
                    .collect::<Result<Vec<_>, _>>()?;
                seqs.push(ComplexSequence::new(start, taps));
            }
            precoders.push(seqs);
        }
        if r.remaining() != 0 {
            return Err(FormatError::Invalid(format!("{} trailing bytes after precoders", r.remaining())).into());
        }
        PrecoderSet::from_parts(kind, l, precoders, used, ItrdmaParams { epsilon, n_max })
    }

    pub fn to_json(&self) -> String {
        let doc = PrecoderSetJson {
            n_users: self.n_users(),
            n_antennas: self.n_antennas(),
            n_taps: self.n_taps,
            kind: self.kind,
            epsilon: self.params.epsilon,
            n_max: self.params.n_max,
            iterations_used: self.iterations_used.clone(),
            precoders: self
                .precoders
                .iter()
                .map(|seqs| {
                    seqs.iter()
                        .map(|s| SequenceJson {
                            start: s.start(),
                            taps: s.taps().iter().map(|v| [v.re, v.im]).collect(),
                        })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("precoder json serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let doc: PrecoderSetJson = serde_json::from_str(text).map_err(FormatError::from)?;
        if doc.precoders.len() != doc.n_users || doc.precoders.iter().any(|p| p.len() != doc.n_antennas) {
            return Err(Error::DimensionMismatch(format!(
                "precoder json declares N={} M={} but holds a different shape",
                doc.n_users, doc.n_antennas
            )));
        }
        let precoders = doc
            .precoders
            .into_iter()
            .map(|seqs| {
                seqs.into_iter()
                    .map(|s| ComplexSequence::new(s.start, s.taps.into_iter().map(|[re, im]| Complex64::new(re, im)).collect()))
                    .collect()
            })
            .collect();
        PrecoderSet::from_parts(
            doc.kind,
            doc.n_taps,
            precoders,
            doc.iterations_used,
            ItrdmaParams {
                epsilon: doc.epsilon,
                n_max: doc.n_max,
            },
        )
    }

    pub fn from_any(bytes: &[u8]) -> Result<Self, Error> {
        let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
        if bytes.starts_with(&PRECODER_MAGIC) || first != Some(&b'{') {
            Self::from_bytes(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| FormatError::Invalid(format!("json is not utf-8: {e}")))?;
            Self::from_json(text)
        }
    }

    pub fn store(&self, path: impl AsRef<std::path::Path>) -> Result<(), Error> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, Error> {
        Self::from_any(&std::fs::read(path)?)
    }
}
