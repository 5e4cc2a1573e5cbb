//! CIR file format.
//!
//! Binary, little-endian:
//!
//! | field              | type       |
//! |--------------------|------------|
//! | magic `"CIR1"`     | 4 bytes    |
//! | version (= 1)      | u32        |
//! | N, M, L            | 3 × u32    |
//! | tap_interval       | f64, s     |
//! | carrier_wavelength | f64, m     |
//! | taps               | N·M·L × (f64 re, f64 im), user-major, antenna-middle, tap-minor |
//!
//! The JSON mirror carries the same field names with taps as
//! `cirs[user][antenna][tap] = [re, im]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::CirSet;
use crate::{Error, FormatError};

pub const CIR_MAGIC: [u8; 4] = *b"CIR1";
pub const CIR_FORMAT_VERSION: u32 = 1;

/// Cursor over a little-endian byte buffer that reports which section ran
/// out of data.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub(crate) fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated { section });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    pub(crate) fn i64(&mut self, section: &'static str) -> Result<i64, FormatError> {
        Ok(i64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, section: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub(crate) fn complex(&mut self, section: &'static str) -> Result<Complex64, FormatError> {
        let re = self.f64(section)?;
        let im = self.f64(section)?;
        Ok(Complex64::new(re, im))
    }
}

pub(crate) fn put_complex(out: &mut Vec<u8>, v: Complex64) {
    out.extend_from_slice(&v.re.to_le_bytes());
    out.extend_from_slice(&v.im.to_le_bytes());
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CirSetJson {
    n_users: usize,
    n_antennas: usize,
    n_taps: usize,
    tap_interval: f64,
    carrier_wavelength: f64,
    cirs: Vec<Vec<Vec<[f64; 2]>>>,
}

fn dims_to_u32(v: usize, what: &str) -> u32 {
    u32::try_from(v).unwrap_or_else(|_| panic!("{what} = {v} does not fit the u32 header field"))
}

impl CirSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n_users * self.n_antennas * self.n_taps;
        let mut out = Vec::with_capacity(36 + 16 * n);
        out.extend_from_slice(&CIR_MAGIC);
        out.extend_from_slice(&CIR_FORMAT_VERSION.to_le_bytes());
        for (v, what) in [(self.n_users, "N"), (self.n_antennas, "M"), (self.n_taps, "L")] {
            out.extend_from_slice(&dims_to_u32(v, what).to_le_bytes());
        }
        out.extend_from_slice(&self.tap_interval.to_le_bytes());
        out.extend_from_slice(&self.carrier_wavelength.to_le_bytes());
        for v in self.flat_taps() {
            put_complex(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        r.magic(CIR_MAGIC)?;
        let version = r.u32("version")?;
        if version != CIR_FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let n = r.u32("dimensions")? as usize;
        let m = r.u32("dimensions")? as usize;
        let l = r.u32("dimensions")? as usize;
        let tap_interval = r.f64("metadata")?;
        let carrier_wavelength = r.f64("metadata")?;
        let expected = n
            .checked_mul(m)
            .and_then(|x| x.checked_mul(l))
            .ok_or_else(|| FormatError::Invalid(format!("dimensions {n}x{m}x{l} overflow")))?;
        let rest = r.remaining();
        if !rest.is_multiple_of(16) {
            return Err(FormatError::Truncated { section: "taps" }.into());
        }
        if rest / 16 != expected {
            return Err(FormatError::TapCount {
                expected,
                found: rest / 16,
            }
            .into());
        }
        let taps = (0..expected)
            .map(|_| r.complex("taps"))
            .collect::<Result<Vec<_>, _>>()?;
        CirSet::from_flat(n, m, l, taps, tap_interval, carrier_wavelength)
    }

    pub fn to_json(&self) -> String {
        let cirs = (0..self.n_users)
            .map(|i| {
                self.user_cirs(i)
                    .iter()
                    .map(|h| h.taps().iter().map(|v| [v.re, v.im]).collect())
                    .collect()
            })
            .collect();
        let doc = CirSetJson {
            n_users: self.n_users,
            n_antennas: self.n_antennas,
            n_taps: self.n_taps,
            tap_interval: self.tap_interval,
            carrier_wavelength: self.carrier_wavelength,
            cirs,
        };
        serde_json::to_string_pretty(&doc).expect("CIR json serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let doc: CirSetJson = serde_json::from_str(text).map_err(FormatError::from)?;
        let found: usize = doc.cirs.iter().flatten().map(Vec::len).sum();
        let expected = doc.n_users * doc.n_antennas * doc.n_taps;
        let shape_ok = doc.cirs.len() == doc.n_users
            && doc
                .cirs
                .iter()
                .all(|u| u.len() == doc.n_antennas && u.iter().all(|h| h.len() == doc.n_taps));
        if !shape_ok {
            return Err(FormatError::TapCount { expected, found }.into());
        }
        let taps = doc
            .cirs
            .into_iter()
            .flatten()
            .flatten()
            .map(|[re, im]| Complex64::new(re, im))
            .collect();
        CirSet::from_flat(
            doc.n_users,
            doc.n_antennas,
            doc.n_taps,
            taps,
            doc.tap_interval,
            doc.carrier_wavelength,
        )
    }

    /// Binary if the content starts with the magic, JSON if it starts with
    /// `{`.
    pub fn from_any(bytes: &[u8]) -> Result<Self, Error> {
        let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
        if bytes.starts_with(&CIR_MAGIC) || first != Some(&b'{') {
            Self::from_bytes(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| FormatError::Invalid(format!("json is not utf-8: {e}")))?;
            Self::from_json(text)
        }
    }
}
