//! Offset-aware complex sequence algebra.
//!
//! A [`ComplexSequence`] is a finite discrete-time signal that starts at an
//! arbitrary (possibly negative) integer tap index. Every quantity in the
//! simulator (channel impulse responses, precoders, correlation functions,
//! equivalent channels) is one of these, so the operations here are the
//! substrate for everything else.
//!
//! Correlation uses the peak-at-zero-lag convention
//!
//! ```text
//! crosscorr(a, b)[τ] = Σ_k a[k] · conj(b[k − τ])
//! ```
//!
//! so that `crosscorr(a, a)[0] == energy(a)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::Error;

/// A finite complex-valued signal with an explicit start index.
///
/// Samples outside `[start, start + len)` are implicitly zero. The empty
/// sequence is canonicalised to `start == 0`.
///
/// `PartialEq` compares representations exactly; use
/// [`ComplexSequence::max_abs_diff`] or [`ComplexSequence::approx_eq`] for
/// value equality that ignores zero padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSequence {
    start: i64,
    taps: Vec<Complex64>,
}

impl Default for ComplexSequence {
    fn default() -> Self {
        Self::empty()
    }
}

impl ComplexSequence {
    pub fn new(start: i64, taps: Vec<Complex64>) -> Self {
        if taps.is_empty() {
            Self::empty()
        } else {
            Self { start, taps }
        }
    }

    pub fn empty() -> Self {
        Self {
            start: 0,
            taps: Vec::new(),
        }
    }

    /// Unit impulse at absolute index `at`.
    pub fn delta(at: i64) -> Self {
        Self::new(at, vec![Complex64::new(1.0, 0.0)])
    }

    /// All-zero sequence covering `[start, start + len)`.
    pub fn zeros(start: i64, len: usize) -> Self {
        Self::new(start, vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn from_real(start: i64, taps: &[f64]) -> Self {
        Self::new(start, taps.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// One past the last stored index.
    pub fn end(&self) -> i64 {
        self.start + self.taps.len() as i64
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<Complex64> {
        self.taps
    }

    /// Sample at absolute index `k`, zero outside the stored support.
    pub fn at(&self, k: i64) -> Complex64 {
        if k < self.start || k >= self.end() {
            Complex64::new(0.0, 0.0)
        } else {
            self.taps[(k - self.start) as usize]
        }
    }

    /// Iterate `(absolute index, sample)` pairs over the stored support.
    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.taps
            .iter()
            .enumerate()
            .map(move |(n, &v)| (self.start + n as i64, v))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self::new(self.start, self.taps.iter().map(|&v| v * c).collect())
    }

    /// Same samples, moved `by` taps later.
    pub fn shifted(&self, by: i64) -> Self {
        if self.is_empty() {
            return Self::empty();
        }
        Self {
            start: self.start + by,
            taps: self.taps.clone(),
        }
    }

    /// Sample-wise sum with support equal to the union of both supports.
    pub fn add(&self, other: &Self) -> Self {
        accumulate_shifted(self, Complex64::new(1.0, 0.0), 0, other)
    }

    /// Largest `|self[k] - other[k]|` over the union of supports.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let (lo, hi) = union_bounds(self, other);
        (lo..hi)
            .map(|k| (self.at(k) - other.at(k)).norm())
            .fold(0.0, f64::max)
    }

    /// Value equality under zero padding, to an absolute tolerance.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    pub fn max_abs(&self) -> f64 {
        self.taps.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn union_bounds(a: &ComplexSequence, b: &ComplexSequence) -> (i64, i64) {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => (0, 0),
        (true, false) => (b.start, b.end()),
        (false, true) => (a.start, a.end()),
        (false, false) => (a.start.min(b.start), a.end().max(b.end())),
    }
}

/// Linear convolution: `result[k] = Σ_j a[j]·b[k − j]`.
pub fn convolve(a: &ComplexSequence, b: &ComplexSequence) -> ComplexSequence {
    if a.is_empty() || b.is_empty() {
        return ComplexSequence::empty();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (n, &x) in a.taps.iter().enumerate() {
        for (dst, &y) in out[n..].iter_mut().zip(&b.taps) {
            *dst += x * y;
        }
    }
    ComplexSequence::new(a.start + b.start, out)
}

/// Cross-correlation `result[τ] = Σ_k a[k]·conj(b[k − τ])`.
///
/// The support runs from `a.start − (b.end − 1)` to `a.end − 1 − b.start`.
pub fn crosscorr(a: &ComplexSequence, b: &ComplexSequence) -> ComplexSequence {
    if a.is_empty() || b.is_empty() {
        return ComplexSequence::empty();
    }
    let lb = b.len();
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + lb - 1];
    // result index r corresponds to τ = first + r; with k = a.start + n and
    // k − τ = b.start + q, r = n + (lb − 1 − q).
    for (n, &x) in a.taps.iter().enumerate() {
        for (q, &y) in b.taps.iter().enumerate() {
            out[n + lb - 1 - q] += x * y.conj();
        }
    }
    ComplexSequence::new(a.start - (b.end() - 1), out)
}

/// Total energy `Σ |a[k]|²`.
pub fn energy(a: &ComplexSequence) -> f64 {
    a.taps.iter().map(|v| v.norm_sqr()).sum()
}

/// `result[k] = acc[k] + c·b[k − shift]` over the union of supports.
pub fn accumulate_shifted(
    acc: &ComplexSequence,
    c: Complex64,
    shift: i64,
    b: &ComplexSequence,
) -> ComplexSequence {
    let mut out = acc.clone();
    accumulate_shifted_in_place(&mut out, c, shift, b);
    out
}

/// In-place form of [`accumulate_shifted`]; grows `acc` only when needed.
pub fn accumulate_shifted_in_place(
    acc: &mut ComplexSequence,
    c: Complex64,
    shift: i64,
    b: &ComplexSequence,
) {
    if b.is_empty() {
        return;
    }
    let lo = b.start + shift;
    let hi = b.end() + shift;
    if acc.is_empty() {
        acc.start = lo;
        acc.taps = vec![Complex64::new(0.0, 0.0); b.len()];
    } else if lo < acc.start || hi > acc.end() {
        let new_start = lo.min(acc.start);
        let new_end = hi.max(acc.end());
        let mut taps = vec![Complex64::new(0.0, 0.0); (new_end - new_start) as usize];
        let off = (acc.start - new_start) as usize;
        taps[off..off + acc.taps.len()].copy_from_slice(&acc.taps);
        acc.start = new_start;
        acc.taps = taps;
    }
    let off = (lo - acc.start) as usize;
    for (dst, &y) in acc.taps[off..].iter_mut().zip(&b.taps) {
        *dst += c * y;
    }
}

/// Index and value of the largest-magnitude sample; ties go to the smallest
/// index.
pub fn peak(a: &ComplexSequence) -> Result<(i64, Complex64), Error> {
    let mut best: Option<(i64, Complex64, f64)> = None;
    for (k, v) in a.iter() {
        let m = v.norm_sqr();
        match best {
            Some((_, _, bm)) if m <= bm => {}
            _ => best = Some((k, v, m)),
        }
    }
    best.map(|(k, v, _)| (k, v)).ok_or(Error::EmptySequence)
}

/// Conjugate time reversal about `pivot`: `result[k] = conj(a[pivot − k])`.
pub fn time_reverse_conj(a: &ComplexSequence, pivot: i64) -> ComplexSequence {
    if a.is_empty() {
        return ComplexSequence::empty();
    }
    let taps = a.taps.iter().rev().map(|v| v.conj()).collect();
    ComplexSequence::new(pivot - (a.end() - 1), taps)
}
