//! Conventional TR and iterative TR (ITRDMA) precoders.
//!
//! Lags are measured relative to the designed focusing tap: a precoder for
//! target user `i0` applied through user `i`'s normalized channel produces a
//! field `f_i(τ)` whose `τ = 0` sample sits at absolute tap `L − 1`.
//!
//! The conventional TR precoder is the conjugate time reversal of the
//! jointly normalized CIRs, `s[m][k] = conj(h̃[i0][m][L − 1 − k])`. Its field
//! at user `i` is the normalized correlation `R̃[i][i0](τ)`, which peaks at
//! exactly 1 for `i = i0, τ = 0` and leaves side lobes everywhere else.
//!
//! ITRDMA tracks the residual `Δ_i(τ) = f_i(τ) − δ(τ)·[i = i0]` over the
//! window `τ ∈ [−(L − 1), L − 1]` and repeatedly cancels its largest entry:
//! the TR precoder of the selected user `î`, shifted by the selected lag
//! `τ̂` and scaled by `−Δ_î(τ̂)`, is added to the precoder. By linearity the
//! residual changes by `−Δ_î(τ̂)·R̃[i][î](τ − τ̂)`, which zeroes the selected
//! entry because `R̃[î][î](0) = 1`.

mod format;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{normalize_user, CirSet};
use crate::signals::{accumulate_shifted_in_place, convolve, crosscorr, energy, time_reverse_conj, ComplexSequence};
use crate::Error;

pub use format::{PRECODER_FORMAT_VERSION, PRECODER_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    Tr,
    Itrdma,
}

/// Stopping rule of the ITRDMA loop: iterate while `max |Δ| > epsilon` and
/// fewer than `n_max` iterations have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItrdmaParams {
    pub epsilon: f64,
    pub n_max: usize,
}

impl Default for ItrdmaParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            n_max: 50,
        }
    }
}

impl ItrdmaParams {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Normalized CIRs, their TR templates and every pairwise normalized
/// correlation, shared by all ITRDMA runs on one channel.
#[derive(Debug, Clone)]
pub struct CorrelationBank {
    n_users: usize,
    n_antennas: usize,
    n_taps: usize,
    normalized: Vec<Vec<ComplexSequence>>,
    templates: Vec<Vec<ComplexSequence>>,
    // R̃[j][i] at j * N + i
    correlations: Vec<ComplexSequence>,
}

impl CorrelationBank {
    pub fn new(cirset: &CirSet) -> Result<Self, Error> {
        let n = cirset.n_users();
        let l = cirset.n_taps() as i64;
        let normalized = (0..n)
            .map(|i| normalize_user(cirset, i))
            .collect::<Result<Vec<_>, _>>()?;
        let templates = normalized
            .iter()
            .map(|hs| hs.iter().map(|h| time_reverse_conj(h, l - 1)).collect())
            .collect();
        let mut correlations = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let mut acc = ComplexSequence::zeros(-(l - 1), 2 * l as usize - 1);
                for (hj, hi) in normalized[j].iter().zip(&normalized[i]) {
                    accumulate_shifted_in_place(&mut acc, Complex64::new(1.0, 0.0), 0, &crosscorr(hj, hi));
                }
                correlations.push(acc);
            }
        }
        Ok(Self {
            n_users: n,
            n_antennas: cirset.n_antennas(),
            n_taps: cirset.n_taps(),
            normalized,
            templates,
            correlations,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    /// `h̃[user][m]` for every antenna.
    pub fn normalized(&self, user: usize) -> &[ComplexSequence] {
        &self.normalized[user]
    }

    /// `R̃[j][i](τ) = Σ_m crosscorr(h̃[j][m], h̃[i][m])(τ)`, support
    /// `[−(L − 1), L − 1]`.
    pub fn correlation(&self, j: usize, i: usize) -> &ComplexSequence {
        &self.correlations[j * self.n_users + i]
    }

    /// Conventional TR precoder for `target` before the final energy
    /// normalization (already unit energy up to rounding).
    pub fn tr_template(&self, target: usize) -> &[ComplexSequence] {
        &self.templates[target]
    }
}

/// `N × N` table of normalized correlations, `table[j][i] = R̃[j][i]`.
pub fn normalized_correlation_bank(cirset: &CirSet) -> Result<Vec<Vec<ComplexSequence>>, Error> {
    let bank = CorrelationBank::new(cirset)?;
    Ok((0..bank.n_users)
        .map(|j| (0..bank.n_users).map(|i| bank.correlation(j, i).clone()).collect())
        .collect())
}

/// Scale so that `Σ_m energy(s[m]) = 1`.
fn finalize(mut seqs: Vec<ComplexSequence>) -> Result<Vec<ComplexSequence>, Error> {
    let e: f64 = seqs.iter().map(energy).sum();
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::InvalidParameter(format!("precoder energy {e} cannot be normalized")));
    }
    let inv = Complex64::new(1.0 / e.sqrt(), 0.0);
    for s in &mut seqs {
        *s = s.scale(inv);
    }
    Ok(seqs)
}

/// Conventional TR precoder for user `target`, one sequence per antenna
/// with support `[0, L − 1]`.
pub fn tr_precoder(cirset: &CirSet, target: usize) -> Result<Vec<ComplexSequence>, Error> {
    let l = cirset.n_taps() as i64;
    let normalized = normalize_user(cirset, target)?;
    finalize(normalized.iter().map(|h| time_reverse_conj(h, l - 1)).collect())
}

/// One cancellation step of the ITRDMA loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 1-based iteration count after this step.
    pub iteration: usize,
    pub user: usize,
    pub lag: i64,
    /// `Δ_î(τ̂)` just before it was cancelled.
    pub value: Complex64,
    /// `max |Δ|` over the window after the update.
    pub max_abs_after: f64,
}

/// Residual field `Δ_i(τ)` over `τ ∈ [−(L − 1), L − 1]`, plus the trace of
/// every cancellation made so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid {
    n_users: usize,
    n_taps: usize,
    // row-major by user, column τ + L − 1
    delta: Vec<Complex64>,
    trace: Vec<TraceEntry>,
}

impl ResidualGrid {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn lags(&self) -> std::ops::RangeInclusive<i64> {
        let h = self.n_taps as i64 - 1;
        -h..=h
    }

    pub fn width(&self) -> usize {
        2 * self.n_taps - 1
    }

    pub fn get(&self, user: usize, lag: i64) -> Complex64 {
        self.delta[self.index(user, lag)]
    }

    pub fn set(&mut self, user: usize, lag: i64, value: Complex64) {
        let n = self.index(user, lag);
        self.delta[n] = value;
    }

    pub fn row(&self, user: usize) -> &[Complex64] {
        let w = self.width();
        &self.delta[user * w..(user + 1) * w]
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    fn index(&self, user: usize, lag: i64) -> usize {
        assert!(user < self.n_users && self.lags().contains(&lag), "({user}, {lag}) outside residual window");
        user * self.width() + (lag + self.n_taps as i64 - 1) as usize
    }

    /// Largest `|Δ|` with its position. Ties go to the smallest lag, then the
    /// smallest user.
    pub fn argmax(&self) -> (usize, i64, f64) {
        let w = self.width();
        let mut best = (0usize, 0usize, -1.0f64);
        for col in 0..w {
            for user in 0..self.n_users {
                let m = self.delta[user * w + col].norm_sqr();
                if m > best.2 {
                    best = (user, col, m);
                }
            }
        }
        (best.0, best.1 as i64 - (self.n_taps as i64 - 1), best.2.sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.delta.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max).sqrt()
    }

    /// Trace as CSV with columns `n,i_hat,tau_hat,re,im,max_abs_delta_after`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("n,i_hat,tau_hat,re,im,max_abs_delta_after\n");
        for t in &self.trace {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{:e}\n",
                t.iteration, t.user, t.lag, t.value.re, t.value.im, t.max_abs_after
            ));
        }
        out
    }
}

/// Stepwise ITRDMA state for one target user.
///
/// Holds the precoder *before* its final energy normalization so that the
/// residual can be checked against a freshly recomputed field at any point.
#[derive(Debug, Clone)]
pub struct ItrdmaSolver<'a> {
    bank: &'a CorrelationBank,
    target: usize,
    precoder: Vec<ComplexSequence>,
    grid: ResidualGrid,
}

impl<'a> ItrdmaSolver<'a> {
    pub fn new(bank: &'a CorrelationBank, target: usize) -> Result<Self, Error> {
        if target >= bank.n_users {
            return Err(Error::DimensionMismatch(format!(
                "target user {target} out of range for N={}",
                bank.n_users
            )));
        }
        let l = bank.n_taps as i64;
        let mut grid = ResidualGrid {
            n_users: bank.n_users,
            n_taps: bank.n_taps,
            delta: Vec::with_capacity(bank.n_users * (2 * bank.n_taps - 1)),
            trace: Vec::new(),
        };
        for i in 0..bank.n_users {
            let r = bank.correlation(i, target);
            grid.delta.extend((-(l - 1)..l).map(|tau| r.at(tau)));
        }
        let v = grid.get(target, 0);
        grid.set(target, 0, v - 1.0);
        Ok(Self {
            bank,
            target,
            precoder: bank.tr_template(target).to_vec(),
            grid,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn iterations(&self) -> usize {
        self.grid.trace.len()
    }

    /// Current precoder, not yet energy-normalized.
    pub fn precoder(&self) -> &[ComplexSequence] {
        &self.precoder
    }

    pub fn residual(&self) -> &ResidualGrid {
        &self.grid
    }

    /// Cancel the current largest residual entry. Returns `None` when the
    /// grid is exactly zero.
    pub fn step(&mut self) -> Option<&TraceEntry> {
        let (sel_user, sel_lag, m) = self.grid.argmax();
        if m <= 0.0 {
            return None;
        }
        let c = self.grid.get(sel_user, sel_lag);
        for (s, t) in self.precoder.iter_mut().zip(self.bank.tr_template(sel_user)) {
            accumulate_shifted_in_place(s, -c, sel_lag, t);
        }
        let h = self.bank.n_taps as i64 - 1;
        let width = self.grid.width();
        for i in 0..self.bank.n_users {
            let r = self.bank.correlation(i, sel_user);
            // Δ_i(τ) −= c·R̃[i][î](τ − τ̂) for τ in the window
            let lo = (-h).max(r.start() + sel_lag);
            let hi = h.min(r.end() - 1 + sel_lag);
            if lo > hi {
                continue;
            }
            let row = &mut self.grid.delta[i * width..(i + 1) * width];
            let dst = &mut row[(lo + h) as usize..=(hi + h) as usize];
            let src = &r.taps()[(lo - sel_lag - r.start()) as usize..];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d -= c * v;
            }
        }
        let entry = TraceEntry {
            iteration: self.grid.trace.len() + 1,
            user: sel_user,
            lag: sel_lag,
            value: c,
            max_abs_after: self.grid.max_abs(),
        };
        self.grid.trace.push(entry);
        self.grid.trace.last()
    }

    /// Step until `max |Δ| <= epsilon` or `n_max` total iterations.
    pub fn run(&mut self, params: ItrdmaParams) -> Result<(), Error> {
        params.validate()?;
        while self.iterations() < params.n_max && self.grid.max_abs() > params.epsilon {
            if self.step().is_none() {
                break;
            }
        }
        Ok(())
    }

    /// Energy-normalized copy of the current precoder.
    pub fn normalized_precoder(&self) -> Result<Vec<ComplexSequence>, Error> {
        finalize(self.precoder.clone())
    }

    pub fn finish(self) -> Result<(Vec<ComplexSequence>, ResidualGrid), Error> {
        Ok((finalize(self.precoder)?, self.grid))
    }
}

/// Run the ITRDMA loop for user `target`; returns the energy-normalized
/// precoder and the final residual grid with its trace.
pub fn itrdma_precoder(
    cirset: &CirSet,
    target: usize,
    params: ItrdmaParams,
) -> Result<(Vec<ComplexSequence>, ResidualGrid), Error> {
    params.validate()?;
    cirset.check_user(target)?;
    let bank = CorrelationBank::new(cirset)?;
    let mut solver = ItrdmaSolver::new(&bank, target)?;
    solver.run(params)?;
    solver.finish()
}

/// Largest mismatch between a tracked residual and the field recomputed from
/// scratch: `max_{i,τ} |Δ_i(τ) − (f_i(τ) − δ(τ)·[i = target])|`, where
/// `f_i = Σ_m h̃[i][m] ∗ s[m]` read at absolute tap `τ + L − 1`.
///
/// `precoder` must be the pre-normalization state the residual belongs to.
pub fn residual_consistency_check(
    cirset: &CirSet,
    target: usize,
    precoder: &[ComplexSequence],
    delta: &ResidualGrid,
) -> Result<f64, Error> {
    if precoder.len() != cirset.n_antennas() || delta.n_users != cirset.n_users() || delta.n_taps != cirset.n_taps() {
        return Err(Error::DimensionMismatch("precoder/residual do not match the channel".into()));
    }
    let l = cirset.n_taps() as i64;
    let mut worst = 0.0f64;
    for i in 0..cirset.n_users() {
        let hn = normalize_user(cirset, i)?;
        let mut field = ComplexSequence::empty();
        for (h, s) in hn.iter().zip(precoder) {
            field = field.add(&convolve(h, s));
        }
        for tau in delta.lags() {
            let target_value = if i == target && tau == 0 { 1.0 } else { 0.0 };
            let want = field.at(tau + l - 1) - target_value;
            worst = worst.max((delta.get(i, tau) - want).norm());
        }
    }
    Ok(worst)
}

/// Per-user precoders for every target user, `[target][antenna]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    kind: PrecoderKind,
    n_taps: usize,
    precoders: Vec<Vec<ComplexSequence>>,
    iterations_used: Vec<usize>,
    params: ItrdmaParams,
}

impl PrecoderSet {
    /// Assemble from already-computed sequences.
    pub fn from_parts(
        kind: PrecoderKind,
        n_taps: usize,
        precoders: Vec<Vec<ComplexSequence>>,
        iterations_used: Vec<usize>,
        params: ItrdmaParams,
    ) -> Result<Self, Error> {
        let m = precoders.first().map_or(0, Vec::len);
        if precoders.is_empty() || m == 0 || precoders.iter().any(|p| p.len() != m) {
            return Err(Error::DimensionMismatch("every target needs the same non-zero antenna count".into()));
        }
        if iterations_used.len() != precoders.len() {
            return Err(Error::DimensionMismatch("one iteration count per target user".into()));
        }
        Ok(Self {
            kind,
            n_taps,
            precoders,
            iterations_used,
            params,
        })
    }

    pub fn tr(cirset: &CirSet) -> Result<Self, Error> {
        let precoders = (0..cirset.n_users())
            .map(|i| tr_precoder(cirset, i))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(
            PrecoderKind::Tr,
            cirset.n_taps(),
            precoders,
            vec![0; cirset.n_users()],
            ItrdmaParams { epsilon: 0.0, n_max: 0 },
        )
    }

    pub fn itrdma(cirset: &CirSet, params: ItrdmaParams) -> Result<Self, Error> {
        Ok(Self::itrdma_with_residuals(cirset, params)?.0)
    }

    /// ITRDMA precoders plus the final residual grid of every target user.
    pub fn itrdma_with_residuals(cirset: &CirSet, params: ItrdmaParams) -> Result<(Self, Vec<ResidualGrid>), Error> {
        params.validate()?;
        let bank = CorrelationBank::new(cirset)?;
        Self::itrdma_from_bank(&bank, params)
    }

    pub fn itrdma_from_bank(bank: &CorrelationBank, params: ItrdmaParams) -> Result<(Self, Vec<ResidualGrid>), Error> {
        params.validate()?;
        let mut precoders = Vec::with_capacity(bank.n_users);
        let mut grids = Vec::with_capacity(bank.n_users);
        for target in 0..bank.n_users {
            let mut solver = ItrdmaSolver::new(bank, target)?;
            solver.run(params)?;
            let (p, g) = solver.finish()?;
            precoders.push(p);
            grids.push(g);
        }
        let used = grids.iter().map(|g| g.trace.len()).collect();
        let set = Self::from_parts(PrecoderKind::Itrdma, bank.n_taps, precoders, used, params)?;
        Ok((set, grids))
    }

    pub fn kind(&self) -> PrecoderKind {
        self.kind
    }

    pub fn n_users(&self) -> usize {
        self.precoders.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.precoders[0].len()
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn params(&self) -> ItrdmaParams {
        self.params
    }

    pub fn iterations_used(&self) -> &[usize] {
        &self.iterations_used
    }

    /// Per-antenna sequences of the precoder aimed at `target`.
    pub fn user(&self, target: usize) -> &[ComplexSequence] {
        &self.precoders[target]
    }

    /// Multiply every sequence of one target's precoder by `c`.
    pub fn scaled_user(&self, target: usize, c: Complex64) -> Self {
        let mut out = self.clone();
        for s in &mut out.precoders[target] {
            *s = s.scale(c);
        }
        out
    }

    /// Largest sample-wise difference to another set with the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.precoders
            .iter()
            .flatten()
            .zip(other.precoders.iter().flatten())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_synthetic, ChannelSpec};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn synth(n: usize, m: usize, l: usize, seed: u64) -> CirSet {
        generate_synthetic(&ChannelSpec {
            n_users: n,
            n_antennas: m,
            n_taps: l,
            decay_taps: l as f64 / 4.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn correlation_bank_single_user_unit_peak() {
        let set = synth(1, 3, 12, 4);
        let t = normalized_correlation_bank(&set).unwrap();
        assert!((t[0][0].at(0) - 1.0).norm() < 1e-12);
        assert_eq!(t[0][0].start(), -11);
        assert_eq!(t[0][0].len(), 23);
    }

    #[test]
    fn orthogonal_single_tap_users() {
        // h_0 = δ@0, h_1 = δ@5, M = 1, L = 6.
        let mut u0 = vec![c(0.0, 0.0); 6];
        let mut u1 = vec![c(0.0, 0.0); 6];
        u0[0] = c(1.0, 0.0);
        u1[5] = c(1.0, 0.0);
        let set = CirSet::from_nested(vec![vec![u0], vec![u1]]).unwrap();
        let t = normalized_correlation_bank(&set).unwrap();
        // R̃[0][1](τ) = Σ_k h0[k]·conj(h1[k − τ]) is nonzero only at k = 0, k − τ = 5.
        assert_eq!(t[0][1].at(-5), c(1.0, 0.0));
        assert_eq!(t[0][1].at(0), c(0.0, 0.0));
        assert!((t[0][1].max_abs() - 1.0).abs() < 1e-15);
        assert_eq!(t[1][0].at(5), c(1.0, 0.0));
    }

    #[test]
    fn correlation_bank_hermitian() {
        let set = synth(3, 2, 10, 8);
        let t = normalized_correlation_bank(&set).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                for tau in -9..=9 {
                    assert!((t[j][i].at(-tau) - t[i][j].at(tau).conj()).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn tr_examples() {
        let mut h = vec![c(0.0, 0.0); 4];
        h[0] = c(1.0, 0.0);
        let set = CirSet::from_nested(vec![vec![h]]).unwrap();
        let s = tr_precoder(&set, 0).unwrap();
        assert!(s[0].approx_eq(&ComplexSequence::delta(3), 0.0));
        assert_eq!((s[0].start(), s[0].len()), (0, 4));

        let set = CirSet::from_nested(vec![vec![vec![c(1.0, 0.0), c(0.0, 1.0)]]]).unwrap();
        let s = tr_precoder(&set, 0).unwrap();
        let want = ComplexSequence::new(0, vec![c(0.0, -1.0), c(1.0, 0.0)]).scale(c(0.5f64.sqrt(), 0.0));
        assert!(s[0].approx_eq(&want, 1e-15));
    }

    #[test]
    fn tr_field_peaks_at_focus_real_positive() {
        let set = synth(2, 4, 16, 2);
        for i in 0..2 {
            let s = tr_precoder(&set, i).unwrap();
            assert!((s.iter().map(energy).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.iter().all(|x| x.start() == 0 && x.len() == 16));
            let mut field = ComplexSequence::empty();
            for (h, sm) in set.user_cirs(i).iter().zip(&s) {
                field = field.add(&convolve(h, sm));
            }
            let (k, v) = crate::signals::peak(&field).unwrap();
            assert_eq!(k, 15);
            assert!(v.re > 0.0 && v.im.abs() < 1e-12 * v.re);
        }
    }

    #[test]
    fn zero_iterations_is_tr() {
        let set = synth(2, 3, 10, 6);
        let (s, grid) = itrdma_precoder(&set, 1, ItrdmaParams { epsilon: 0.0, n_max: 0 }).unwrap();
        assert_eq!(s, tr_precoder(&set, 1).unwrap());
        assert!(grid.trace().is_empty());
        let a = PrecoderSet::tr(&set).unwrap();
        let b = PrecoderSet::itrdma(&set, ItrdmaParams { epsilon: 0.0, n_max: 0 }).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.0);
    }

    #[test]
    fn perfect_channel_needs_no_iterations() {
        let mut h = vec![c(0.0, 0.0); 5];
        h[0] = c(1.0, 0.0);
        let set = CirSet::from_nested(vec![vec![h.clone()]]).unwrap();
        let (s, grid) = itrdma_precoder(&set, 0, ItrdmaParams { epsilon: 0.0, n_max: 10 }).unwrap();
        assert_eq!(grid.max_abs(), 0.0);
        assert!(grid.trace().is_empty());
        assert!(s[0].approx_eq(&ComplexSequence::delta(4), 0.0));

        // a complex single-tap gain leaves only rounding-level residue
        h[0] = c(0.3, -0.2);
        let set = CirSet::from_nested(vec![vec![h]]).unwrap();
        let (s, grid) = itrdma_precoder(&set, 0, ItrdmaParams::default()).unwrap();
        assert!(grid.trace().is_empty());
        let phase = c(0.3, 0.2).scale(1.0 / c(0.3, 0.2).norm());
        assert!(s[0].approx_eq(&ComplexSequence::delta(4).scale(phase), 1e-15));
    }

    /// Brute force: rebuild the full field by convolution from the
    /// pre-normalization precoder.
    fn brute_field(hn: &[ComplexSequence], s: &[ComplexSequence]) -> ComplexSequence {
        let mut f = ComplexSequence::empty();
        for (h, sm) in hn.iter().zip(s) {
            f = f.add(&convolve(h, sm));
        }
        f
    }

    #[test]
    fn two_tap_single_iteration_against_brute_force() {
        // h̃ = [a, b], |a|² + |b|² = 1: Δ(−1) = a·conj(b)... here R̃(τ) = Σ_k h̃[k]·conj(h̃[k − τ]),
        // so R̃(1) = b·conj(a), R̃(−1) = a·conj(b), equal magnitudes: tie goes to τ = −1.
        let (a, b) = (c(0.6, 0.0), c(0.0, 0.8));
        let set = CirSet::from_nested(vec![vec![vec![a, b]]]).unwrap();
        let bank = CorrelationBank::new(&set).unwrap();
        let mut solver = ItrdmaSolver::new(&bank, 0).unwrap();
        let g = solver.residual();
        assert!((g.get(0, -1) - a * b.conj()).norm() < 1e-15);
        assert!((g.get(0, 1) - b * a.conj()).norm() < 1e-15);
        assert!(g.get(0, 0).norm() < 1e-15);

        let entry = solver.step().unwrap().clone();
        assert_eq!((entry.user, entry.lag), (0, -1));
        let f = brute_field(bank.normalized(0), solver.precoder());
        // brute-force field at the cancelled lag is zero, focus stays at 1
        assert!(f.at(-1 + 1).norm() < 1e-15);
        for tau in -1..=1 {
            let target = if tau == 0 { 1.0 } else { 0.0 };
            assert!((solver.residual().get(0, tau) - (f.at(tau + 1) - target)).norm() < 1e-15);
        }
    }

    #[test]
    fn residual_tracks_recomputed_field() {
        let set = synth(2, 3, 16, 12);
        let bank = CorrelationBank::new(&set).unwrap();
        for target in 0..2 {
            let mut solver = ItrdmaSolver::new(&bank, target).unwrap();
            assert!(residual_consistency_check(&set, target, solver.precoder(), solver.residual()).unwrap() < 1e-12);
            for _ in 0..30 {
                let before = solver.residual().clone();
                let (u, lag, m) = before.argmax();
                let e = solver.step().unwrap().clone();
                assert_eq!((e.user, e.lag), (u, lag));
                assert!((e.value.norm() - m).abs() < 1e-15);
                assert!(solver.residual().get(u, lag).norm() <= 1e-12);
                assert_eq!(e.max_abs_after, solver.residual().max_abs());
                let err = residual_consistency_check(&set, target, solver.precoder(), solver.residual()).unwrap();
                assert!(err < 1e-10, "err {err}");
            }
        }
    }

    #[test]
    fn corrupted_residual_is_detected() {
        let set = synth(2, 2, 8, 1);
        let bank = CorrelationBank::new(&set).unwrap();
        let mut solver = ItrdmaSolver::new(&bank, 0).unwrap();
        for _ in 0..5 {
            solver.step();
        }
        let mut grid = solver.residual().clone();
        let v = grid.get(1, 3);
        grid.set(1, 3, v + c(0.25, 0.0));
        let err = residual_consistency_check(&set, 0, solver.precoder(), &grid).unwrap();
        assert!((err - 0.25).abs() < 1e-10, "err {err}");
    }

    #[test]
    fn stopping_rules() {
        let set = synth(2, 2, 12, 3);
        let (_, g) = itrdma_precoder(&set, 0, ItrdmaParams { epsilon: 0.0, n_max: 17 }).unwrap();
        assert_eq!(g.trace().len(), 17);
        let (_, g) = itrdma_precoder(&set, 0, ItrdmaParams { epsilon: 0.05, n_max: 10_000 }).unwrap();
        assert!(g.max_abs() <= 0.05);
        let n = g.trace().len();
        assert!(n > 0 && n < 10_000);
        assert!(g.trace()[n - 2].max_abs_after > 0.05);
        assert!(itrdma_precoder(&set, 0, ItrdmaParams { epsilon: -1.0, n_max: 1 }).is_err());
        assert!(itrdma_precoder(&set, 0, ItrdmaParams { epsilon: f64::NAN, n_max: 1 }).is_err());
        assert!(itrdma_precoder(&set, 5, ItrdmaParams::default()).is_err());
    }

    #[test]
    fn precoder_support_and_energy() {
        let set = synth(2, 3, 10, 21);
        let (p, _) = PrecoderSet::itrdma_with_residuals(&set, ItrdmaParams { epsilon: 0.0, n_max: 200 }).unwrap();
        for i in 0..2 {
            let e: f64 = p.user(i).iter().map(energy).sum();
            assert!((e - 1.0).abs() < 1e-12);
            for s in p.user(i) {
                assert!(s.start() >= -9 && s.end() - 1 <= 18);
            }
        }
        assert_eq!(p.iterations_used(), &[200, 200]);
    }

    #[test]
    fn deterministic_traces() {
        let set = synth(2, 2, 12, 30);
        let a = itrdma_precoder(&set, 0, ItrdmaParams { epsilon: 0.0, n_max: 40 }).unwrap();
        let b = itrdma_precoder(&set, 0, ItrdmaParams { epsilon: 0.0, n_max: 40 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_csv_columns() {
        let set = synth(2, 2, 6, 30);
        let (_, g) = itrdma_precoder(&set, 0, ItrdmaParams { epsilon: 0.0, n_max: 3 }).unwrap();
        let csv = g.trace_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "n,i_hat,tau_hat,re,im,max_abs_delta_after");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
    }
}
