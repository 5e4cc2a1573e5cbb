//! Link-level evaluation of precoders.
//!
//! The equivalent channel `w[i][j] = Σ_m h[i][m] ∗ s[j][m]` is the response
//! seen at user `i` for the stream aimed at user `j`, through the
//! un-normalized channel. User `i` receives
//!
//! ```text
//! y_i[k] = Σ_j Σ_l x_j[l] · w[i][j][k − l·spacing] + n_i[k]
//! ```
//!
//! and its SINR is the focused peak power over everything else it hears:
//!
//! ```text
//! SINR_i = |w[i][i][peak]|² / (Σ_{l ≠ peak} |w[i][i][l]|² + Σ_{j ≠ i} Σ_l |w[i][j][l]|² + σ²)
//! ```
//!
//! with `peak = L − 1`, the designed focusing tap. Every lag of the
//! equivalent channel counts, including lobes outside the ITRDMA residual
//! window.

use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, CirSet};
use crate::precoder::{tr_precoder, PrecoderSet};
use crate::signals::{accumulate_shifted_in_place, convolve, energy, ComplexSequence};
use crate::units::to_db;
use crate::Error;

/// `N × N` table of equivalent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannelSet {
    n_users: usize,
    // w[i][j] at i * N + j
    w: Vec<ComplexSequence>,
    peak_index: i64,
}

impl EquivalentChannelSet {
    /// `w[i][j]` given as nested rows.
    pub fn from_rows(rows: Vec<Vec<ComplexSequence>>, peak_index: i64) -> Result<Self, Error> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("equivalent channels must form a square table".into()));
        }
        Ok(Self {
            n_users: n,
            w: rows.into_iter().flatten().collect(),
            peak_index,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn peak_index(&self) -> i64 {
        self.peak_index
    }

    /// Field at user `i` from the precoder aimed at user `j`.
    pub fn w(&self, i: usize, j: usize) -> &ComplexSequence {
        &self.w[i * self.n_users + j]
    }

    /// `a·self + b·other`, entry by entry.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self, Error> {
        if self.n_users != other.n_users || self.peak_index != other.peak_index {
            return Err(Error::DimensionMismatch("cannot combine differently shaped equivalent channels".into()));
        }
        let w = self
            .w
            .iter()
            .zip(&other.w)
            .map(|(x, y)| {
                let mut out = x.scale(Complex64::new(a, 0.0));
                accumulate_shifted_in_place(&mut out, Complex64::new(b, 0.0), 0, y);
                out
            })
            .collect();
        Ok(Self {
            n_users: self.n_users,
            w,
            peak_index: self.peak_index,
        })
    }

    /// Signal, ISI and IUI powers at user `i`.
    pub fn powers(&self, i: usize) -> Result<LinkPowers, Error> {
        if i >= self.n_users {
            return Err(Error::DimensionMismatch(format!("user {i} out of range for N={}", self.n_users)));
        }
        let n = self.n_users;
        Ok(row_powers(&self.w[i * n..(i + 1) * n], i, self.peak_index))
    }
}

/// Powers at user `i` from its row `w[i][·]` of equivalent channels.
pub fn row_powers(row: &[ComplexSequence], i: usize, peak_index: i64) -> LinkPowers {
    let own = &row[i];
    let signal = own.at(peak_index).norm_sqr();
    let isi = energy(own) - signal;
    let iui = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, w)| energy(w))
        .sum();
    LinkPowers {
        signal,
        isi: isi.max(0.0),
        iui,
    }
}

/// Power split of one user's received field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPowers {
    pub signal: f64,
    pub isi: f64,
    pub iui: f64,
}

impl LinkPowers {
    pub fn interference(&self) -> f64 {
        self.isi + self.iui
    }

    pub fn sinr(&self, sigma: f64) -> f64 {
        self.signal / (self.interference() + sigma * sigma)
    }
}

fn check_dims(cirset: &CirSet, precoders: &PrecoderSet) -> Result<(), Error> {
    if cirset.n_users() != precoders.n_users()
        || cirset.n_antennas() != precoders.n_antennas()
        || cirset.n_taps() != precoders.n_taps()
    {
        return Err(Error::DimensionMismatch(format!(
            "channel is N={} M={} L={} but precoders are N={} M={} L={}",
            cirset.n_users(),
            cirset.n_antennas(),
            cirset.n_taps(),
            precoders.n_users(),
            precoders.n_antennas(),
            precoders.n_taps()
        )));
    }
    Ok(())
}

/// `w[i][j] = Σ_m h[i][m] ∗ s[j][m]` for one receiving user `i`.
pub fn equivalent_channel_row(cirset: &CirSet, precoders: &PrecoderSet, i: usize) -> Result<Vec<ComplexSequence>, Error> {
    check_dims(cirset, precoders)?;
    cirset.check_user(i)?;
    Ok((0..precoders.n_users())
        .map(|j| {
            let mut acc = ComplexSequence::empty();
            for (h, s) in cirset.user_cirs(i).iter().zip(precoders.user(j)) {
                accumulate_shifted_in_place(&mut acc, Complex64::new(1.0, 0.0), 0, &convolve(h, s));
            }
            acc
        })
        .collect())
}

/// Equivalent channels for every (receiver, stream) pair.
pub fn equivalent_channel(cirset: &CirSet, precoders: &PrecoderSet) -> Result<EquivalentChannelSet, Error> {
    check_dims(cirset, precoders)?;
    let rows = (0..cirset.n_users())
        .map(|i| equivalent_channel_row(cirset, precoders, i))
        .collect::<Result<Vec<_>, _>>()?;
    EquivalentChannelSet::from_rows(rows, cirset.n_taps() as i64 - 1)
}

/// Linear SINR of user `i`; `sigma = 0` gives the SIR.
pub fn sinr(eq: &EquivalentChannelSet, i: usize, sigma: f64) -> Result<f64, Error> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(eq.powers(i)?.sinr(sigma))
}

/// `|w[i][i][L − 1]|²` for the conventional TR precoder of user `i`: the
/// reference power that defines the operating SNR.
pub fn tr_reference_peak_power(cirset: &CirSet, i: usize) -> Result<f64, Error> {
    let s = tr_precoder(cirset, i)?;
    let focus = cirset.n_taps() as i64 - 1;
    let peak: Complex64 = cirset
        .user_cirs(i)
        .iter()
        .zip(&s)
        .flat_map(|(h, sm)| h.iter().map(move |(k, v)| v * sm.at(focus - k)))
        .sum();
    Ok(peak.norm_sqr())
}

/// Noise standard deviation giving `snr_db` against the TR reference peak of
/// user `i`.
pub fn sigma_for_snr(cirset: &CirSet, i: usize, snr_db: f64) -> Result<f64, Error> {
    let p = tr_reference_peak_power(cirset, i)?;
    Ok((p / crate::units::from_db(snr_db)).sqrt())
}

/// Symbol alphabets for the BER diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Bpsk,
    Qpsk,
}

impl FromStr for Constellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            _ => Err(Error::UnknownConstellation(s.to_string())),
        }
    }
}

impl Constellation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Self::Bpsk => 1,
            Self::Qpsk => 2,
        }
    }

    /// Unit-energy symbol for the low bits of `bits`.
    pub fn map(self, bits: u8) -> Complex64 {
        match self {
            Self::Bpsk => Complex64::new(if bits & 1 == 0 { 1.0 } else { -1.0 }, 0.0),
            Self::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                let re = if bits & 1 == 0 { a } else { -a };
                let im = if bits & 2 == 0 { a } else { -a };
                Complex64::new(re, im)
            }
        }
    }

    /// Nearest constellation point, as bits.
    pub fn slice(self, y: Complex64) -> u8 {
        match self {
            Self::Bpsk => u8::from(y.re < 0.0),
            Self::Qpsk => u8::from(y.re < 0.0) | (u8::from(y.im < 0.0) << 1),
        }
    }
}

/// `count` uniformly random symbols, deterministic in `seed`.
pub fn random_symbols(constellation: Constellation, count: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = (1u8 << constellation.bits_per_symbol()) - 1;
    (0..count).map(|_| constellation.map(rng.random::<u8>() & mask)).collect()
}

/// Superpose every user's symbol stream through the equivalent channels and
/// add circular complex Gaussian noise with `E|n|² = sigma²` per sample.
///
/// Symbol `l` of a stream is launched at tap `l·symbol_spacing`.
pub fn simulate_transmission(
    eq: &EquivalentChannelSet,
    symbols: &[Vec<Complex64>],
    sigma: f64,
    seed: u64,
    symbol_spacing: usize,
) -> Result<Vec<ComplexSequence>, Error> {
    if symbols.len() != eq.n_users {
        return Err(Error::DimensionMismatch(format!(
            "{} symbol streams for {} users",
            symbols.len(),
            eq.n_users
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if symbol_spacing == 0 {
        return Err(Error::InvalidParameter("symbol spacing must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(eq.n_users);
    for i in 0..eq.n_users {
        let mut y = ComplexSequence::empty();
        for (j, stream) in symbols.iter().enumerate() {
            if stream.is_empty() {
                continue;
            }
            // upsample, then filter through w[i][j]
            let mut up = vec![Complex64::new(0.0, 0.0); (stream.len() - 1) * symbol_spacing + 1];
            for (l, &x) in stream.iter().enumerate() {
                up[l * symbol_spacing] = x;
            }
            let tx = ComplexSequence::new(0, up);
            accumulate_shifted_in_place(&mut y, Complex64::new(1.0, 0.0), 0, &convolve(&tx, eq.w(i, j)));
        }
        if y.is_empty() {
            out.push(y);
            continue;
        }
        let start = y.start();
        let noisy = y
            .into_taps()
            .into_iter()
            .map(|v| if sigma > 0.0 { v + complex_gaussian(&mut rng, sigma * sigma) } else { v })
            .collect();
        out.push(ComplexSequence::new(start, noisy));
    }
    Ok(out)
}

/// Bit error rate of nearest-point slicing at taps
/// `peak_index + l·symbol_spacing` against the transmitted `reference`.
pub fn demodulate_ber(
    received: &ComplexSequence,
    reference: &[Complex64],
    constellation: Constellation,
    peak_index: i64,
    symbol_spacing: usize,
) -> Result<f64, Error> {
    if reference.is_empty() {
        return Err(Error::InvalidParameter("no reference symbols".into()));
    }
    let bits = constellation.bits_per_symbol();
    let mut errors = 0usize;
    for (l, &x) in reference.iter().enumerate() {
        let y = received.at(peak_index + (l * symbol_spacing) as i64);
        errors += (constellation.slice(y) ^ constellation.slice(x)).count_ones() as usize;
    }
    Ok(errors as f64 / (reference.len() * bits) as f64)
}

/// BER diagnostic settings for [`LinkReport::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerSetup {
    pub constellation: Constellation,
    pub symbols: usize,
    pub symbol_spacing: usize,
    pub seed: u64,
}

/// One CSV row: one user in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLink {
    pub scenario_id: String,
    pub user: usize,
    pub sir_db: f64,
    pub sinr_db: f64,
    pub sigma: f64,
    pub ber: Option<f64>,
    pub iterations: usize,
    pub displacement_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub rows: Vec<UserLink>,
    pub symbol_count: usize,
    /// Free-form echo of the configuration that produced the report.
    pub config: serde_json::Value,
}

pub const LINK_CSV_HEADER: &str = "scenario_id,user,sir_db,sinr_db,sigma,ber,iterations,displacement_m,speed_mps";

impl LinkReport {
    /// Per-user SIR/SINR (and BER when requested) for `precoders` on
    /// `cirset`, with a common noise level `sigma`.
    pub fn evaluate(
        scenario_id: &str,
        cirset: &CirSet,
        precoders: &PrecoderSet,
        sigma: f64,
        ber: Option<BerSetup>,
        config: serde_json::Value,
    ) -> Result<Self, Error> {
        let eq = equivalent_channel(cirset, precoders)?;
        let n = eq.n_users();
        let bers = match ber {
            Some(b) => {
                let streams: Vec<_> = (0..n)
                    .map(|j| random_symbols(b.constellation, b.symbols, b.seed.wrapping_add(j as u64)))
                    .collect();
                let rx = simulate_transmission(&eq, &streams, sigma, b.seed ^ 0x5eed_0fa0, b.symbol_spacing)?;
                (0..n)
                    .map(|i| demodulate_ber(&rx[i], &streams[i], b.constellation, eq.peak_index(), b.symbol_spacing).map(Some))
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => vec![None; n],
        };
        let rows = (0..n)
            .map(|i| {
                Ok(UserLink {
                    scenario_id: scenario_id.to_string(),
                    user: i,
                    sir_db: to_db(sinr(&eq, i, 0.0)?),
                    sinr_db: to_db(sinr(&eq, i, sigma)?),
                    sigma,
                    ber: bers[i],
                    iterations: precoders.iterations_used()[i],
                    displacement_m: 0.0,
                    speed_mps: 0.0,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(Self {
            rows,
            symbol_count: ber.map_or(0, |b| b.symbols),
            config,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{LINK_CSV_HEADER}\n");
        for r in &self.rows {
            let ber = r.ber.map(|b| format!("{b}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario_id, r.user, r.sir_db, r.sinr_db, r.sigma, ber, r.iterations, r.displacement_m, r.speed_mps
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("link report serialization")
    }
}
