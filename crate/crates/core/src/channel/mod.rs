//! Banks of channel impulse responses.
//!
//! A [`CirSet`] holds the `N × M` CIRs `h[i][m]` between every transmit
//! antenna `m` and every single-antenna user `i`, each exactly `L` taps long
//! and starting at tap 0.
//!
//! Synthetic banks draw every tap independently from a circularly-symmetric
//! complex Gaussian whose variance follows an exponential power-delay
//! profile `P[k] = exp(−k / decay_taps)`. A flat profile (ideal Rayleigh
//! channel) is `decay_taps = f64::INFINITY`.
//!
//! Receiver movement is modeled per tap as
//!
//! ```text
//! h_d = ρ(d)·h_0 + sqrt(1 − ρ(d)²)·g
//! ```
//!
//! where `g` is an independent draw from the same per-tap distribution and
//! `ρ(d) = sin(2πd/λ) / (2πd/λ)` is the diffuse-field spatial correlation.

pub(crate) mod format;

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::signals::{energy, ComplexSequence};
use crate::Error;

pub use format::{CIR_FORMAT_VERSION, CIR_MAGIC};

/// `1 / B` for the 100 MHz sounding bandwidth.
pub const DEFAULT_TAP_INTERVAL: f64 = 1e-8;
/// Free-space wavelength at a 2 GHz carrier, rounded.
pub const DEFAULT_CARRIER_WAVELENGTH: f64 = 0.15;

/// Parameters of a synthetic channel bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub n_users: usize,
    pub n_antennas: usize,
    pub n_taps: usize,
    /// Exponential power-delay-profile time constant, in taps.
    pub decay_taps: f64,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_users == 0 || self.n_antennas == 0 || self.n_taps == 0 {
            return Err(Error::InvalidSpec(format!(
                "counts must be at least 1 (N={}, M={}, L={})",
                self.n_users, self.n_antennas, self.n_taps
            )));
        }
        if !(self.decay_taps > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "decay_taps must be positive, got {}",
                self.decay_taps
            )));
        }
        Ok(())
    }

    /// Expected tap power `exp(−k / decay_taps)` for `k in 0..L`.
    pub fn power_profile(&self) -> Vec<f64> {
        (0..self.n_taps)
            .map(|k| (-(k as f64) / self.decay_taps).exp())
            .collect()
    }
}

/// `N × M` bank of length-`L` channel impulse responses.
#[derive(Debug, Clone)]
pub struct CirSet {
    n_users: usize,
    n_antennas: usize,
    n_taps: usize,
    // user-major, antenna-minor
    cirs: Vec<ComplexSequence>,
    tap_interval: f64,
    carrier_wavelength: f64,
    // per-tap variance of the generating distribution; None for loaded data
    profile: Option<Vec<f64>>,
}

/// Equality compares dimensions, taps and metadata. The variance profile is
/// provenance, not channel content, and is ignored.
impl PartialEq for CirSet {
    fn eq(&self, other: &Self) -> bool {
        self.n_users == other.n_users
            && self.n_antennas == other.n_antennas
            && self.n_taps == other.n_taps
            && self.tap_interval.to_bits() == other.tap_interval.to_bits()
            && self.carrier_wavelength.to_bits() == other.carrier_wavelength.to_bits()
            && self.cirs.iter().zip(&other.cirs).all(|(a, b)| {
                a.taps()
                    .iter()
                    .zip(b.taps())
                    .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
            })
    }
}

impl CirSet {
    /// Build from a flat user-major, antenna-middle, tap-minor tap list.
    pub fn from_flat(
        n_users: usize,
        n_antennas: usize,
        n_taps: usize,
        taps: Vec<Complex64>,
        tap_interval: f64,
        carrier_wavelength: f64,
    ) -> Result<Self, Error> {
        if n_users == 0 || n_antennas == 0 || n_taps == 0 {
            return Err(Error::DimensionMismatch(format!(
                "N, M and L must be at least 1 (got {n_users}, {n_antennas}, {n_taps})"
            )));
        }
        let expected = n_users * n_antennas * n_taps;
        if taps.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} taps for N={n_users} M={n_antennas} L={n_taps}, got {}",
                taps.len()
            )));
        }
        if !(tap_interval > 0.0) || !(carrier_wavelength > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tap_interval ({tap_interval}) and carrier_wavelength ({carrier_wavelength}) must be positive"
            )));
        }
        let cirs = taps
            .chunks(n_taps)
            .map(|c| ComplexSequence::new(0, c.to_vec()))
            .collect();
        Ok(Self {
            n_users,
            n_antennas,
            n_taps,
            cirs,
            tap_interval,
            carrier_wavelength,
            profile: None,
        })
    }

    /// Build from `cirs[user][antenna][tap]` with default sampling metadata.
    pub fn from_nested(cirs: Vec<Vec<Vec<Complex64>>>) -> Result<Self, Error> {
        let n_users = cirs.len();
        let n_antennas = cirs.first().map_or(0, Vec::len);
        let n_taps = cirs.first().and_then(|u| u.first()).map_or(0, Vec::len);
        for (i, user) in cirs.iter().enumerate() {
            if user.len() != n_antennas || user.iter().any(|h| h.len() != n_taps) {
                return Err(Error::DimensionMismatch(format!(
                    "user {i} does not have {n_antennas} CIRs of {n_taps} taps"
                )));
            }
        }
        let flat = cirs.into_iter().flatten().flatten().collect();
        Self::from_flat(
            n_users,
            n_antennas,
            n_taps,
            flat,
            DEFAULT_TAP_INTERVAL,
            DEFAULT_CARRIER_WAVELENGTH,
        )
    }

    pub fn with_metadata(mut self, tap_interval: f64, carrier_wavelength: f64) -> Result<Self, Error> {
        if !(tap_interval > 0.0) || !(carrier_wavelength > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tap_interval ({tap_interval}) and carrier_wavelength ({carrier_wavelength}) must be positive"
            )));
        }
        self.tap_interval = tap_interval;
        self.carrier_wavelength = carrier_wavelength;
        Ok(self)
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

    pub fn tap_interval(&self) -> f64 {
        self.tap_interval
    }

    pub fn carrier_wavelength(&self) -> f64 {
        self.carrier_wavelength
    }

    /// Per-tap variance of the generating distribution, if known.
    pub fn variance_profile(&self) -> Option<&[f64]> {
        self.profile.as_deref()
    }

    pub fn cir(&self, user: usize, antenna: usize) -> &ComplexSequence {
        &self.cirs[user * self.n_antennas + antenna]
    }

    pub fn user_cirs(&self, user: usize) -> &[ComplexSequence] {
        &self.cirs[user * self.n_antennas..(user + 1) * self.n_antennas]
    }

    /// All taps in file order (user-major, antenna-middle, tap-minor).
    pub fn flat_taps(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.cirs.iter().flat_map(|h| h.taps().iter().copied())
    }

    /// `Σ_m Σ_k |h[i][m][k]|²`.
    pub fn user_energy(&self, user: usize) -> f64 {
        self.user_cirs(user).iter().map(energy).sum()
    }

    pub fn check_user(&self, user: usize) -> Result<(), Error> {
        if user >= self.n_users {
            return Err(Error::DimensionMismatch(format!(
                "user {user} out of range for N={}",
                self.n_users
            )));
        }
        Ok(())
    }

    fn map_taps(&self, mut f: impl FnMut(usize, usize, usize, Complex64) -> Complex64) -> Self {
        let cirs = self
            .cirs
            .iter()
            .enumerate()
            .map(|(n, h)| {
                let (i, m) = (n / self.n_antennas, n % self.n_antennas);
                ComplexSequence::new(0, h.iter().map(|(k, v)| f(i, m, k as usize, v)).collect())
            })
            .collect();
        Self {
            cirs,
            ..self.clone()
        }
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn store_json(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Load a binary or JSON CIR file; the format is detected from content.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let bytes = std::fs::read(path)?;
        Self::from_any(&bytes)
    }
}

/// Draw a synthetic bank. Deterministic in `spec` (including the seed).
pub fn generate_synthetic(spec: &ChannelSpec) -> Result<CirSet, Error> {
    spec.validate()?;
    let profile = spec.power_profile();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = spec.n_users * spec.n_antennas * spec.n_taps;
    let taps = (0..count)
        .map(|n| complex_gaussian(&mut rng, profile[n % spec.n_taps]))
        .collect();
    let mut set = CirSet::from_flat(
        spec.n_users,
        spec.n_antennas,
        spec.n_taps,
        taps,
        DEFAULT_TAP_INTERVAL,
        DEFAULT_CARRIER_WAVELENGTH,
    )?;
    set.profile = Some(profile);
    Ok(set)
}

/// Circularly-symmetric complex Gaussian with `E|z|² = variance`.
pub(crate) fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Joint normalization of one user's bank across all antennas:
/// `h̃[m][k] = h[m][k] / sqrt(Σ_m Σ_k |h[m][k]|²)`.
pub fn normalize_user(cirset: &CirSet, user: usize) -> Result<Vec<ComplexSequence>, Error> {
    cirset.check_user(user)?;
    let e = cirset.user_energy(user);
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::ZeroEnergyUser { user });
    }
    let inv = Complex64::new(1.0 / e.sqrt(), 0.0);
    Ok(cirset.user_cirs(user).iter().map(|h| h.scale(inv)).collect())
}

/// Normalized banks for every user, `[user][antenna]`.
pub fn normalized_bank(cirset: &CirSet) -> Result<Vec<Vec<ComplexSequence>>, Error> {
    (0..cirset.n_users())
        .map(|i| normalize_user(cirset, i))
        .collect()
}

/// Diffuse-field spatial correlation `sin(2πd/λ) / (2πd/λ)`.
pub fn spatial_correlation(d: f64, wavelength: f64) -> Result<f64, Error> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::InvalidParameter(format!("displacement must be >= 0, got {d}")));
    }
    if !(wavelength > 0.0) || !wavelength.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let x = 2.0 * PI * d / wavelength;
    Ok(if x == 0.0 { 1.0 } else { x.sin() / x })
}

/// Receiver displacement applied by [`displaced_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    /// Distance moved, meters.
    pub distance: f64,
    /// Stretches the coherence length: the correlation is evaluated with
    /// an effective wavelength `λ · coherence_multiplier`.
    pub coherence_multiplier: f64,
    /// Only this user moves; `None` moves every user.
    pub user: Option<usize>,
}

impl Displacement {
    pub fn new(distance: f64) -> Self {
        Self {
            distance,
            coherence_multiplier: 1.0,
            user: None,
        }
    }

    pub fn correlation(&self, wavelength: f64) -> Result<f64, Error> {
        if !(self.coherence_multiplier > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coherence multiplier must be positive, got {}",
                self.coherence_multiplier
            )));
        }
        spatial_correlation(self.distance, wavelength * self.coherence_multiplier)
    }
}

/// Every user's bank after moving all receivers by `d` meters.
pub fn displaced(cirset: &CirSet, d: f64, seed: u64) -> Result<CirSet, Error> {
    displaced_with(cirset, &Displacement::new(d), seed)
}

pub fn displaced_with(cirset: &CirSet, disp: &Displacement, seed: u64) -> Result<CirSet, Error> {
    let rho = disp.correlation(cirset.carrier_wavelength)?;
    if let Some(u) = disp.user {
        cirset.check_user(u)?;
    }
    let g = innovation(cirset, seed)?;
    Ok(mix(cirset, &g, rho, disp.user))
}

/// The independent redraw `g` used by [`displaced`] for this seed: same
/// dimensions and per-tap variance as `cirset`, independent taps.
pub fn innovation(cirset: &CirSet, seed: u64) -> Result<CirSet, Error> {
    let profile = cirset.profile.as_ref().ok_or(Error::MissingVarianceProfile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cirset.map_taps(|_, _, k, _| complex_gaussian(&mut rng, profile[k])))
}

/// `ρ·h_0 + sqrt(1 − ρ²)·g`, applied to `user` only or to every user.
pub fn mix(h0: &CirSet, g: &CirSet, rho: f64, user: Option<usize>) -> CirSet {
    if rho == 1.0 {
        return h0.clone();
    }
    let a = (1.0 - rho * rho).max(0.0).sqrt();
    let stride = h0.n_antennas * h0.n_taps;
    let gt: Vec<Complex64> = g.flat_taps().collect();
    h0.map_taps(|i, m, k, v| {
        if user.is_some_and(|u| u != i) {
            v
        } else {
            v * rho + gt[i * stride + m * h0.n_taps + k] * a
        }
    })
}
