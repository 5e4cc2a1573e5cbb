//! Seeded sweeps over synthetic channels: SIR versus iteration count,
//! SINR versus receiver displacement and speed, focusing profiles and the
//! half-strength speed table.
//!
//! Every sweep evaluates one independent job per seed and reduces the
//! results in seed order, so the output does not depend on the thread
//! count. Ensemble means are taken over linear power ratios and converted
//! to dB afterwards; the spread column is the sample standard deviation of
//! the per-seed dB values. Each CSV starts with `#` lines carrying the
//! config hash and these conventions.
//!
//! Mobility sweeps move only the target user. Its bank becomes
//! `ρ(d)·h_0 + sqrt(1 − ρ²)·g` with one innovation `g` per seed shared by
//! all distances, so the equivalent channel at distance `d` is the same
//! linear combination of the equivalent channels through `h_0` and `g`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{generate_synthetic, innovation, ChannelSpec, CirSet, Displacement};
use crate::link::{equivalent_channel, equivalent_channel_row, row_powers, sinr, tr_reference_peak_power};
use crate::precoder::{CorrelationBank, ItrdmaParams, ItrdmaSolver, PrecoderKind, PrecoderSet};
use crate::signals::ComplexSequence;
use crate::units::{mps_to_kmh, to_db};
use crate::Error;

/// Synthetic channel parameters shared by every seed of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSettings {
    pub n_users: usize,
    pub n_antennas: usize,
    pub n_taps: usize,
    /// Exponential power-delay decay constant in taps; infinite is flat.
    pub decay_taps: f64,
    /// Seconds between taps.
    pub tap_interval: f64,
    /// Meters.
    pub carrier_wavelength: f64,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self {
            n_users: 2,
            n_antennas: 8,
            n_taps: 256,
            decay_taps: 64.0,
            tap_interval: crate::channel::DEFAULT_TAP_INTERVAL,
            carrier_wavelength: crate::channel::DEFAULT_CARRIER_WAVELENGTH,
        }
    }
}

impl ChannelSettings {
    pub fn spec(&self, seed: u64) -> ChannelSpec {
        ChannelSpec {
            n_users: self.n_users,
            n_antennas: self.n_antennas,
            n_taps: self.n_taps,
            decay_taps: self.decay_taps,
            seed,
        }
    }

    /// The synthetic bank for one ensemble member.
    pub fn generate(&self, seed: u64) -> Result<CirSet, Error> {
        generate_synthetic(&self.spec(seed))?.with_metadata(self.tap_interval, self.carrier_wavelength)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelSettings,
    /// Ensemble members; each seeds one synthetic channel.
    pub seeds: Vec<u64>,
    /// ITRDMA stopping threshold on `max |Δ|`.
    pub epsilon: f64,
    /// Iteration counts of the SIR sweep; must include 0.
    pub iterations: Vec<usize>,
    /// Iteration counts compared in the mobility sweeps; 0 is TR and must
    /// be present.
    pub mobility_iterations: Vec<usize>,
    /// ITRDMA iteration count of the focusing profile.
    pub profile_iterations: usize,
    /// The user whose stream is focused and who moves.
    pub target_user: usize,
    /// Operating SNR of the displacement sweep, dB.
    pub snr_db: f64,
    /// Operating SNRs of the speed sweep, dB.
    pub speed_snr_db: Vec<f64>,
    /// Meters; must include 0.
    pub displacement_grid: Vec<f64>,
    /// Scales the effective wavelength of the spatial correlation.
    pub coherence_multiplier: f64,
    /// Channel age between estimation and transmission, seconds.
    pub tau: f64,
    /// m/s.
    pub speed_grid: Vec<f64>,
    /// Reference half-strength distance of the speed table, meters.
    pub half_strength_distance: f64,
    /// Channel ages of the speed table, seconds.
    pub table_taus: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel: ChannelSettings::default(),
            seeds: (1..=30).collect(),
            epsilon: ItrdmaParams::default().epsilon,
            iterations: vec![0, 10, 20, 50, 100, 200, 400],
            mobility_iterations: vec![0, 20, 50],
            profile_iterations: 50,
            target_user: 0,
            snr_db: 30.0,
            speed_snr_db: vec![2.0, 10.0],
            displacement_grid: linear_grid(0.2, 0.0025).expect("default grid"),
            coherence_multiplier: 1.0,
            tau: 1e-3,
            speed_grid: linear_grid(150.0, 2.5).expect("default grid"),
            half_strength_distance: 0.03,
            table_taus: vec![0.05, 0.01, 0.001],
        }
    }
}

/// `0, step, 2·step, …` up to `max` inclusive, each point computed as
/// `k·step`.
pub fn linear_grid(max: f64, step: f64) -> Result<Vec<f64>, Error> {
    if !(step > 0.0) || !step.is_finite() || !(max >= 0.0) || !max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid needs max >= 0 and step > 0, got max={max} step={step}"
        )));
    }
    let count = (max / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| k as f64 * step).collect())
}

fn check_grid(name: &str, grid: &[f64]) -> Result<(), Error> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} holds {v}; values must be finite and >= 0")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<(), Error> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.channel.spec(0).validate()?;
        positive("tap_interval", self.channel.tap_interval)?;
        positive("carrier_wavelength", self.channel.carrier_wavelength)?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seed list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!("seed {} appears twice", w[0])));
        }
        ItrdmaParams {
            epsilon: self.epsilon,
            n_max: 0,
        }
        .validate()?;
        if self.iterations.is_empty() || self.mobility_iterations.is_empty() {
            return Err(Error::InvalidParameter("iteration lists must be non-empty".into()));
        }
        if self.target_user >= self.channel.n_users {
            return Err(Error::InvalidParameter(format!(
                "target user {} out of range for N={}",
                self.target_user, self.channel.n_users
            )));
        }
        for v in std::iter::once(&self.snr_db).chain(&self.speed_snr_db) {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("SNR must be finite, got {v}")));
            }
        }
        if self.speed_snr_db.is_empty() {
            return Err(Error::InvalidParameter("speed SNR list is empty".into()));
        }
        check_grid("displacement grid", &self.displacement_grid)?;
        check_grid("speed grid", &self.speed_grid)?;
        positive("coherence_multiplier", self.coherence_multiplier)?;
        positive("tau", self.tau)?;
        positive("half_strength_distance", self.half_strength_distance)?;
        if self.table_taus.is_empty() {
            return Err(Error::InvalidParameter("table tau list is empty".into()));
        }
        for &t in &self.table_taus {
            positive("table tau", t)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialization").as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of the innovation drawn for a moving receiver in ensemble member
/// `seed`.
pub fn innovation_seed(seed: u64) -> u64 {
    // splitmix64 finalizer, so innovations never coincide with a channel seed
    // of a small consecutive ensemble
    let mut z = seed ^ 0x6d6f_6269_6c69_7479;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run `job` for every seed on `threads` workers (0 = all processors) and
/// return the results in seed order.
pub fn per_seed<T, F>(seeds: &[u64], threads: usize, job: F) -> Result<Vec<T>, Error>
where
    T: Send,
    F: Fn(u64) -> Result<T, Error> + Sync,
{
    if threads == 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| job(s)).collect())
}

/// Ensemble mean of linear ratios in dB and sample std of their dB values.
pub fn ensemble_stats(linear: &[f64]) -> (f64, f64) {
    let n = linear.len() as f64;
    let mean_db = to_db(linear.iter().sum::<f64>() / n);
    if linear.len() < 2 {
        return (mean_db, 0.0);
    }
    let db: Vec<f64> = linear.iter().map(|&v| to_db(v)).collect();
    let m = db.iter().sum::<f64>() / n;
    let var = db.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (mean_db, var.sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_growth_exponent(x: &[f64], y: &[f64]) -> Result<f64, Error> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("growth fit needs two or more paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("growth fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("growth fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

fn csv_preamble(config_hash: &str, lines: &[&str]) -> String {
    let mut out = format!("# config_hash: {config_hash}\n");
    for l in lines {
        out.push_str("# ");
        out.push_str(l);
        out.push('\n');
    }
    out
}

const AVERAGING_NOTE: &str =
    "averaging: mean over seeds of linear power ratios, then 10*log10; std is the sample std of per-seed dB values";

pub fn kind_label(iterations: usize) -> String {
    if iterations == 0 {
        "TR".into()
    } else {
        format!("ITRDMA({iterations})")
    }
}

fn sorted_unique(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Precoder sets for every target after each checkpoint of a single
/// ITRDMA run per target. Checkpoint 0 is the TR precoder.
pub fn checkpoint_precoders(
    bank: &CorrelationBank,
    checkpoints: &[usize],
    epsilon: f64,
) -> Result<Vec<PrecoderSet>, Error> {
    let checkpoints = sorted_unique(checkpoints);
    let n = bank.n_users();
    let mut seqs: Vec<Vec<Vec<ComplexSequence>>> = vec![Vec::with_capacity(n); checkpoints.len()];
    let mut used: Vec<Vec<usize>> = vec![Vec::with_capacity(n); checkpoints.len()];
    for target in 0..n {
        let mut solver = ItrdmaSolver::new(bank, target)?;
        for (c, &n_max) in checkpoints.iter().enumerate() {
            solver.run(ItrdmaParams { epsilon, n_max })?;
            seqs[c].push(solver.normalized_precoder()?);
            used[c].push(solver.iterations());
        }
    }
    checkpoints
        .iter()
        .zip(seqs.into_iter().zip(used))
        .map(|(&n_max, (p, u))| {
            let (kind, params) = if n_max == 0 {
                (PrecoderKind::Tr, ItrdmaParams { epsilon: 0.0, n_max: 0 })
            } else {
                (PrecoderKind::Itrdma, ItrdmaParams { epsilon, n_max })
            };
            PrecoderSet::from_parts(kind, bank.n_taps(), p, u, params)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// SIR versus iteration count

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iterations: usize,
    pub mean_sir_db: f64,
    pub std_sir_db: f64,
    /// Mean over seeds and users of the iterations actually run.
    pub mean_iterations_used: f64,
    /// Per seed: mean over users of the linear SIR.
    pub per_seed_sir: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationSweep {
    pub seeds: Vec<u64>,
    pub rows: Vec<IterationRow>,
}

pub const FIG3_COLUMNS: &str = "n,mean_sir_db,std_sir_db,mean_iterations_used";

impl IterationSweep {
    pub fn row(&self, iterations: usize) -> Option<&IterationRow> {
        self.rows.iter().find(|r| r.iterations == iterations)
    }

    /// Fitted exponent of ensemble-mean linear SIR against `n` over rows
    /// with `lo <= n <= hi`.
    pub fn growth_exponent(&self, lo: usize, hi: usize) -> Result<f64, Error> {
        let pts: Vec<_> = self.rows.iter().filter(|r| r.iterations >= lo && r.iterations <= hi).collect();
        let x: Vec<f64> = pts.iter().map(|r| r.iterations as f64).collect();
        let y: Vec<f64> = pts.iter().map(|r| crate::units::from_db(r.mean_sir_db)).collect();
        fit_growth_exponent(&x, &y)
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = csv_preamble(
            config_hash,
            &[
                AVERAGING_NOTE,
                "per-seed SIR: mean over users of linear SIR (sigma = 0), in dB",
            ],
        );
        out.push_str(FIG3_COLUMNS);
        for s in &self.seeds {
            out.push_str(&format!(",sir_db_seed_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                r.iterations, r.mean_sir_db, r.std_sir_db, r.mean_iterations_used
            ));
            for &v in &r.per_seed_sir {
                out.push_str(&format!(",{}", to_db(v)));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean over users of the linear SIR for each checkpoint of one seed, plus
/// the mean iterations used.
fn iteration_job(cfg: &ExperimentConfig, checkpoints: &[usize], seed: u64) -> Result<Vec<(f64, f64)>, Error> {
    let h = cfg.channel.generate(seed)?;
    let bank = CorrelationBank::new(&h)?;
    let n = h.n_users() as f64;
    checkpoint_precoders(&bank, checkpoints, cfg.epsilon)?
        .iter()
        .map(|p| {
            let eq = equivalent_channel(&h, p)?;
            let sir = (0..h.n_users()).map(|i| sinr(&eq, i, 0.0)).sum::<Result<f64, _>>()? / n;
            let used = p.iterations_used().iter().sum::<usize>() as f64 / n;
            Ok((sir, used))
        })
        .collect()
}

pub fn sweep_iterations(cfg: &ExperimentConfig, threads: usize) -> Result<IterationSweep, Error> {
    cfg.validate()?;
    if !cfg.iterations.contains(&0) {
        return Err(Error::InvalidParameter("iteration list must include 0 for the TR baseline".into()));
    }
    let checkpoints = sorted_unique(&cfg.iterations);
    let results = per_seed(&cfg.seeds, threads, |seed| iteration_job(cfg, &checkpoints, seed))?;
    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let per_seed_sir: Vec<f64> = results.iter().map(|r| r[c].0).collect();
            let (mean_sir_db, std_sir_db) = ensemble_stats(&per_seed_sir);
            IterationRow {
                iterations: n,
                mean_sir_db,
                std_sir_db,
                mean_iterations_used: results.iter().map(|r| r[c].1).sum::<f64>() / results.len() as f64,
                per_seed_sir,
            }
        })
        .collect();
    Ok(IterationSweep {
        seeds: cfg.seeds.clone(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Mobility

/// Equivalent-channel rows of the moving user for one precoder kind, through
/// the estimation bank and through the innovation.
#[derive(Debug, Clone)]
pub struct MobilityRows {
    pub iterations: usize,
    pub through_estimate: Vec<ComplexSequence>,
    pub through_innovation: Vec<ComplexSequence>,
}

/// Row of the moving user at correlation `rho`.
pub fn mix_rows(rows: &MobilityRows, rho: f64) -> Vec<ComplexSequence> {
    if rho == 1.0 {
        return rows.through_estimate.clone();
    }
    let b = (1.0 - rho * rho).max(0.0).sqrt();
    rows.through_estimate
        .iter()
        .zip(&rows.through_innovation)
        .map(|(w0, wg)| w0.scale(rho.into()).add(&wg.scale(b.into())))
        .collect()
}

/// Everything the mobility sweeps need from one ensemble member.
#[derive(Debug, Clone)]
pub struct MobilitySeed {
    pub seed: u64,
    pub kinds: Vec<MobilityRows>,
    /// TR reference peak power of the moving user on the estimation bank.
    pub reference_peak_power: f64,
    pub peak_index: i64,
}

impl MobilitySeed {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self, Error> {
        let h0 = cfg.channel.generate(seed)?;
        let g = innovation(&h0, innovation_seed(seed))?;
        let bank = CorrelationBank::new(&h0)?;
        let checkpoints = sorted_unique(&cfg.mobility_iterations);
        let t = cfg.target_user;
        let kinds = checkpoint_precoders(&bank, &checkpoints, cfg.epsilon)?
            .iter()
            .zip(&checkpoints)
            .map(|(p, &n)| {
                Ok(MobilityRows {
                    iterations: n,
                    through_estimate: equivalent_channel_row(&h0, p, t)?,
                    through_innovation: equivalent_channel_row(&g, p, t)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(Self {
            seed,
            kinds,
            reference_peak_power: tr_reference_peak_power(&h0, t)?,
            peak_index: h0.n_taps() as i64 - 1,
        })
    }

    /// `(SINR, SIR, |peak|)` of the moving user for kind index `k` at
    /// correlation `rho` and noise level `sigma`.
    pub fn evaluate(&self, k: usize, rho: f64, sigma: f64, target: usize) -> (f64, f64, f64) {
        let row = mix_rows(&self.kinds[k], rho);
        let p = row_powers(&row, target, self.peak_index);
        (p.sinr(sigma), p.sinr(0.0), row[target].at(self.peak_index).norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityPoint {
    pub snr_db: f64,
    pub displacement: f64,
    pub rho: f64,
    pub iterations: usize,
    pub mean_sinr_db: f64,
    pub std_sinr_db: f64,
    pub mean_sir_db: f64,
    /// Ensemble mean of `|w[target][target]|` at the focusing tap.
    pub mean_peak_amplitude: f64,
    pub per_seed_sinr: Vec<f64>,
}

fn mobility_points(
    cfg: &ExperimentConfig,
    distances: &[f64],
    snrs: &[f64],
    threads: usize,
) -> Result<Vec<MobilityPoint>, Error> {
    let rhos = distances
        .iter()
        .map(|&d| {
            Displacement {
                distance: d,
                coherence_multiplier: cfg.coherence_multiplier,
                user: Some(cfg.target_user),
            }
            .correlation(cfg.channel.carrier_wavelength)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let kinds = sorted_unique(&cfg.mobility_iterations);
    let t = cfg.target_user;
    // per seed: values in (snr, distance, kind) order
    let per_seed_values = per_seed(&cfg.seeds, threads, |seed| {
        let ms = MobilitySeed::new(cfg, seed)?;
        let mut out = Vec::with_capacity(snrs.len() * rhos.len() * kinds.len());
        for &snr in snrs {
            let sigma = (ms.reference_peak_power / crate::units::from_db(snr)).sqrt();
            for &rho in &rhos {
                for k in 0..kinds.len() {
                    out.push(ms.evaluate(k, rho, sigma, t));
                }
            }
        }
        Ok(out)
    })?;
    let mut points = Vec::new();
    let mut idx = 0;
    for &snr in snrs {
        for (&d, &rho) in distances.iter().zip(&rhos) {
            for &n in &kinds {
                let sinrs: Vec<f64> = per_seed_values.iter().map(|v| v[idx].0).collect();
                let sirs: Vec<f64> = per_seed_values.iter().map(|v| v[idx].1).collect();
                let amp = per_seed_values.iter().map(|v| v[idx].2).sum::<f64>() / sinrs.len() as f64;
                let (mean_sinr_db, std_sinr_db) = ensemble_stats(&sinrs);
                points.push(MobilityPoint {
                    snr_db: snr,
                    displacement: d,
                    rho,
                    iterations: n,
                    mean_sinr_db,
                    std_sinr_db,
                    mean_sir_db: ensemble_stats(&sirs).0,
                    mean_peak_amplitude: amp,
                    per_seed_sinr: sinrs,
                });
                idx += 1;
            }
        }
    }
    Ok(points)
}

fn check_mobility(cfg: &ExperimentConfig) -> Result<(), Error> {
    cfg.validate()?;
    if !cfg.mobility_iterations.contains(&0) {
        return Err(Error::InvalidParameter("mobility iteration list must include 0 for TR".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSweep {
    pub points: Vec<MobilityPoint>,
}

pub const FIG5_COLUMNS: &str =
    "displacement_m,rho,kind,iterations,mean_sinr_db,std_sinr_db,mean_sir_db,mean_peak_amplitude,relative_amplitude";

impl DisplacementSweep {
    pub fn point(&self, displacement: f64, iterations: usize) -> Option<&MobilityPoint> {
        self.points
            .iter()
            .find(|p| p.displacement == displacement && p.iterations == iterations)
    }

    /// `(d, mean peak amplitude)` of one kind in grid order.
    pub fn amplitude_curve(&self, iterations: usize) -> (Vec<f64>, Vec<f64>) {
        self.points
            .iter()
            .filter(|p| p.iterations == iterations)
            .map(|p| (p.displacement, p.mean_peak_amplitude))
            .unzip()
    }

    /// Half-amplitude distance of the TR focusing peak.
    pub fn half_strength(&self) -> Result<HalfStrength, Error> {
        let (d, a) = self.amplitude_curve(0);
        estimate_half_strength_distance(&d, &a)
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let half = match self.half_strength() {
            Ok(HalfStrength::Reached { distance }) => format!("tr half-amplitude distance: {distance} m"),
            Ok(HalfStrength::NotReached { .. }) => "tr half-amplitude distance: not reached".into(),
            Err(e) => format!("tr half-amplitude distance: {e}"),
        };
        let mut out = csv_preamble(
            config_hash,
            &[
                AVERAGING_NOTE,
                "only the target user moves; noise fixed by the TR reference peak at d = 0",
                "relative_amplitude: mean_peak_amplitude over its d = 0 value for the same kind",
                &half,
            ],
        );
        out.push_str(FIG5_COLUMNS);
        out.push('\n');
        for p in &self.points {
            let base = self.point(0.0, p.iterations).map_or(f64::NAN, |b| b.mean_peak_amplitude);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.displacement,
                p.rho,
                kind_label(p.iterations),
                p.iterations,
                p.mean_sinr_db,
                p.std_sinr_db,
                p.mean_sir_db,
                p.mean_peak_amplitude,
                p.mean_peak_amplitude / base
            ));
        }
        out
    }
}

pub fn sweep_displacement(cfg: &ExperimentConfig, threads: usize) -> Result<DisplacementSweep, Error> {
    check_mobility(cfg)?;
    if !cfg.displacement_grid.contains(&0.0) {
        return Err(Error::InvalidParameter("displacement grid must include 0".into()));
    }
    Ok(DisplacementSweep {
        points: mobility_points(cfg, &cfg.displacement_grid, &[cfg.snr_db], threads)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSweep {
    pub tau: f64,
    pub speeds: Vec<f64>,
    pub points: Vec<MobilityPoint>,
}

pub const FIG6_COLUMNS: &str =
    "speed_mps,speed_kmh,displacement_m,snr_db,kind,iterations,mean_sinr_db,std_sinr_db,mean_sir_db";

impl SpeedSweep {
    pub fn point(&self, speed: f64, snr_db: f64, iterations: usize) -> Option<&MobilityPoint> {
        let k = self.speeds.iter().position(|&v| v == speed)?;
        let per_speed = self.points.len() / (self.speeds.len() * self.n_snr());
        self.points
            .iter()
            .filter(|p| p.snr_db == snr_db)
            .skip(k * per_speed)
            .take(per_speed)
            .find(|p| p.iterations == iterations)
    }

    fn n_snr(&self) -> usize {
        let mut s: Vec<u64> = self.points.iter().map(|p| p.snr_db.to_bits()).collect();
        s.sort_unstable();
        s.dedup();
        s.len().max(1)
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = csv_preamble(
            config_hash,
            &[
                AVERAGING_NOTE,
                &format!("displacement = speed * tau with tau = {} s", self.tau),
                "only the target user moves; noise fixed by the TR reference peak at d = 0",
            ],
        );
        out.push_str(FIG6_COLUMNS);
        out.push('\n');
        let per_speed = self.points.len() / (self.speeds.len() * self.n_snr());
        for (c, chunk) in self.points.chunks(per_speed).enumerate() {
            let v = self.speeds[c % self.speeds.len()];
            for p in chunk {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    v,
                    mps_to_kmh(v),
                    p.displacement,
                    p.snr_db,
                    kind_label(p.iterations),
                    p.iterations,
                    p.mean_sinr_db,
                    p.std_sinr_db,
                    p.mean_sir_db
                ));
            }
        }
        out
    }
}

pub fn sweep_speed(cfg: &ExperimentConfig, threads: usize) -> Result<SpeedSweep, Error> {
    check_mobility(cfg)?;
    let distances: Vec<f64> = cfg.speed_grid.iter().map(|v| v * cfg.tau).collect();
    Ok(SpeedSweep {
        tau: cfg.tau,
        speeds: cfg.speed_grid.clone(),
        points: mobility_points(cfg, &distances, &cfg.speed_snr_db, threads)?,
    })
}

// ---------------------------------------------------------------------------
// Half-strength distance and speed

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HalfStrength {
    Reached { distance: f64 },
    /// The curve stays above half its starting value on the whole grid.
    NotReached { last_distance: f64, last_relative: f64 },
}

/// First crossing of half the `d = 0` amplitude, linearly interpolated
/// between grid points. `distances` must start at 0 and increase.
pub fn estimate_half_strength_distance(distances: &[f64], amplitudes: &[f64]) -> Result<HalfStrength, Error> {
    if distances.len() != amplitudes.len() || distances.is_empty() {
        return Err(Error::InvalidParameter("amplitude curve needs one amplitude per distance".into()));
    }
    if distances[0] != 0.0 || distances.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("distances must start at 0 and increase".into()));
    }
    let a0 = amplitudes[0];
    positive("amplitude at d = 0", a0)?;
    let half = 0.5 * a0;
    for k in 1..distances.len() {
        let a = amplitudes[k];
        if a == half {
            return Ok(HalfStrength::Reached { distance: distances[k] });
        }
        if a < half {
            let (d0, d1, a_prev) = (distances[k - 1], distances[k], amplitudes[k - 1]);
            let frac = (a_prev - half) / (a_prev - a);
            return Ok(HalfStrength::Reached {
                distance: d0 + frac * (d1 - d0),
            });
        }
    }
    Ok(HalfStrength::NotReached {
        last_distance: *distances.last().unwrap(),
        last_relative: amplitudes.last().unwrap() / a0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfStrengthSpeed {
    pub mps: f64,
    pub kmh: f64,
}

/// Speed at which a channel of age `tau` is `d_half` meters stale.
pub fn half_strength_speed(d_half: f64, tau: f64) -> Result<HalfStrengthSpeed, Error> {
    positive("d_half", d_half)?;
    positive("tau", tau)?;
    let mps = d_half / tau;
    Ok(HalfStrengthSpeed {
        mps,
        kmh: mps_to_kmh(mps),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedTableRow {
    /// `configured` or `estimated`.
    pub source: String,
    pub d_half_m: f64,
    pub tau_s: f64,
    pub speed_mps: f64,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedTable {
    pub rows: Vec<SpeedTableRow>,
    pub estimate: Option<HalfStrength>,
}

pub const TABLE1_COLUMNS: &str = "source,d_half_m,tau_s,tau_ms,speed_mps,speed_kmh";

impl SpeedTable {
    pub fn to_csv(&self, config_hash: &str) -> String {
        let note = match self.estimate {
            Some(HalfStrength::NotReached { last_distance, last_relative }) => format!(
                "estimated half-amplitude distance: not reached (relative amplitude {last_relative} at {last_distance} m)"
            ),
            Some(HalfStrength::Reached { distance }) => format!("estimated half-amplitude distance: {distance} m"),
            None => "estimated half-amplitude distance: not computed".into(),
        };
        let mut out = csv_preamble(config_hash, &["speed = d_half / tau; km/h = 3.6 * m/s", &note]);
        out.push_str(TABLE1_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.source,
                r.d_half_m,
                r.tau_s,
                r.tau_s * 1e3,
                r.speed_mps,
                r.speed_kmh
            ));
        }
        out
    }
}

/// Rows for the configured half-strength distance and, when the estimate
/// reached half amplitude, for the estimated one.
pub fn speed_table(cfg: &ExperimentConfig, estimate: Option<HalfStrength>) -> Result<SpeedTable, Error> {
    cfg.validate()?;
    let mut sources = vec![("configured", cfg.half_strength_distance)];
    if let Some(HalfStrength::Reached { distance }) = estimate {
        sources.push(("estimated", distance));
    }
    let mut rows = Vec::new();
    for (source, d) in sources {
        for &tau in &cfg.table_taus {
            let v = half_strength_speed(d, tau)?;
            rows.push(SpeedTableRow {
                source: source.into(),
                d_half_m: d,
                tau_s: tau,
                speed_mps: v.mps,
                speed_kmh: v.kmh,
            });
        }
    }
    Ok(SpeedTable { rows, estimate })
}

// ---------------------------------------------------------------------------
// Focusing profiles

/// Field at `user` from the target's precoder, after the target moved by
/// `displacement`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTrace {
    pub displacement: f64,
    pub iterations: usize,
    pub user: usize,
    pub field: ComplexSequence,
    /// Absolute tap of the designed focus.
    pub peak_index: i64,
}

impl ProfileTrace {
    pub fn peak_amplitude(&self) -> f64 {
        self.field.at(self.peak_index).norm()
    }

    /// Largest amplitude away from the focusing tap.
    pub fn max_side_lobe(&self) -> f64 {
        self.field
            .iter()
            .filter(|&(k, _)| k != self.peak_index)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }
}

/// Fields at every user from the TR and ITRDMA(`iterations`) precoders of
/// `target`, on an unmoved channel.
pub fn profile_traces(cirset: &CirSet, target: usize, iterations: usize, epsilon: f64) -> Result<Vec<ProfileTrace>, Error> {
    if cirset.n_users() < 2 {
        return Err(Error::InvalidParameter("focusing profiles need N >= 2".into()));
    }
    cirset.check_user(target)?;
    let bank = CorrelationBank::new(cirset)?;
    let peak_index = cirset.n_taps() as i64 - 1;
    let mut out = Vec::new();
    for p in checkpoint_precoders(&bank, &[0, iterations], epsilon)? {
        let n = if p.kind() == PrecoderKind::Tr { 0 } else { iterations };
        for user in 0..cirset.n_users() {
            let row = equivalent_channel_row(cirset, &p, user)?;
            out.push(ProfileTrace {
                displacement: 0.0,
                iterations: n,
                user,
                field: row[target].clone(),
                peak_index,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusingProfile {
    pub seed: u64,
    pub traces: Vec<ProfileTrace>,
}

pub const FIG2_COLUMNS: &str = "displacement_m,kind,iterations,user,tap,lag,amplitude";

impl FocusingProfile {
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = csv_preamble(
            config_hash,
            &[
                &format!("single realization, seed {}", self.seed),
                "amplitude: |w[user][target]| at each tap; lag = tap - (L - 1)",
                "rows at displacement > 0 cover the moving target user only",
            ],
        );
        out.push_str(FIG2_COLUMNS);
        out.push('\n');
        for t in &self.traces {
            let label = kind_label(t.iterations);
            for (k, v) in t.field.iter() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    t.displacement,
                    label,
                    t.iterations,
                    t.user,
                    k,
                    k - t.peak_index,
                    v.norm()
                ));
            }
        }
        out
    }
}

/// Profiles on the first seed: every user at `d = 0`, then the moving
/// target across the rest of the displacement grid.
pub fn focusing_profile(cfg: &ExperimentConfig) -> Result<FocusingProfile, Error> {
    cfg.validate()?;
    if cfg.channel.n_users < 2 {
        return Err(Error::InvalidParameter("focusing profiles need N >= 2".into()));
    }
    let seed = cfg.seeds[0];
    let h0 = cfg.channel.generate(seed)?;
    let t = cfg.target_user;
    let mut traces = profile_traces(&h0, t, cfg.profile_iterations, cfg.epsilon)?;
    let moving = {
        let mut c = cfg.clone();
        c.mobility_iterations = vec![0, cfg.profile_iterations];
        MobilitySeed::new(&c, seed)?
    };
    for &d in cfg.displacement_grid.iter().filter(|&&d| d > 0.0) {
        let rho = Displacement {
            distance: d,
            coherence_multiplier: cfg.coherence_multiplier,
            user: Some(t),
        }
        .correlation(cfg.channel.carrier_wavelength)?;
        for rows in &moving.kinds {
            traces.push(ProfileTrace {
                displacement: d,
                iterations: rows.iterations,
                user: t,
                field: mix_rows(rows, rho).swap_remove(t),
                peak_index: moving.peak_index,
            });
        }
    }
    Ok(FocusingProfile { seed, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::displaced_with;
    use crate::link::equivalent_channel;
    use num_complex::Complex64;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            channel: ChannelSettings {
                n_users: 2,
                n_antennas: 2,
                n_taps: 16,
                decay_taps: 4.0,
                ..ChannelSettings::default()
            },
            seeds: vec![3, 4, 5],
            iterations: vec![0, 5, 10],
            mobility_iterations: vec![0, 5],
            profile_iterations: 5,
            displacement_grid: linear_grid(0.15, 0.0075).unwrap(),
            speed_grid: linear_grid(150.0, 25.0).unwrap(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.displacement_grid.len(), 81);
        assert_eq!(c.displacement_grid[18], 18.0 * 0.0025);
        assert_eq!(c.content_hash().len(), 64);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.seeds = vec![1, 2, 1];
        assert!(c.validate().is_err());
        let mut c = small();
        c.tau = 0.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.displacement_grid.clear();
        assert!(c.validate().is_err());
        let mut c = small();
        c.iterations = vec![5, 10];
        assert!(sweep_iterations(&c, 1).is_err());
        let mut c = small();
        c.displacement_grid = vec![0.01, 0.02];
        assert!(sweep_displacement(&c, 1).is_err());
    }

    #[test]
    fn checkpoints_match_standalone_runs() {
        let h = small().channel.generate(9).unwrap();
        let bank = CorrelationBank::new(&h).unwrap();
        let sets = checkpoint_precoders(&bank, &[10, 0, 4], 1e-3).unwrap();
        assert_eq!(sets[0], PrecoderSet::tr(&h).unwrap());
        for (set, n) in sets[1..].iter().zip([4, 10]) {
            let direct = PrecoderSet::itrdma(&h, ItrdmaParams { epsilon: 1e-3, n_max: n }).unwrap();
            assert_eq!(set, &direct);
        }
    }

    #[test]
    fn zero_row_equals_tr_sir() {
        let cfg = small();
        let sweep = sweep_iterations(&cfg, 1).unwrap();
        for (k, &seed) in cfg.seeds.iter().enumerate() {
            let h = cfg.channel.generate(seed).unwrap();
            let eq = equivalent_channel(&h, &PrecoderSet::tr(&h).unwrap()).unwrap();
            let tr = (sinr(&eq, 0, 0.0).unwrap() + sinr(&eq, 1, 0.0).unwrap()) / 2.0;
            assert_eq!(sweep.row(0).unwrap().per_seed_sir[k], tr);
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let cfg = small();
        let a = sweep_iterations(&cfg, 1).unwrap().to_csv("h");
        let b = sweep_iterations(&cfg, 3).unwrap().to_csv("h");
        assert_eq!(a, b);
        let a = sweep_speed(&cfg, 1).unwrap().to_csv("h");
        let b = sweep_speed(&cfg, 4).unwrap().to_csv("h");
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_rows_match_displaced_channel() {
        let cfg = small();
        let seed = cfg.seeds[1];
        let ms = MobilitySeed::new(&cfg, seed).unwrap();
        let h0 = cfg.channel.generate(seed).unwrap();
        let bank = CorrelationBank::new(&h0).unwrap();
        let sets = checkpoint_precoders(&bank, &cfg.mobility_iterations, cfg.epsilon).unwrap();
        for d in [0.0, 0.02, 0.05, 0.15] {
            let disp = Displacement {
                distance: d,
                coherence_multiplier: 1.0,
                user: Some(0),
            };
            let hd = displaced_with(&h0, &disp, innovation_seed(seed)).unwrap();
            let rho = disp.correlation(h0.carrier_wavelength()).unwrap();
            for (k, set) in sets.iter().enumerate() {
                let direct = equivalent_channel(&hd, set).unwrap();
                let mixed = mix_rows(&ms.kinds[k], rho);
                for j in 0..2 {
                    let scale = direct.w(0, j).max_abs().max(1.0);
                    assert!(mixed[j].max_abs_diff(direct.w(0, j)) <= 1e-12 * scale, "d={d} k={k} j={j}");
                }
                // the other user does not move
                assert_eq!(equivalent_channel(&h0, set).unwrap().w(1, 0), direct.w(1, 0));
            }
        }
    }

    #[test]
    fn speed_zero_equals_displacement_zero() {
        let mut cfg = small();
        cfg.speed_snr_db = vec![cfg.snr_db, 5.0];
        let disp = sweep_displacement(&cfg, 2).unwrap();
        let speed = sweep_speed(&cfg, 2).unwrap();
        for &n in &cfg.mobility_iterations {
            let a = disp.point(0.0, n).unwrap();
            let b = speed.point(0.0, cfg.snr_db, n).unwrap();
            assert_eq!(a.mean_sinr_db, b.mean_sinr_db);
            assert_eq!(a.per_seed_sinr, b.per_seed_sinr);
        }
        let far = speed.point(150.0, 5.0, 5).unwrap();
        assert_eq!(far.displacement, 150.0 * cfg.tau);
    }

    #[test]
    fn half_strength_interpolation() {
        let d = [0.0, 0.01, 0.02, 0.03];
        assert_eq!(
            estimate_half_strength_distance(&d, &[2.0, 1.5, 1.0, 0.5]).unwrap(),
            HalfStrength::Reached { distance: 0.02 }
        );
        match estimate_half_strength_distance(&d, &[1.0, 0.8, 0.6, 0.4]).unwrap() {
            HalfStrength::Reached { distance } => assert!((distance - 0.025).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            estimate_half_strength_distance(&d, &[1.0, 0.9, 0.8, 0.7]).unwrap(),
            HalfStrength::NotReached {
                last_distance: 0.03,
                last_relative: 0.7
            }
        );
        assert!(estimate_half_strength_distance(&[0.01, 0.02], &[1.0, 0.4]).is_err());
    }

    #[test]
    fn half_strength_speed_values() {
        assert!(half_strength_speed(0.0, 1.0).is_err());
        assert!(half_strength_speed(0.03, -1.0).is_err());
        let v = half_strength_speed(0.03, 0.001).unwrap();
        assert_eq!(v.mps, 30.0);
        assert_eq!(v.kmh, 108.0);
    }

    #[test]
    fn delta_channel_profile_is_a_spike() {
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        // each user sees a single path from its own antenna only
        let set = CirSet::from_nested(vec![
            vec![vec![one, z, z, z], vec![z; 4]],
            vec![vec![z; 4], vec![one, z, z, z]],
        ])
        .unwrap();
        for t in profile_traces(&set, 0, 50, 1e-3).unwrap() {
            if t.user == 0 {
                assert_eq!(t.peak_amplitude(), 1.0);
            } else {
                assert_eq!(t.peak_amplitude(), 0.0);
            }
            assert_eq!(t.max_side_lobe(), 0.0);
        }
    }

    #[test]
    fn csv_headers_carry_hash_and_columns() {
        let cfg = small();
        let csv = sweep_iterations(&cfg, 1).unwrap().to_csv("abc");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config_hash: abc");
        assert!(lines[1].starts_with("# averaging"));
        let header = lines.iter().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(*header, "n,mean_sir_db,std_sir_db,mean_iterations_used,sir_db_seed_3,sir_db_seed_4,sir_db_seed_5");
        assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 4);
        let profile = focusing_profile(&cfg).unwrap().to_csv("abc");
        assert!(profile.contains(FIG2_COLUMNS));
        let table = speed_table(&cfg, Some(HalfStrength::Reached { distance: 0.045 })).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert!(table.to_csv("abc").contains("configured,0.03,0.001,1,30,108"));
    }
}
