//! `itrdma` command-line front end.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itrdma::channel::{generate_synthetic, CirSet, CIR_FORMAT_VERSION, CIR_MAGIC};
use itrdma::experiments::{focusing_profile, speed_table, sweep_displacement, sweep_iterations, sweep_speed};
use itrdma::link::{sigma_for_snr, BerSetup, LinkReport};
use itrdma::precoder::{PrecoderKind, PrecoderSet, PRECODER_FORMAT_VERSION, PRECODER_MAGIC};
use itrdma::Error;

use config::{Config, ConfigError, FileFormat, DEFAULTS_TOML};

#[derive(Parser)]
#[command(name = "itrdma", about = "Time-reversal and ITRDMA precoding simulator", disable_version_flag = true)]
struct Cli {
    /// Print the artifact and file-format versions.
    #[arg(long)]
    version: bool,
    /// Print the default configuration with every key documented.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `section.key=value`; the key must already exist.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces `channel.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving every output file.
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic CIR set.
    GenChannel(Common),
    /// Compute TR or ITRDMA precoders for a CIR file.
    Precode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        channel: PathBuf,
    },
    /// Equivalent channels, SIR/SINR and optional BER of a precoder on a channel.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        precoder: PathBuf,
    },
    /// Mean SIR against ITRDMA iteration count.
    SweepIterations(Common),
    /// SINR against receiver displacement.
    SweepDisplacement(Common),
    /// SINR against receiver speed.
    SweepSpeed(Common),
    /// Speeds that reach the half-strength distance.
    Table1(Common),
    /// Focusing amplitude profiles.
    Profiles(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenChannel(c)
            | Command::SweepIterations(c)
            | Command::SweepDisplacement(c)
            | Command::SweepSpeed(c)
            | Command::Table1(c)
            | Command::Profiles(c) => c,
            Command::Precode { common, .. } | Command::Evaluate { common, .. } => common,
        }
    }
}

enum Failure {
    Config(String),
    MissingInput(String),
    Dimension(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::MissingInput(_) => 3,
            Failure::Dimension(_) => 4,
            Failure::Numeric(_) => 5,
            Failure::Io(_) => 1,
        }
    }

    fn report(&self) -> String {
        let (cat, msg) = match self {
            Failure::Config(m) => ("config", m),
            Failure::MissingInput(m) => ("missing_input", m),
            Failure::Dimension(m) => ("dimension_mismatch", m),
            Failure::Numeric(m) => ("numeric", m),
            Failure::Io(m) => ("io", m),
        };
        format!("error[{cat}]: {}", msg.replace('\n', " "))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidSpec(_) | Error::InvalidParameter(_) | Error::UnknownConstellation(_) => Failure::Config(msg),
            Error::DimensionMismatch(_) | Error::Format(_) => Failure::Dimension(msg),
            Error::ZeroEnergyUser { .. } | Error::EmptySequence | Error::MissingVarianceProfile => Failure::Numeric(msg),
            Error::Io(_) => Failure::Io(msg),
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::MissingInput(format!("{}: {e}", path.display())))
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let text = match &common.config {
        Some(p) => Some(
            String::from_utf8(read_input(p)?)
                .map_err(|_| Failure::Config(format!("{} is not utf-8", p.display())))?,
        ),
        None => None,
    };
    Ok(Config::load(text.as_deref(), &common.overrides, common.seed)?)
}

/// Writes into a temporary file next to the target, then renames it.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        self.written.push(path);
        Ok(())
    }
}

fn cir_bytes(set: &CirSet, format: FileFormat) -> (Vec<u8>, &'static str) {
    match format {
        FileFormat::Binary => (set.to_bytes(), "channel.cir"),
        FileFormat::Json => ((set.to_json() + "\n").into_bytes(), "channel.json"),
    }
}

fn precoder_bytes(set: &PrecoderSet, format: FileFormat) -> (Vec<u8>, &'static str) {
    match format {
        FileFormat::Binary => (set.to_bytes(), "precoder.prc"),
        FileFormat::Json => ((set.to_json() + "\n").into_bytes(), "precoder.json"),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let common = command.common();
    let cfg = load_config(common)?;
    let hash = cfg.hash();
    println!("config_hash: {hash}");
    let mut out = Outputs::new(&common.out_dir)?;
    let threads = cfg.run.threads;
    match &command {
        Command::GenChannel(_) => {
            let set = generate_synthetic(&cfg.channel_settings().spec(cfg.channel.seed))?
                .with_metadata(cfg.channel.tap_interval, cfg.channel.carrier_wavelength)?;
            let (bytes, name) = cir_bytes(&set, cfg.run.file_format);
            out.write(name, &bytes)?;
            out.write("channel.config.json", cfg.echo_json().as_bytes())?;
        }
        Command::Precode { channel, .. } => {
            let set = CirSet::from_any(&read_input(channel)?)?;
            let (precoders, residuals) = match cfg.precoder.kind {
                PrecoderKind::Tr => (PrecoderSet::tr(&set)?, Vec::new()),
                PrecoderKind::Itrdma => PrecoderSet::itrdma_with_residuals(&set, cfg.itrdma_params())?,
            };
            let (bytes, name) = precoder_bytes(&precoders, cfg.run.file_format);
            out.write(name, &bytes)?;
            for (target, grid) in residuals.iter().enumerate() {
                out.write(&format!("trace_user{target}.csv"), grid.trace_csv().as_bytes())?;
            }
            out.write("precoder.config.json", cfg.echo_json().as_bytes())?;
        }
        Command::Evaluate { channel, precoder, .. } => {
            let set = CirSet::from_any(&read_input(channel)?)?;
            let precoders = PrecoderSet::from_any(&read_input(precoder)?)?;
            if set.n_users() != precoders.n_users()
                || set.n_antennas() != precoders.n_antennas()
                || set.n_taps() != precoders.n_taps()
            {
                return Err(Failure::Dimension(format!(
                    "channel is {}x{}x{} but precoders are {}x{}x{}",
                    set.n_users(),
                    set.n_antennas(),
                    set.n_taps(),
                    precoders.n_users(),
                    precoders.n_antennas(),
                    precoders.n_taps()
                )));
            }
            let sigma = noise_sigma(&set, cfg.link.snr_db)?;
            let ber = (cfg.link.ber_symbols > 0).then(|| {
                Ok::<_, Failure>(BerSetup {
                    constellation: cfg.constellation()?,
                    symbols: cfg.link.ber_symbols,
                    symbol_spacing: cfg.link.symbol_spacing,
                    seed: cfg.link.ber_seed,
                })
            });
            let ber = ber.transpose()?;
            let echo: serde_json::Value = serde_json::from_str(&cfg.echo_json()).expect("echo json");
            let scenario = match precoders.kind() {
                PrecoderKind::Tr => "tr".to_string(),
                PrecoderKind::Itrdma => format!("itrdma_n{}", precoders.params().n_max),
            };
            let report = LinkReport::evaluate(&scenario, &set, &precoders, sigma, ber, echo)?;
            out.write("link_report.csv", report.to_csv().as_bytes())?;
            out.write("link_report.json", (report.to_json() + "\n").as_bytes())?;
        }
        Command::SweepIterations(_) => {
            let sweep = sweep_iterations(&cfg.experiment_config()?, threads)?;
            out.write("fig3_sir_vs_iter.csv", sweep.to_csv(&hash).as_bytes())?;
            out.write("fig3_sir_vs_iter.config.json", cfg.echo_json().as_bytes())?;
        }
        Command::SweepDisplacement(_) => {
            let sweep = sweep_displacement(&cfg.experiment_config()?, threads)?;
            out.write("fig5_sinr_vs_disp.csv", sweep.to_csv(&hash).as_bytes())?;
            out.write("fig5_sinr_vs_disp.config.json", cfg.echo_json().as_bytes())?;
        }
        Command::SweepSpeed(_) => {
            let sweep = sweep_speed(&cfg.experiment_config()?, threads)?;
            out.write("fig6_sinr_vs_speed.csv", sweep.to_csv(&hash).as_bytes())?;
            out.write("fig6_sinr_vs_speed.config.json", cfg.echo_json().as_bytes())?;
        }
        Command::Table1(_) => {
            let exp = cfg.experiment_config()?;
            let estimate = sweep_displacement(&exp, threads)?.half_strength()?;
            let table = speed_table(&exp, Some(estimate))?;
            out.write("table1_speed.csv", table.to_csv(&hash).as_bytes())?;
            out.write("table1_speed.config.json", cfg.echo_json().as_bytes())?;
        }
        Command::Profiles(_) => {
            let profile = focusing_profile(&cfg.experiment_config()?)?;
            out.write("fig2_profiles.csv", profile.to_csv(&hash).as_bytes())?;
            out.write("fig2_profiles.config.json", cfg.echo_json().as_bytes())?;
        }
    }
    for p in &out.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Common noise level for every user: the operating SNR against the mean TR
/// reference peak power over users.
fn noise_sigma(set: &CirSet, snr_db: f64) -> Result<f64, Error> {
    let n = set.n_users();
    let mean_power = (0..n)
        .map(|i| sigma_for_snr(set, i, snr_db).map(|s| s * s))
        .sum::<Result<f64, _>>()?
        / n as f64;
    Ok(mean_power.sqrt())
}

fn version_text() -> String {
    format!(
        "itrdma {}\ncir format {} version {}\nprecoder format {} version {}",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(&CIR_MAGIC),
        CIR_FORMAT_VERSION,
        String::from_utf8_lossy(&PRECODER_MAGIC),
        PRECODER_FORMAT_VERSION
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", Failure::Config(first).report());
            return ExitCode::from(2);
        }
    };
    if cli.version {
        println!("{}", version_text());
        return ExitCode::SUCCESS;
    }
    if cli.print_defaults {
        print!("{DEFAULTS_TOML}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("{}", Failure::Config("no subcommand given; see --help".into()).report());
        return ExitCode::from(2);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.report());
            ExitCode::from(f.code())
        }
    }
}
