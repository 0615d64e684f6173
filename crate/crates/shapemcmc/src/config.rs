//! Run configuration: a flat `key=value` file merged with command-line
//! flags.
//!
//! Every sampling run is described by a [`RunConfig`]. Values come from up
//! to three layers, later layers winning:
//!
//! 1. built-in defaults,
//! 2. a config file (`--config run.cfg`) of `key = value` lines,
//! 3. command-line flags.
//!
//! The file grammar is deliberately tiny: one `key = value` per line,
//! `#`-comments, blank lines ignored. Unknown keys are rejected — a typo'd
//! knob must fail loudly, not silently run the default. The keys are the
//! long flag names with `-` replaced by `_` (`mask_radius_min`, …).
//!
//! The reproducibility manifest written by every run is itself a valid
//! config file containing every resolved key plus the code `version`, so
//! re-running with `--config manifest.cfg` (and the same inputs) reproduces
//! the artifacts byte for byte. A manifest from a different code version is
//! refused rather than silently re-interpreted.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shapemcmc_core::grid::ConnectivityPair;
use shapemcmc_core::sampler::{ChainOptions, SamplerConfig, SamplerKind};
use shapemcmc_core::topology::TopologyConstraint;

use crate::error::{CliError, CliResult};

/// Sampler selector, named as on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SamplerChoice {
    Gimh,
    TcGimh,
    Gibbs,
    Bfps,
}

impl SamplerChoice {
    pub fn kind(self) -> SamplerKind {
        match self {
            SamplerChoice::Gimh => SamplerKind::Gimh,
            SamplerChoice::TcGimh => SamplerKind::TcGimh,
            SamplerChoice::Gibbs => SamplerKind::Gibbs,
            SamplerChoice::Bfps => SamplerKind::Bfps,
        }
    }
}

/// Topology constraint selector: `none`, `tp` (topology-preserving), `gp`
/// (genus-preserving), `ccp` (connected-component-preserving).
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ConstraintChoice {
    None,
    Tp,
    Gp,
    Ccp,
}

impl ConstraintChoice {
    pub fn constraint(self) -> TopologyConstraint {
        match self {
            ConstraintChoice::None => TopologyConstraint::Unconstrained,
            ConstraintChoice::Tp => TopologyConstraint::TopologyPreserving,
            ConstraintChoice::Gp => TopologyConstraint::GenusPreserving,
            ConstraintChoice::Ccp => TopologyConstraint::ComponentPreserving,
        }
    }
}

/// Data-term selector: two-phase Gaussian or per-phase histograms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EnergyChoice {
    Gaussian,
    Hist,
}

/// Prior selector: Ising neighbor affinity or geometric curve length.
/// The curve-length prior is where a precomputed flip-delta table
/// (`lut = path`) pays off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PriorChoice {
    Ising,
    Curve,
}

/// Initialization mode: a random circle inside the ground-truth foreground
/// (`fg`, requires a ground truth) or anywhere in the image (`random`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum InitChoice {
    Fg,
    Random,
}

/// Connectivity pair selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ConnectivityChoice {
    /// Foreground 4-connected, background 8-connected.
    #[value(name = "4-8")]
    FourEight,
    /// Foreground 8-connected, background 4-connected.
    #[value(name = "8-4")]
    EightFour,
}

impl ConnectivityChoice {
    pub fn pair(self) -> ConnectivityPair {
        match self {
            ConnectivityChoice::FourEight => ConnectivityPair::FOUR_EIGHT,
            ConnectivityChoice::EightFour => ConnectivityPair::EIGHT_FOUR,
        }
    }
}

/// The canonical CLI spelling of a [`clap::ValueEnum`] value.
pub fn cli_name<T: clap::ValueEnum>(value: T) -> String {
    value
        .to_possible_value()
        .expect("config enums have no skipped variants")
        .get_name()
        .to_string()
}

/// Parses a [`clap::ValueEnum`] from a config-file value.
fn parse_value<T: clap::ValueEnum>(key: &str, value: &str) -> CliResult<T> {
    T::from_str(value, false)
        .map_err(|_| CliError::Usage(format!("config key '{key}': invalid value '{value}'")))
}

/// One optional value per knob; `None` means "not specified at this layer".
///
/// Both the config file and the flag set parse into this shape, and layers
/// combine with [`Overrides::or`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub burn_in: Option<u64>,
    pub thin: Option<u64>,
    pub chains: Option<usize>,
    pub jobs: Option<usize>,
    pub sampler: Option<SamplerChoice>,
    pub constraint: Option<ConstraintChoice>,
    pub energy: Option<EnergyChoice>,
    pub prior: Option<PriorChoice>,
    pub lambda: Option<f64>,
    pub beta_inf: Option<f64>,
    pub mask_radius_min: Option<f64>,
    pub mask_radius_max: Option<f64>,
    pub init: Option<InitChoice>,
    pub connectivity: Option<ConnectivityChoice>,
    pub image: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub lut: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    /// Layer merge: values from `self` win, holes fall through to `base`.
    pub fn or(self, base: Overrides) -> Overrides {
        Overrides {
            seed: self.seed.or(base.seed),
            iterations: self.iterations.or(base.iterations),
            burn_in: self.burn_in.or(base.burn_in),
            thin: self.thin.or(base.thin),
            chains: self.chains.or(base.chains),
            jobs: self.jobs.or(base.jobs),
            sampler: self.sampler.or(base.sampler),
            constraint: self.constraint.or(base.constraint),
            energy: self.energy.or(base.energy),
            prior: self.prior.or(base.prior),
            lambda: self.lambda.or(base.lambda),
            beta_inf: self.beta_inf.or(base.beta_inf),
            mask_radius_min: self.mask_radius_min.or(base.mask_radius_min),
            mask_radius_max: self.mask_radius_max.or(base.mask_radius_max),
            init: self.init.or(base.init),
            connectivity: self.connectivity.or(base.connectivity),
            image: self.image.or(base.image),
            ground_truth: self.ground_truth.or(base.ground_truth),
            lut: self.lut.or(base.lut),
            out_dir: self.out_dir.or(base.out_dir),
        }
    }

    /// Parses a config file. Unknown keys and malformed lines are usage
    /// errors naming the line number.
    pub fn from_file(path: &Path) -> CliResult<Overrides> {
        let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        Overrides::from_str_checked(&text)
            .map_err(|msg| CliError::Usage(format!("{}: {msg}", path.display())))
    }

    /// Parses config text; split from [`Overrides::from_file`] for tests.
    fn from_str_checked(text: &str) -> Result<Overrides, String> {
        fn num<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| format!("line {line}: key '{key}': {e}"))
        }

        let mut out = Overrides::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| format!("line {line}: expected 'key = value', got '{stripped}'"))?;
            let (key, value) = (key.trim(), value.trim());
            let usage = |e: CliError| e.to_string();
            match key {
                "seed" => out.seed = Some(num(key, value, line)?),
                "iterations" => out.iterations = Some(num(key, value, line)?),
                "burn_in" => out.burn_in = Some(num(key, value, line)?),
                "thin" => out.thin = Some(num(key, value, line)?),
                "chains" => out.chains = Some(num(key, value, line)?),
                "jobs" => out.jobs = Some(num(key, value, line)?),
                "sampler" => out.sampler = Some(parse_value(key, value).map_err(usage)?),
                "constraint" => out.constraint = Some(parse_value(key, value).map_err(usage)?),
                "energy" => out.energy = Some(parse_value(key, value).map_err(usage)?),
                "prior" => out.prior = Some(parse_value(key, value).map_err(usage)?),
                "lambda" => out.lambda = Some(num(key, value, line)?),
                "beta_inf" => out.beta_inf = Some(num(key, value, line)?),
                "mask_radius_min" => out.mask_radius_min = Some(num(key, value, line)?),
                "mask_radius_max" => out.mask_radius_max = Some(num(key, value, line)?),
                "init" => out.init = Some(parse_value(key, value).map_err(usage)?),
                "connectivity" => out.connectivity = Some(parse_value(key, value).map_err(usage)?),
                "image" => out.image = Some(PathBuf::from(value)),
                "ground_truth" => out.ground_truth = Some(PathBuf::from(value)),
                "lut" => out.lut = Some(PathBuf::from(value)),
                "out_dir" => out.out_dir = Some(PathBuf::from(value)),
                "version" => {
                    if value != env!("CARGO_PKG_VERSION") {
                        return Err(format!(
                            "line {line}: config was written by version {value}, this is {}",
                            env!("CARGO_PKG_VERSION")
                        ));
                    }
                }
                _ => return Err(format!("line {line}: unknown key '{key}'")),
            }
        }
        Ok(out)
    }
}

/// A fully resolved run description: every knob has a value and has been
/// validated.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub chains: usize,
    /// Worker threads for chain-level parallelism; 0 = one per core.
    pub jobs: usize,
    pub sampler: SamplerChoice,
    pub constraint: ConstraintChoice,
    pub energy: EnergyChoice,
    pub prior: PriorChoice,
    pub lambda: f64,
    pub beta_inf: f64,
    pub mask_radius_min: f64,
    /// `None` resolves to `min(width, height) / 2` once the image is known.
    pub mask_radius_max: Option<f64>,
    pub init: InitChoice,
    pub connectivity: ConnectivityChoice,
    pub image: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub lut: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Applies defaults to unset knobs and validates the result.
    pub fn resolve(overrides: Overrides) -> CliResult<RunConfig> {
        let config = RunConfig {
            seed: overrides.seed.unwrap_or(1),
            iterations: overrides.iterations.unwrap_or(100_000),
            burn_in: overrides.burn_in.unwrap_or(10_000),
            thin: overrides.thin.unwrap_or(10),
            chains: overrides.chains.unwrap_or(4),
            jobs: overrides.jobs.unwrap_or(0),
            sampler: overrides.sampler.unwrap_or(SamplerChoice::Gimh),
            constraint: overrides.constraint.unwrap_or(ConstraintChoice::None),
            energy: overrides.energy.unwrap_or(EnergyChoice::Gaussian),
            prior: overrides.prior.unwrap_or(PriorChoice::Ising),
            lambda: overrides.lambda.unwrap_or(1.0),
            beta_inf: overrides.beta_inf.unwrap_or(1.0),
            mask_radius_min: overrides.mask_radius_min.unwrap_or(2.0),
            mask_radius_max: overrides.mask_radius_max,
            init: overrides.init.unwrap_or(InitChoice::Random),
            connectivity: overrides.connectivity.unwrap_or(ConnectivityChoice::FourEight),
            image: overrides.image,
            ground_truth: overrides.ground_truth,
            lut: overrides.lut,
            out_dir: overrides.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks cross-field invariants that do not need the image.
    pub fn validate(&self) -> CliResult<()> {
        if self.chains == 0 {
            return Err(CliError::Usage("chains must be at least 1".to_string()));
        }
        if self.init == InitChoice::Fg && self.ground_truth.is_none() {
            return Err(CliError::Usage(
                "init fg needs a ground-truth labeling (--ground-truth or config key)".to_string(),
            ));
        }
        // Chain options (with a placeholder mask maximum when it is still
        // image-dependent) delegate the numeric checks to the sampler.
        self.chain_options((64, 64)).map(|_| ())
    }

    /// Builds the sampler options for an image of the given dimensions,
    /// resolving the default mask-radius maximum to half the short side.
    pub fn chain_options(&self, dims: (usize, usize)) -> CliResult<ChainOptions> {
        let r_max = self
            .mask_radius_max
            .unwrap_or_else(|| (dims.0.min(dims.1) as f64 / 2.0).max(self.mask_radius_min));
        let config = SamplerConfig {
            r_min: self.mask_radius_min,
            r_max,
            beta_inf: self.beta_inf,
            constraint: self.constraint.constraint(),
            ..SamplerConfig::default()
        };
        let opts = ChainOptions {
            sampler: self.sampler.kind(),
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            config,
            ..ChainOptions::default()
        };
        opts.validate().map_err(CliError::from_core)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CliError::Usage(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(opts)
    }

    /// Renders the full resolved configuration as manifest text — a valid
    /// config file reproducing this run, plus the code version.
    pub fn manifest(&self) -> String {
        fn path_or_empty(p: &Option<PathBuf>) -> String {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        }
        let mut out = String::new();
        out.push_str("# reproducibility manifest: a valid config file for --config\n");
        out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("iterations = {}\n", self.iterations));
        out.push_str(&format!("burn_in = {}\n", self.burn_in));
        out.push_str(&format!("thin = {}\n", self.thin));
        out.push_str(&format!("chains = {}\n", self.chains));
        out.push_str(&format!("jobs = {}\n", self.jobs));
        out.push_str(&format!("sampler = {}\n", cli_name(self.sampler)));
        out.push_str(&format!("constraint = {}\n", cli_name(self.constraint)));
        out.push_str(&format!("energy = {}\n", cli_name(self.energy)));
        out.push_str(&format!("prior = {}\n", cli_name(self.prior)));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("beta_inf = {}\n", self.beta_inf));
        out.push_str(&format!("mask_radius_min = {}\n", self.mask_radius_min));
        if let Some(r) = self.mask_radius_max {
            out.push_str(&format!("mask_radius_max = {r}\n"));
        }
        out.push_str(&format!("init = {}\n", cli_name(self.init)));
        out.push_str(&format!("connectivity = {}\n", cli_name(self.connectivity)));
        if self.image.is_some() {
            out.push_str(&format!("image = {}\n", path_or_empty(&self.image)));
        }
        if self.ground_truth.is_some() {
            out.push_str(&format!("ground_truth = {}\n", path_or_empty(&self.ground_truth)));
        }
        if self.lut.is_some() {
            out.push_str(&format!("lut = {}\n", path_or_empty(&self.lut)));
        }
        out.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        out
    }
}
