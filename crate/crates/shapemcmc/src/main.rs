//! `shapemcmc` — sample binary segmentations of an image by MCMC over
//! level-set sign patterns.
//!
//! Subcommands:
//!
//! * `synth` — generate a synthetic noisy test image plus its ground
//!   truth (`disk`, `annulus`, `two_blobs`, `person_silhouette_like`).
//! * `sample` — run chains of the configured sampler on an image and
//!   write marginal-statistics artifacts (histogram, quantiles, traces,
//!   manifest).
//! * `lut` — build or verify the precomputed curve-length flip-delta
//!   cache.
//! * `compare` — run several samplers with matched seeds on one image
//!   and rank their convergence.
//! * `quantile` — threshold an existing histogram image into quantile
//!   segmentations and an overlay.
//!
//! A typical benchmark session:
//!
//! ```text
//! shapemcmc synth --shape disk --width 64 --height 64 --sigma 0.5 --out-dir bench
//! shapemcmc sample --image bench/image.pgm --ground-truth bench/ground_truth.pgm \
//!     --init fg --sampler gimh --iterations 100000 --out-dir bench/run
//! shapemcmc compare --image bench/image.pgm --ground-truth bench/ground_truth.pgm \
//!     --init fg --samplers gimh,gibbs --chains 20 --out-dir bench/cmp
//! shapemcmc quantile --histogram bench/run/histogram.pgm --out-dir bench/quant
//! ```
//!
//! Every run writes `manifest.cfg`; `--config manifest.cfg` reproduces it
//! byte for byte. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 internal invariant violation.

use std::path::{Path, PathBuf};
use std::process;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use shapemcmc::config::{
    cli_name, ConnectivityChoice, ConstraintChoice, EnergyChoice, InitChoice, Overrides,
    PriorChoice, RunConfig, SamplerChoice,
};
use shapemcmc::error::{CliError, CliResult, EXIT_USAGE};
use shapemcmc::lutcache;
use shapemcmc::pgm::{labeling_to_field, read_labeling, read_pgm, write_pgm8};
use shapemcmc::runner;
use shapemcmc::synth::{ground_truth, synth_image, Shape};

#[derive(Parser)]
#[command(name = "shapemcmc", version, about = "MCMC sampling of binary level-set segmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic noisy image and its ground-truth labeling.
    Synth(SynthArgs),
    /// Run sampling chains on an image and write marginal artifacts.
    Sample(SampleArgs),
    /// Manage the precomputed curve-length flip-delta cache.
    Lut(LutArgs),
    /// Run several samplers with matched seeds and compare convergence.
    Compare(CompareArgs),
    /// Threshold a histogram image into quantile segmentations.
    Quantile(QuantileArgs),
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

#[derive(Args)]
struct SynthArgs {
    /// Shape family: disk, annulus, two_blobs, person_silhouette_like.
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Gaussian noise standard deviation (intensity units).
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

/// Run-configuration flags shared by `sample` and `compare`; every flag
/// overrides the matching config-file key.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    /// Record every n-th post-burn-in sample.
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads for chain-level parallelism (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerChoice>,
    /// Topological constraint of the tc-gimh sampler.
    #[arg(long, value_enum)]
    constraint: Option<ConstraintChoice>,
    #[arg(long, value_enum)]
    energy: Option<EnergyChoice>,
    #[arg(long, value_enum)]
    prior: Option<PriorChoice>,
    /// Prior weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Truncation width of the two unbounded proposal ranges.
    #[arg(long)]
    beta_inf: Option<f64>,
    #[arg(long)]
    mask_radius_min: Option<f64>,
    /// Defaults to half the image's short side.
    #[arg(long)]
    mask_radius_max: Option<f64>,
    /// Initialization: a random circle inside the ground truth (fg) or
    /// anywhere (random).
    #[arg(long, value_enum)]
    init: Option<InitChoice>,
    #[arg(long, value_enum)]
    connectivity: Option<ConnectivityChoice>,
    /// Input image (binary PGM).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Ground-truth labeling (PGM); enables fg init and appearance
    /// estimation from the truth.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Curve-length flip-delta cache; built on demand if missing.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigFlags {
    /// Resolves file + flags + defaults into a validated config.
    fn resolve(self) -> CliResult<RunConfig> {
        let file = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        let flags = Overrides {
            seed: self.seed,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            chains: self.chains,
            jobs: self.jobs,
            sampler: self.sampler,
            constraint: self.constraint,
            energy: self.energy,
            prior: self.prior,
            lambda: self.lambda,
            beta_inf: self.beta_inf,
            mask_radius_min: self.mask_radius_min,
            mask_radius_max: self.mask_radius_max,
            init: self.init,
            connectivity: self.connectivity,
            image: self.image,
            ground_truth: self.ground_truth,
            lut: self.lut,
            out_dir: self.out_dir,
        };
        RunConfig::resolve(flags.or(file))
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Samplers to race, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [SamplerChoice::Gimh, SamplerChoice::Gibbs, SamplerChoice::Bfps])]
    samplers: Vec<SamplerChoice>,
    /// Fraction of the initial-to-best energy gap left open at the
    /// convergence threshold.
    #[arg(long, default_value_t = runner::CONVERGENCE_FRACTION)]
    fraction: f64,
}

#[derive(Args)]
struct LutArgs {
    #[command(subcommand)]
    action: LutAction,
}

#[derive(Subcommand)]
enum LutAction {
    /// Compute all 2^21 flip-delta entries and write the cache file.
    Build {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "4-8")]
        connectivity: ConnectivityChoice,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check a cache file: structure, checksum, and oracle spot checks.
    Verify {
        #[arg(long)]
        path: PathBuf,
        /// Entries to recompute against the oracle.
        #[arg(long, default_value_t = 1000)]
        spot_checks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct QuantileArgs {
    /// 16-bit histogram PGM from a sampling run.
    #[arg(long)]
    histogram: PathBuf,
    /// Thresholds, descending.
    #[arg(long, value_delimiter = ',', default_values_t = runner::OVERLAY_THRESHOLDS)]
    thresholds: Vec<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            process::exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        process::exit(err.exit_code());
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Lut(args) => cmd_lut(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Quantile(args) => cmd_quantile(args),
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::from_io(path, e))
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    if args.width == 0 || args.height == 0 {
        return Err(CliError::Usage("width and height must be positive".to_string()));
    }
    let truth = ground_truth(args.shape, args.width, args.height);
    let image = synth_image(&truth, args.sigma, args.seed)?;
    create_dir(&args.out_dir)?;
    let image_path = args.out_dir.join("image.pgm");
    let truth_path = args.out_dir.join("ground_truth.pgm");
    write_pgm8(image.grid(), &image_path)?;
    write_pgm8(&labeling_to_field(&truth), &truth_path)?;
    println!(
        "wrote {} and {} ({}, {}x{}, sigma {}, seed {})",
        image_path.display(),
        truth_path.display(),
        args.shape,
        args.width,
        args.height,
        args.sigma,
        args.seed
    );
    Ok(())
}

/// Loads the image, optional ground truth, and optional flip-delta cache
/// a run needs.
fn load_inputs(
    config: &RunConfig,
) -> CliResult<(
    shapemcmc_core::grid::Image,
    Option<shapemcmc_core::grid::Labeling>,
    Option<std::sync::Arc<shapemcmc_core::energy::CurveLengthLut>>,
)> {
    let image_path = config.image.as_ref().ok_or_else(|| {
        CliError::Usage("an input image is required (--image or config key 'image')".to_string())
    })?;
    let image = read_pgm(image_path)?;
    let truth = match &config.ground_truth {
        Some(path) => {
            let truth = read_labeling(path)?;
            if truth.width() != image.grid().width() || truth.height() != image.grid().height() {
                return Err(CliError::data(
                    path,
                    format!(
                        "ground truth is {}x{}, image is {}x{}",
                        truth.width(),
                        truth.height(),
                        image.grid().width(),
                        image.grid().height()
                    ),
                ));
            }
            Some(truth)
        }
        None => None,
    };
    let lut = match (&config.lut, config.prior) {
        (Some(path), PriorChoice::Curve) => {
            Some(lutcache::ensure_cache(path, config.connectivity.pair())?)
        }
        (Some(_), PriorChoice::Ising) => {
            return Err(CliError::Usage(
                "a flip-delta cache (lut) only applies to the curve prior; set prior = curve"
                    .to_string(),
            ));
        }
        (None, _) => None,
    };
    Ok((image, truth, lut))
}

fn cmd_sample(args: SampleArgs) -> CliResult<()> {
    let config = args.flags.resolve()?;
    let (image, truth, lut) = load_inputs(&config)?;
    let started = Instant::now();
    let (_, artifacts) = runner::run_chains(&image, truth.as_ref(), &config, lut, true)?;
    runner::write_sample_artifacts(&config.out_dir, &config, &artifacts)?;
    for (c, chain) in artifacts.iter().enumerate() {
        let s = &chain.summary;
        println!(
            "chain {c}: energy {:.3} -> {:.3} (best {:.3}), accepted {}/{}, recorded {}",
            s.initial_energy, s.final_energy, s.best_energy, s.accepted, s.iterations, s.recorded
        );
    }
    println!(
        "artifacts in {} ({} chains, {:.1}s)",
        config.out_dir.display(),
        artifacts.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_lut(args: LutArgs) -> CliResult<()> {
    match args.action {
        LutAction::Build { out, connectivity, jobs } => {
            let started = Instant::now();
            let entries = if jobs == 0 {
                lutcache::build_entries()
            } else {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
                pool.install(lutcache::build_entries)
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            lutcache::write_cache(&out, &entries, connectivity.pair())?;
            println!(
                "built {} entries in {:.1}s, wrote {}",
                entries.len(),
                started.elapsed().as_secs_f64(),
                out.display()
            );
            Ok(())
        }
        LutAction::Verify { path, spot_checks, seed } => {
            let report = lutcache::verify_cache(&path, spot_checks, seed)?;
            println!(
                "{}: checksum ok, {}/{} spot checks match the oracle (connectivity {})",
                path.display(),
                report.spot_checks,
                spot_checks,
                cli_name(if report.connectivity == shapemcmc_core::grid::ConnectivityPair::FOUR_EIGHT {
                    ConnectivityChoice::FourEight
                } else {
                    ConnectivityChoice::EightFour
                })
            );
            Ok(())
        }
    }
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let config = args.flags.resolve()?;
    if !(0.0..=1.0).contains(&args.fraction) {
        return Err(CliError::Usage(format!(
            "fraction must lie in [0, 1], got {}",
            args.fraction
        )));
    }
    let mut samplers = args.samplers.clone();
    samplers.dedup();
    let (image, truth, _) = load_inputs(&config)?;
    let started = Instant::now();
    let outcome = runner::compare_samplers(&image, truth.as_ref(), &config, &samplers, args.fraction)?;
    runner::write_compare_artifacts(&config.out_dir, &config, &samplers, &outcome)?;

    let mut ranked: Vec<&runner::SamplerComparison> = outcome.per_sampler.iter().collect();
    ranked.sort_by_key(|s| s.median_iterations);
    println!(
        "threshold energy {:.4} (fraction {} of the initial-to-best gap)",
        outcome.stats.threshold, args.fraction
    );
    for row in &ranked {
        println!(
            "{}: median {} iterations to threshold ({}/{} chains censored)",
            cli_name(row.sampler),
            row.median_iterations,
            row.censored_chains,
            config.chains
        );
    }
    println!(
        "fastest: {} ({} samplers, {} chains each, {:.1}s)",
        cli_name(ranked[0].sampler),
        samplers.len(),
        config.chains,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_quantile(args: QuantileArgs) -> CliResult<()> {
    if args.thresholds.is_empty() {
        return Err(CliError::Usage("at least one threshold is required".to_string()));
    }
    if args.thresholds.windows(2).any(|w| w[0] < w[1]) {
        return Err(CliError::Usage(
            "thresholds must be sorted descending".to_string(),
        ));
    }
    if args.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::Usage(
            "thresholds must lie in [0, 1]".to_string(),
        ));
    }
    let marginals = read_pgm(&args.histogram)?;
    create_dir(&args.out_dir)?;
    let overlay = runner::overlay_field(marginals.grid(), &args.thresholds);
    write_pgm8(&overlay, &args.out_dir.join("overlay.pgm"))?;
    for &t in &args.thresholds {
        let seg = runner::threshold_field(marginals.grid(), t);
        let name = format!("quantile_{:02}.pgm", (t * 100.0).round() as u32);
        write_pgm8(&labeling_to_field(&seg), &args.out_dir.join(name))?;
    }
    println!(
        "wrote overlay.pgm and {} quantile segmentations in {}",
        args.thresholds.len(),
        args.out_dir.display()
    );
    Ok(())
}
