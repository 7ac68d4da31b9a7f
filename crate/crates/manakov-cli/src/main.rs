use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use manakov::config::ExperimentConfig;
use manakov::experiment::{find_tensor, run_experiment, write_simulation, write_stats, write_tensor_summary, Pipeline};
use manakov::fdpa;
use manakov::nli::{cache, TensorKind};
use manakov::reproduce::{reproduce, Figure, Overrides, Scale};
use manakov::{Error, Result};

/// Dual-polarization WDM fiber channel experiments.
#[derive(Parser, Debug)]
#[command(name = "manakov", version)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration (desk, desk-4sc, full, full-4sc, full-6sc), used when --config is absent.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build or inspect NLI coefficient tensors.
    Coeffs {
        #[command(subcommand)]
        action: CoeffsCmd,
    },
    /// Analytic, large-dispersion and optionally empirical NLI moments.
    Stats {
        #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
        power_dbm: f64,
        #[arg(long, default_value_t = 16)]
        max_lag: usize,
        /// Surrogate blocks for empirical moments (0 skips them).
        #[arg(long, default_value_t = 0)]
        blocks: usize,
    },
    /// Transmit and receive test blocks, writing symbols as CSV.
    Simulate {
        #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
        power_dbm: f64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Full rate sweep (and FDPA when enabled in the config).
    Rates,
    /// Power allocation from a rate-curves CSV.
    Fdpa {
        #[arg(long)]
        curves: PathBuf,
        /// Total launch power per channel per polarization.
        #[arg(long, allow_hyphen_values = true)]
        total_dbm: f64,
    },
    /// Print the resolved configuration as TOML.
    Config,
    /// Data series of a figure.
    Reproduce {
        #[arg(value_enum)]
        figure: FigArg,
        #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
        scale: ScaleArg,
    },
}

#[derive(Subcommand, Debug)]
enum CoeffsCmd {
    /// Build (or load from the cache) every tensor of the configured plan.
    Build,
    /// Write one tensor as `n,k,kp,re,im`.
    Dump {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Interfering WDM channel, for XPM kinds.
        #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
        channel: i32,
        #[arg(long, default_value_t = 0)]
        subcarrier: usize,
        #[arg(long, default_value_t = 0)]
        coi_subcarrier: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    S,
    STilde,
    C,
    CTilde,
    D,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FigArg {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    if let Some(s) = cli.seed {
        c.experiment.seed = s;
    }
    if let Some(o) = &cli.out {
        c.output.dir = o.clone();
    }
    c.resolved()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.cmd {
        Cmd::Fdpa { curves, total_dbm } => {
            let f = File::open(curves).map_err(|e| Error::Config(format!("{}: {e}", curves.display())))?;
            let cs = fdpa::read_curves_csv(&mut BufReader::new(f))?;
            let a = fdpa::fdpa_allocate(&cs, fdpa::dbm_to_mw(*total_dbm))?;
            if a.below_grid {
                eprintln!("warning: total power lies below the lowest simulated points; allocating below the grid");
            }
            if a.above_grid {
                eprintln!("warning: total power lies above the highest simulated points; allocating above the grid");
            }
            let stdout = std::io::stdout();
            match &cli.out {
                Some(dir) => {
                    let path = dir.join("allocation.csv");
                    let mut w = create(&path)?;
                    fdpa::write_allocation_csv(&cs, &a.powers, &mut w)?;
                    w.flush()?;
                    report(&[path]);
                }
                None => fdpa::write_allocation_csv(&cs, &a.powers, &mut stdout.lock())?,
            }
            eprintln!("objective {:.6} (uniform {:.6})", a.objective, a.uniform_objective);
            Ok(())
        }
        Cmd::Reproduce { figure, scale } => {
            let fig: Figure = format!("{figure:?}").to_lowercase().parse()?;
            let scale = match scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Full => Scale::Full,
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let ov = Overrides { seed: cli.seed, ..Default::default() };
            report(&reproduce(fig, scale, &out, &ov)?);
            Ok(())
        }
        _ => {
            let cfg = load_config(cli)?;
            let out = cfg.output.dir.clone();
            let p = Pipeline::new(cfg)?;
            match &cli.cmd {
                Cmd::Coeffs { action: CoeffsCmd::Build } => {
                    let t = p.tensors()?;
                    let path = out.join("coeffs.csv");
                    let mut w = create(&path)?;
                    write_tensor_summary(&p.hash, t, &mut w)?;
                    w.flush()?;
                    report(&[path]);
                }
                Cmd::Coeffs {
                    action: CoeffsCmd::Dump { kind, channel, subcarrier, coi_subcarrier },
                } => {
                    let kind = match kind {
                        KindArg::S => TensorKind::S,
                        KindArg::STilde => TensorKind::STilde,
                        KindArg::C => TensorKind::C,
                        KindArg::CTilde => TensorKind::CTilde,
                        KindArg::D => TensorKind::D,
                    };
                    let plan = p.plan_at(0.0)?;
                    let x = find_tensor(p.tensors()?, &plan, kind, *channel, *subcarrier, *coi_subcarrier)?;
                    let path = out.join(format!("tensor_{kind:?}_c{channel}_s{subcarrier}.csv").to_lowercase());
                    let mut w = create(&path)?;
                    cache::write_csv(x, &mut w)?;
                    w.flush()?;
                    report(&[path]);
                }
                Cmd::Config => print!("{}", p.cfg.to_toml()),
                Cmd::Stats { power_dbm, max_lag, blocks } => report(&write_stats(&p, *power_dbm, *max_lag, *blocks, &out)?),
                Cmd::Simulate { power_dbm, runs } => report(&write_simulation(&p, *power_dbm, *runs, &out)?),
                Cmd::Rates => {
                    let o = run_experiment(&p.cfg, &out)?;
                    for (dbm, alloc, m, r, se) in &o.summary {
                        eprintln!("{dbm:>6.1} dBm  {alloc:<8} {:<10} {r:.4} ± {se:.4}", m.name());
                    }
                    let mut files = vec![o.rates, o.fits, o.totals];
                    files.extend(o.curves);
                    files.extend(o.allocations);
                    report(&files);
                }
                _ => unreachable!("handled above"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
