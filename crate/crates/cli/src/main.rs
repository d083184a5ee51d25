use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wholebody::bench::report::{metrics_csv, summary_text, trajectory_csv};
use wholebody::bench::{
    check_certificate, emit_report, generate_scenarios, load_prepared, run_suite, Family, Prepared, RunMetrics,
    Scenario, Variant,
};
use wholebody::planner::{plan_episode, PlannerConfig, SearchMode};

#[derive(Parser)]
#[command(name = "wholebody", version, about = "Whole-body planner and benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scenario file and dump its trajectory.
    Plan {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunOpts,
        #[arg(long, value_enum, default_value_t = Mode::Bilevel)]
        mode: Mode,
        /// Also dump the distance-field slice at this height (meters).
        #[arg(long, value_name = "Z")]
        field_slice: Option<f64>,
    },
    /// Run families x variants and write metrics.
    Suite {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        run: RunOpts,
        /// Search modes to compare; each becomes one variant.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "bilevel")]
        mode: Vec<Mode>,
    },
    /// Run the preconfigured ablation set: bilevel, direct, and each
    /// single-term removal.
    Ablate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Check the feasibility certificates of scenario files.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Write generated scenarios as scenario files.
    Generate {
        #[arg(long, value_delimiter = ',', default_value = "free_space,out_of_reach,corridor,pick_place")]
        family: Vec<Family>,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Seed for scenario generation and the planner.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Objective evaluations per search block.
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Args)]
struct Source {
    /// Scenario files to run instead of generated ones.
    #[arg(long = "scenario", value_name = "FILE")]
    scenarios: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "free_space,out_of_reach,corridor,pick_place")]
    family: Vec<Family>,
    /// Generated scenarios per family.
    #[arg(long, default_value_t = 20)]
    count: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bilevel,
    Direct,
}

impl Mode {
    fn variant(self) -> Variant {
        match self {
            Mode::Bilevel => Variant::bilevel(),
            Mode::Direct => Variant::direct(),
        }
    }
}

fn planner_config(run: &RunOpts) -> Result<PlannerConfig> {
    let mut cfg = PlannerConfig { seed: run.seed, ..PlannerConfig::default() };
    if let Some(n) = run.max_evals {
        cfg.max_evals = n;
    }
    if let Some(n) = run.max_rounds {
        cfg.max_outer_rounds = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scenarios(source: &Source, seed: u64) -> Result<Vec<Scenario>> {
    if !source.scenarios.is_empty() {
        return source
            .scenarios
            .iter()
            .map(|p| Ok(load_prepared(p)?.scenario))
            .collect();
    }
    let mut out = Vec::new();
    for &f in &source.family {
        out.extend(generate_scenarios(f, source.count, seed)?);
    }
    Ok(out)
}

fn run_variants(source: &Source, run: &RunOpts, variants: &[Variant]) -> Result<()> {
    let cfg = planner_config(run)?;
    let scenarios = scenarios(source, run.seed)?;
    eprintln!("{} scenarios x {} variants", scenarios.len(), variants.len());
    let table = run_suite(&scenarios, variants, &cfg)?;
    emit_report(&table, &run.out)?;
    print!("{}", summary_text(&table));
    eprintln!("wrote {}", run.out.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn plan(path: &Path, run: &RunOpts, mode: Mode, field_slice: Option<f64>) -> Result<()> {
    let prepared: Prepared = load_prepared(path)?;
    let sc = &prepared.scenario;
    let mut cfg = planner_config(run)?;
    cfg.search_mode = match mode {
        Mode::Bilevel => SearchMode::BiLevel,
        Mode::Direct => SearchMode::Direct,
    };
    let results = plan_episode(&sc.waypoints, &sc.start_state, &prepared.ctx(), &cfg)?;
    create_dir(&run.out)?;
    write(run.out.join("trajectory.csv"), &trajectory_csv(&results)?)?;
    let metrics = RunMetrics::from_results(sc, &mode.variant().name, &results);
    write(run.out.join("metrics.csv"), &metrics_csv(&[&metrics])?)?;
    if let Some(z) = field_slice {
        let path = run.out.join("field_slice.csv");
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        prepared.field.write_slice_csv(z, std::io::BufWriter::new(file))?;
    }
    for (k, r) in results.iter().enumerate() {
        println!(
            "segment {k}: {} steps={} rounds={} evals={} total={:.4} latency={:.1}ms",
            if !r.attempted {
                "skipped"
            } else if r.converged {
                "converged"
            } else {
                "failed"
            },
            r.trajectory.steps(),
            r.outer_rounds_used,
            r.objective_evals,
            r.report.total,
            r.wall_time_ms
        );
    }
    println!("success: {}", metrics.success);
    Ok(())
}

fn validate(paths: &[PathBuf]) -> Result<bool> {
    let mut all_ok = true;
    for path in paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let verdict = Scenario::from_toml_str(&text, path)
            .and_then(Prepared::new)
            .and_then(|p| check_certificate(&p));
        match verdict {
            Ok(Some(check)) => {
                let ok = check.passed();
                all_ok &= ok;
                println!("{}: {}", path.display(), if ok { "ok" } else { "FAILED" });
                for (k, s) in check.segments.iter().enumerate() {
                    println!(
                        "  segment {k}: collision={} converged={} clearance={:.4} endpoint={:.2e}",
                        s.collision, s.all_converged, s.min_clearance, s.endpoint_error
                    );
                }
            }
            Ok(None) => println!("{}: ok (no certificate)", path.display()),
            Err(e) => {
                all_ok = false;
                println!("{}: FAILED ({e})", path.display());
            }
        }
    }
    Ok(all_ok)
}

fn generate(families: &[Family], count: usize, seed: u64, out: &Path) -> Result<()> {
    if families.is_empty() {
        bail!("no families given");
    }
    create_dir(out)?;
    for &f in families {
        for sc in generate_scenarios(f, count, seed)? {
            let path = out.join(format!("{}.toml", sc.name));
            sc.save(&path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan { scenario, run, mode, field_slice } => plan(scenario, run, *mode, *field_slice)?,
        Command::Suite { source, run, mode } => {
            let variants: Vec<Variant> = mode.iter().map(|m| m.variant()).collect();
            run_variants(source, run, &variants)?
        }
        Command::Ablate { source, run } => run_variants(source, run, &Variant::ablation_set())?,
        Command::Validate { scenarios } => {
            if !validate(scenarios)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Generate { family, count, seed, out } => generate(family, *count, *seed, out)?,
    }
    Ok(ExitCode::SUCCESS)
}
