use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use cex_core::bench::{cap_label, run_bench, BenchConfig};
use cex_core::blocking::separate;
use cex_core::core_solver::{least_core, solve_core, CoreOptions, CoreStatus, SeedStrategy};
use cex_core::gen::{gen_airport, gen_qsat2, qsat2_bruteforce, AirportGenConfig, Dnf, GValueRule};
use cex_core::milp::Engine;
use cex_core::restricted::{solve_dyadic, solve_single_sided, RestrictedStatus};
use cex_core::{ExchangeInstance, Outcome};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// `println!` that exits quietly once stdout is closed (e.g. piped to `head`).
macro_rules! out {
    ($($t:tt)*) => {
        if writeln!(std::io::stdout(), $($t)*).is_err() {
            std::process::exit(0);
        }
    };
}

macro_rules! out_raw {
    ($($t:tt)*) => {
        if write!(std::io::stdout(), $($t)*).is_err() {
            std::process::exit(0);
        }
    };
}

const EXIT_EMPTY: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "cex", version, about = "Core-stable outcomes for combinatorial exchanges with budgets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Airport,
    Qsat2,
}

#[derive(Clone, Copy, ValueEnum)]
enum GRule {
    Count,
    Scaled,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance as JSON.
    Gen {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        bidders: usize,
        #[arg(long, default_value_t = 6)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        airports: usize,
        /// DNF formula for qsat2, e.g. "x1 & !y1 | x2".
        #[arg(long)]
        formula: Option<String>,
        /// Number of x variables (default: largest index used).
        #[arg(long)]
        n: Option<usize>,
        /// Number of y variables (default: largest index used).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum, default_value = "count")]
        g_rule: GRule,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute a core (or restricted) outcome.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        /// core | ncore:K | dyadic | single-sided
        #[arg(long, default_value = "core")]
        mode: String,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        time_limit_ms: Option<u64>,
        /// Seed the cut pool with this many small coalitions.
        #[arg(long, default_value_t = 0)]
        seed_coalitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test an outcome against blocking coalitions.
    Check {
        #[arg(long = "in")]
        input: PathBuf,
        /// An outcome, or any result JSON with an "outcome" field.
        #[arg(long)]
        outcome: PathBuf,
        /// Largest coalition size; omit for the full core.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Run an experiment grid described by a key=value config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest ε with a non-empty ε-core.
    Leastcore {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        time_limit_ms: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CliResult = Result<u8, Box<dyn std::error::Error>>;

fn read_instance(path: &Path) -> Result<ExchangeInstance, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ExchangeInstance::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn read_outcome(path: &Path) -> Result<Outcome, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut v: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = v.get_mut("outcome") {
        v = inner.take();
    }
    if v.is_null() {
        return Err(format!("{}: no outcome present", path.display()).into());
    }
    Ok(serde_json::from_value(v).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn write_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(value)?)?;
    }
    Ok(())
}

fn describe(inst: &ExchangeInstance, o: &Outcome) -> String {
    let mut s = String::new();
    for b in &inst.buyers {
        if let Some(Some(k)) = o.buyer_alloc.get(&b.id) {
            let bid = &b.bids[*k];
            let _ = writeln!(
                s,
                "  buyer {} gets {{{}}} (value {}) and pays {}",
                b.id,
                bid.bundle.join(", "),
                bid.value,
                o.buyer_price[&b.id]
            );
        }
    }
    for sl in &inst.sellers {
        if let Some(Some(k)) = o.seller_alloc.get(&sl.id) {
            let ask = &sl.asks[*k];
            let _ = writeln!(
                s,
                "  seller {} sells {{{}}} (reservation {}) and receives {}",
                sl.id,
                ask.bundle.join(", "),
                ask.value,
                o.seller_price[&sl.id]
            );
        }
    }
    s
}

fn parse_mode(mode: &str) -> Result<Option<Option<usize>>, String> {
    match mode {
        "core" => Ok(Some(None)),
        "dyadic" | "single-sided" => Ok(None),
        _ => match mode.strip_prefix("ncore:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(Some(Some(k))),
            _ => Err(format!("unknown mode \"{mode}\" (core, ncore:K, dyadic, single-sided)")),
        },
    }
}

fn solve(
    input: &Path,
    mode: &str,
    epsilon: f64,
    time_limit: Option<Duration>,
    seed_coalitions: usize,
    out: &Option<PathBuf>,
) -> CliResult {
    let inst = read_instance(input)?;
    let engine = Engine::builtin();
    let restricted_code = |s: RestrictedStatus| match s {
        RestrictedStatus::Optimal => 0,
        RestrictedStatus::Infeasible => EXIT_EMPTY,
        RestrictedStatus::Timeout => EXIT_TIMEOUT,
    };
    match (parse_mode(mode)?, mode) {
        (Some(cap), _) => {
            let opts = CoreOptions {
                max_coalition_size: cap,
                epsilon,
                time_limit,
                seeds: if seed_coalitions > 0 {
                    SeedStrategy::Coalitions {
                        max_size: cap.unwrap_or(3).min(3),
                        count: seed_coalitions,
                    }
                } else {
                    SeedStrategy::None
                },
                ..CoreOptions::default()
            };
            let r = solve_core(&inst, &opts, &engine)?;
            write_json(out, &r)?;
            out!("mode: {mode} (coalitions up to {})", cap_label(cap));
            match r.status {
                CoreStatus::CoreOutcome => out!("status: core outcome"),
                CoreStatus::CoreEmpty => out!("status: core empty"),
                CoreStatus::Timeout => out!("status: timeout"),
            }
            out!("welfare: {}", r.welfare);
            out!("iterations: {}, cuts: {}, time: {:.3}s", r.iterations, r.cut_pool.len(), r.wall_time_ms / 1000.0);
            if let Some(o) = &r.outcome {
                out_raw!("{}", describe(&inst, o));
            }
            Ok(match r.status {
                CoreStatus::CoreOutcome => 0,
                CoreStatus::CoreEmpty => EXIT_EMPTY,
                CoreStatus::Timeout => EXIT_TIMEOUT,
            })
        }
        (None, "dyadic") => {
            let r = solve_dyadic(&inst, &engine)?;
            write_json(out, &r)?;
            out!("mode: dyadic\nstatus: {:?}\nwelfare: {}", r.status, r.welfare);
            if let Some(o) = &r.outcome {
                out_raw!("{}", describe(&inst, o));
            }
            Ok(restricted_code(r.status))
        }
        (None, _) => {
            let r = solve_single_sided(&inst, &engine)?;
            write_json(out, &r)?;
            out!(
                "mode: single-sided\nstatus: {:?}\nwelfare: {}\ncapped revenue: {} (best {})",
                r.status, r.welfare, r.capped_revenue, r.z_star
            );
            if let Some(b) = r.blocked_by_enumeration {
                out!("coalition audit: {}", if b { "blocked" } else { "not blocked" });
            }
            if let Some(o) = &r.outcome {
                out_raw!("{}", describe(&inst, o));
            }
            Ok(restricted_code(r.status))
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let ms = |t: Option<u64>| t.map(Duration::from_millis);
    match cli.command {
        Command::Gen {
            kind,
            seed,
            bidders,
            items,
            airports,
            formula,
            n,
            m,
            g_rule,
            out,
        } => {
            let json = match kind {
                Kind::Airport => {
                    let c = AirportGenConfig {
                        num_airports: airports,
                        ..AirportGenConfig::new(bidders, items, seed)
                    };
                    gen_airport(&c)?.to_json()
                }
                Kind::Qsat2 => {
                    let text = formula.ok_or("qsat2 needs --formula")?;
                    let dnf = Dnf::parse(&text, n, m)?;
                    let rule = match g_rule {
                        GRule::Count => GValueRule::Count,
                        GRule::Scaled => GValueRule::Scaled,
                    };
                    let r = gen_qsat2(&dnf, rule)?;
                    if let Ok(v) = qsat2_bruteforce(&dnf) {
                        eprintln!("formula is {}; welfare threshold {}", if v { "true" } else { "false" }, r.threshold);
                    }
                    r.instance.to_json()
                }
            };
            match out {
                Some(p) => fs::write(p, json)?,
                None => out!("{json}"),
            }
            Ok(0)
        }
        Command::Solve {
            input,
            mode,
            epsilon,
            time_limit_ms,
            seed_coalitions,
            out,
        } => solve(&input, &mode, epsilon, ms(time_limit_ms), seed_coalitions, &out),
        Command::Check {
            input,
            outcome,
            cap,
            epsilon,
        } => {
            let inst = read_instance(&input)?;
            let o = read_outcome(&outcome)?;
            let report = separate(&inst, &o, cap, epsilon, &Engine::builtin())?;
            out!("{}", if report.blocked { "blocked" } else { "not blocked" });
            out!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Bench { config, out } => {
            let mut c = BenchConfig::from_file(&config)?;
            if let Some(o) = out {
                c.out = o;
            }
            let rows = run_bench(&c)?;
            out!("bidders items cap solved/seeds avg_runtime_s in_3 in_5 in_core");
            for r in &rows {
                out!(
                    "{} {} {} {}/{} {} {} {} {}",
                    r.bidders,
                    r.items,
                    cap_label(r.cap),
                    r.solved,
                    r.seeds,
                    r.avg_runtime_s.map_or("-".into(), |t| format!("{t:.3}")),
                    r.in_3_core,
                    r.in_5_core,
                    r.in_core
                );
            }
            out!("reports written to {}", c.out.display());
            Ok(0)
        }
        Command::Leastcore {
            input,
            cap,
            tolerance,
            time_limit_ms,
            out,
        } => {
            let inst = read_instance(&input)?;
            let lc = least_core(&inst, cap, tolerance, ms(time_limit_ms), &Engine::builtin())?;
            write_json(&out, &lc)?;
            out!("least-core epsilon: {}", lc.delta);
            out!("welfare: {}", lc.result.welfare);
            out!("probes: {}", lc.probes.len());
            if let Some(o) = &lc.result.outcome {
                out_raw!("{}", describe(&inst, o));
            }
            Ok(if lc.result.status == CoreStatus::Timeout { EXIT_TIMEOUT } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
