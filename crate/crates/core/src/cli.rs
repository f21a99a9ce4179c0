//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on numerical
//! failures (divergence, non-convergence, state explosion).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::capacity::{CapacityRegion, NetworkFile};
use crate::error::Error;
use crate::experiments::{
    bhat_finiteness_check, counterexample_oscillation, insensitivity_experiment,
    limit_convergence_experiment, InsensitivityConfig,
};
use crate::format::{fmt_sig, join_floats, join_semicolon};
use crate::pf::{pf_objective, solve_pf, PfPolicy, DEFAULT_TOL};
use crate::policy::AllocationPolicy;
use crate::potential::{CounterexampleParams, LogPotential};
use crate::simulator::{simulate_replicas, pooled_distribution, RateConvention, SimParams, TrafficSpec};
use crate::stationary::{stationary_pi, DEFAULT_TAIL_TOL};

#[derive(Debug, Parser)]
#[command(name = "bandshare", version, about = "Flow-level bandwidth sharing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Seed for all randomness.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for replicas (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Omit the timestamp header line.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PotentialChoice {
    Bf,
    Counterexample,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Bf,
    Pf,
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionChoice {
    StageMean,
    Literal,
}

#[derive(Debug, Clone, Args)]
pub struct PotentialArgs {
    #[arg(long, value_enum, default_value = "bf")]
    pub kind: PotentialChoice,
    /// Bucket multiplier for the counterexample potential.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// JSON file `{"cap":[...],"log_phi":[...]}` for `--kind table`.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Proportionally fair allocation. CSV: route,n,lambda; trailer with
    /// objective and KKT residual.
    PfSolve {
        #[arg(long)]
        network: PathBuf,
        /// Comma-separated per-route document counts.
        #[arg(long)]
        state: String,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Potential and induced allocation at one state. CSV: route,n,lambda;
    /// trailer with log_phi.
    Potential {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        state: String,
        #[command(flatten)]
        potential: PotentialArgs,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Product-form stationary law over shells |n| <= M. CSV: n,log_phi,pi
    /// with n semicolon-joined; trailer with log_b and tail_bound.
    Stationary {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, conflicts_with = "rho")]
        traffic: Option<PathBuf>,
        #[arg(long)]
        rho: Option<String>,
        #[command(flatten)]
        potential: PotentialArgs,
        #[arg(long, default_value_t = 200)]
        max_shell: usize,
        #[arg(long, default_value_t = DEFAULT_TAIL_TOL)]
        tail_tol: f64,
        #[command(flatten)]
        run: RunConfig,
    },
    /// CTMC simulation. CSV: n,probability (time-weighted, after warmup);
    /// trailer with event counts.
    Simulate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        traffic: PathBuf,
        #[arg(long, value_enum, default_value = "bf")]
        policy: PolicyChoice,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long)]
        end_time: f64,
        /// Defaults to 20% of --end-time.
        #[arg(long)]
        warmup: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        max_population: u64,
        #[arg(long, value_enum, default_value = "stage-mean")]
        convention: ConventionChoice,
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Simulates several traffic variants with equal rho. CSV:
    /// kind,a,b,replica,tv with kind in {oracle,pair,pooled}.
    VerifyInsensitivity {
        #[arg(long)]
        network: PathBuf,
        /// One traffic file per variant.
        #[arg(long, required = true, num_args = 1..)]
        traffic: Vec<PathBuf>,
        #[arg(long)]
        end_time: f64,
        #[arg(long)]
        warmup: Option<f64>,
        #[arg(long, default_value_t = 3)]
        replicas: usize,
        #[arg(long, default_value_t = 200)]
        max_shell: usize,
        #[arg(long, default_value_t = 1000)]
        max_population: u64,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Policy at floor(c n) + offset versus the PF allocation at n. CSV:
    /// c,offset,state,allocation,l1_gap; trailer with the PF allocation.
    LimitExperiment {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, value_enum, default_value = "bf")]
        policy: PolicyChoice,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long)]
        direction: String,
        #[arg(long, default_value = "5,10,20,50,100,200")]
        c_list: String,
        /// Semicolon-separated integer offsets, e.g. "1,0,0;-1,0,0".
        #[arg(long)]
        offsets: Option<String>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// (1/c) log pi(floor(c n)) versus minus the rate function. CSV:
    /// c,state,scaled_log_pi,limit,error; trailer with rate and log_b.
    LdpExperiment {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, conflicts_with = "rho")]
        traffic: Option<PathBuf>,
        #[arg(long)]
        rho: Option<String>,
        #[command(flatten)]
        potential: PotentialArgs,
        #[arg(long)]
        direction: String,
        #[arg(long, default_value = "1,10,50,100")]
        c_list: String,
        #[arg(long, default_value_t = 256)]
        max_shell: usize,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Counterexample policy along power-of-two totals and totals 2^k - 1.
    /// CSV: sequence,k,c,state,allocation,gap_to_scaled_pf,gap_to_pf.
    Counterexample {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long)]
        direction: String,
        #[arg(long, default_value = "3,4,5,6,7,8")]
        k_list: String,
        #[arg(long, default_value = "5,6,7,8,9")]
        kprime_list: String,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Finiteness evidence for the counterexample normaliser. CSV:
    /// shell,log_hat,log_scaled; trailer with eps, crossover and decay.
    BhatCheck {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, conflicts_with = "rho")]
        traffic: Option<PathBuf>,
        #[arg(long)]
        rho: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 400)]
        max_shell: usize,
        #[command(flatten)]
        run: RunConfig,
    },
}

/// Table potential file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub cap: Vec<u32>,
    pub log_phi: Vec<f64>,
}

/// Parses argv (including the program name), runs the command and returns
/// the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

pub fn load_network(path: &Path) -> anyhow::Result<CapacityRegion> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: NetworkFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(CapacityRegion::from_network(&file)?)
}

pub fn load_traffic(path: &Path) -> anyhow::Result<TrafficSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: TrafficSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

fn parse_list<T: std::str::FromStr>(text: &str, flag: &str) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("invalid value {s:?} in --{flag}"))
        })
        .collect()
}

fn check_len<T>(values: &[T], region: &CapacityRegion, flag: &str) -> anyhow::Result<()> {
    if values.len() != region.num_routes() {
        bail!(
            "--{flag} has {} entries but the network has {} routes",
            values.len(),
            region.num_routes()
        );
    }
    Ok(())
}

fn resolve_rho(
    region: &CapacityRegion,
    traffic: &Option<PathBuf>,
    rho: &Option<String>,
) -> anyhow::Result<Vec<f64>> {
    let values = match (traffic, rho) {
        (Some(path), None) => load_traffic(path)?.rho(),
        (None, Some(text)) => parse_list(text, "rho")?,
        _ => bail!("exactly one of --traffic or --rho is required"),
    };
    check_len(&values, region, "rho")?;
    Ok(values)
}

fn build_potential(
    region: &CapacityRegion,
    args: &PotentialArgs,
    cap: Vec<u32>,
) -> anyhow::Result<LogPotential> {
    Ok(match args.kind {
        PotentialChoice::Bf => LogPotential::balanced_fairness(region, cap)?,
        PotentialChoice::Counterexample => {
            let base = LogPotential::balanced_fairness(region, cap)?;
            LogPotential::counterexample(&CounterexampleParams::new(base, args.alpha)?)
        }
        PotentialChoice::Table => {
            let path = args
                .table
                .as_ref()
                .ok_or_else(|| anyhow!("--kind table requires --table"))?;
            let text = fs::read_to_string(path)?;
            let table: TableFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            check_len(&table.cap, region, "table cap")?;
            LogPotential::from_table(table.cap, table.log_phi, Some(region.clone()))?
        }
    })
}

fn policy_for(
    region: &CapacityRegion,
    choice: PolicyChoice,
    alpha: f64,
    cap: Vec<u32>,
) -> anyhow::Result<Box<dyn AllocationPolicy>> {
    Ok(match choice {
        PolicyChoice::Pf => Box::new(PfPolicy::new(region.clone(), DEFAULT_TOL)?),
        PolicyChoice::Bf => Box::new(LogPotential::balanced_fairness(region, cap)?),
        PolicyChoice::Counterexample => {
            let base = LogPotential::balanced_fairness(region, cap)?;
            Box::new(LogPotential::counterexample(&CounterexampleParams::new(base, alpha)?))
        }
    })
}

/// Per-route cap for simulation boxes, bounded so the box stays in memory.
fn simulation_cap(routes: usize, max_population: u64) -> Vec<u32> {
    let budget = (1u64 << 24) as f64;
    let per_route = budget.powf(1.0 / routes.max(1) as f64).floor() as u64 - 1;
    vec![max_population.min(per_route).min(u32::MAX as u64) as u32; routes]
}

struct Output {
    text: String,
}

impl Output {
    fn new(command: &str, run: &RunConfig) -> Self {
        let mut text = String::new();
        if !run.no_header {
            let stamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let _ = writeln!(text, "# bandshare {command} generated_unix={stamp}");
        }
        Self { text }
    }

    fn line(&mut self, line: impl AsRef<str>) {
        self.text.push_str(line.as_ref());
        self.text.push('\n');
    }

    fn finish(self, run: &RunConfig) -> anyhow::Result<()> {
        match &run.out {
            Some(path) => fs::write(path, self.text).with_context(|| format!("writing {}", path.display()))?,
            None => print!("{}", self.text),
        }
        Ok(())
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::PfSolve {
            network,
            state,
            tol,
            run,
        } => {
            let region = load_network(&network)?;
            let n: Vec<f64> = parse_list(&state, "state")?;
            check_len(&n, &region, "state")?;
            let solution = solve_pf(&region, &n, tol)?;
            let objective = pf_objective(&n, solution.allocation.rates())?;
            let mut out = Output::new("pf-solve", &run);
            out.line("route,n,lambda");
            for (r, id) in region.route_ids().iter().enumerate() {
                out.line(format!("{id},{},{}", fmt_sig(n[r]), fmt_sig(solution.allocation.0[r])));
            }
            out.line(format!(
                "# objective={},residual={},iterations={}",
                fmt_sig(objective),
                fmt_sig(solution.kkt_residual),
                solution.iterations
            ));
            out.finish(&run)
        }
        Command::Potential {
            network,
            state,
            potential,
            run,
        } => {
            let region = load_network(&network)?;
            let n: Vec<u32> = parse_list(&state, "state")?;
            check_len(&n, &region, "state")?;
            let cap = if potential.kind == PotentialChoice::Table {
                Vec::new()
            } else {
                n.clone()
            };
            let phi = build_potential(&region, &potential, cap)?;
            let log_phi = phi.log_phi(&n)?;
            let allocation = phi.allocation(&n)?;
            let mut out = Output::new("potential", &run);
            out.line("route,n,lambda");
            for (r, id) in region.route_ids().iter().enumerate() {
                out.line(format!("{id},{},{}", n[r], fmt_sig(allocation.0[r])));
            }
            out.line(format!("# log_phi={}", fmt_sig(log_phi)));
            out.finish(&run)
        }
        Command::Stationary {
            network,
            traffic,
            rho,
            potential,
            max_shell,
            tail_tol,
            run,
        } => {
            let region = load_network(&network)?;
            let rho = resolve_rho(&region, &traffic, &rho)?;
            let phi = build_potential(&region, &potential, vec![max_shell as u32; region.num_routes()])?;
            let table = stationary_pi(&phi, &rho, max_shell, tail_tol)?;
            let mut out = Output::new("stationary", &run);
            out.line("n,log_phi,pi");
            for (n, log_phi, p) in &table.entries {
                out.line(format!("{},{},{}", join_semicolon(n), fmt_sig(*log_phi), fmt_sig(*p)));
            }
            out.line(format!(
                "# log_b={},tail_bound={}",
                fmt_sig(table.log_b),
                fmt_sig(table.tail_bound)
            ));
            out.finish(&run)
        }
        Command::Simulate {
            network,
            traffic,
            policy,
            alpha,
            end_time,
            warmup,
            max_population,
            convention,
            replicas,
            run,
        } => {
            let region = load_network(&network)?;
            let traffic = load_traffic(&traffic)?;
            check_len(&traffic.routes, &region, "traffic routes")?;
            let policy = policy_for(
                &region,
                policy,
                alpha,
                simulation_cap(region.num_routes(), max_population),
            )?;
            let params = SimParams {
                end_time,
                warmup: warmup.unwrap_or(0.2 * end_time),
                seed: run.seed,
                max_population,
                convention: match convention {
                    ConventionChoice::StageMean => RateConvention::StageMean,
                    ConventionChoice::Literal => RateConvention::Literal,
                },
            };
            let outcomes = simulate_replicas(policy.as_ref(), &traffic, &params, replicas.max(1), run.workers)?;
            let pooled = pooled_distribution(&outcomes);
            let mut out = Output::new("simulate", &run);
            out.line("n,probability");
            for (n, p) in &pooled {
                out.line(format!("{},{}", join_semicolon(n), fmt_sig(*p)));
            }
            let events: u64 = outcomes.iter().map(|o| o.events).sum();
            let post: u64 = outcomes.iter().map(|o| o.post_warmup_events).sum();
            out.line(format!("# replicas={},events={events},post_warmup_events={post}", outcomes.len()));
            out.finish(&run)
        }
        Command::VerifyInsensitivity {
            network,
            traffic,
            end_time,
            warmup,
            replicas,
            max_shell,
            max_population,
            run,
        } => {
            let region = load_network(&network)?;
            let variants = traffic
                .iter()
                .map(|p| load_traffic(p))
                .collect::<anyhow::Result<Vec<_>>>()?;
            for variant in &variants {
                check_len(&variant.routes, &region, "traffic routes")?;
            }
            let rho = variants[0].rho();
            let cap = simulation_cap(region.num_routes(), max_population.max(max_shell as u64));
            let phi = LogPotential::balanced_fairness(&region, cap)?;
            let mut params = SimParams::new(end_time, run.seed);
            if let Some(w) = warmup {
                params.warmup = w;
            }
            params.max_population = max_population;
            let config = InsensitivityConfig {
                params,
                replicas,
                workers: run.workers,
                max_shell,
                tail_tol: DEFAULT_TAIL_TOL,
            };
            let report = insensitivity_experiment(&region, &phi, &rho, &variants, &config)?;
            let mut out = Output::new("verify-insensitivity", &run);
            out.line("kind,a,b,replica,tv");
            for (v, tvs) in report.oracle_tv.iter().enumerate() {
                for (i, tv) in tvs.iter().enumerate() {
                    out.line(format!("oracle,{v},,{i},{}", fmt_sig(*tv)));
                }
            }
            for pair in &report.pairwise {
                for (i, tv) in pair.replica_tv.iter().enumerate() {
                    out.line(format!("pair,{},{},{i},{}", pair.a, pair.b, fmt_sig(*tv)));
                }
                out.line(format!("pooled,{},{},,{}", pair.a, pair.b, fmt_sig(pair.pooled_tv)));
            }
            out.line(format!(
                "# rho={},min_post_warmup_events={}",
                join_floats(&report.rho),
                report.min_post_warmup_events()
            ));
            out.finish(&run)
        }
        Command::LimitExperiment {
            network,
            policy,
            alpha,
            direction,
            c_list,
            offsets,
            run,
        } => {
            let region = load_network(&network)?;
            let n: Vec<f64> = parse_list(&direction, "direction")?;
            check_len(&n, &region, "direction")?;
            let c_list: Vec<f64> = parse_list(&c_list, "c-list")?;
            let offsets: Vec<Vec<i64>> = match offsets {
                Some(text) => text
                    .split(';')
                    .map(|o| parse_list(o, "offsets"))
                    .collect::<anyhow::Result<_>>()?,
                None => Vec::new(),
            };
            let c_max = c_list.iter().copied().fold(0.0, f64::max);
            let reach = offsets.iter().flatten().map(|v| v.max(&0)).max().copied().unwrap_or(0);
            let cap = n
                .iter()
                .map(|v| ((c_max * v).floor() as i64 + reach).max(1) as u32)
                .collect();
            let policy = policy_for(&region, policy, alpha, cap)?;
            let report = limit_convergence_experiment(&region, policy.as_ref(), &n, &c_list, &offsets, DEFAULT_TOL)?;
            let mut out = Output::new("limit-experiment", &run);
            out.line("c,offset,state,allocation,l1_gap");
            for row in &report.rows {
                out.line(format!(
                    "{},{},{},{},{}",
                    fmt_sig(row.c),
                    join_semicolon(&row.offset),
                    join_semicolon(&row.state),
                    join_floats(row.allocation.rates()),
                    fmt_sig(row.l1_gap)
                ));
            }
            out.line(format!("# pf={}", join_floats(report.pf.rates())));
            out.finish(&run)
        }
        Command::LdpExperiment {
            network,
            traffic,
            rho,
            potential,
            direction,
            c_list,
            max_shell,
            run,
        } => {
            let region = load_network(&network)?;
            let rho = resolve_rho(&region, &traffic, &rho)?;
            let n: Vec<f64> = parse_list(&direction, "direction")?;
            check_len(&n, &region, "direction")?;
            let c_list: Vec<f64> = parse_list(&c_list, "c-list")?;
            let c_max = c_list.iter().copied().fold(0.0, f64::max);
            let reach = n
                .iter()
                .map(|v| (c_max * v).floor() as usize)
                .max()
                .unwrap_or(0)
                .max(max_shell);
            let phi = build_potential(&region, &potential, vec![reach as u32; region.num_routes()])?;
            let report = crate::experiments::ldp_experiment(
                &region,
                &phi,
                &rho,
                &n,
                &c_list,
                DEFAULT_TAIL_TOL,
                DEFAULT_TOL,
            )?;
            let mut out = Output::new("ldp-experiment", &run);
            out.line("c,state,scaled_log_pi,limit,error");
            for row in &report.rows {
                out.line(format!(
                    "{},{},{},{},{}",
                    fmt_sig(row.c),
                    join_semicolon(&row.state),
                    fmt_sig(row.scaled_log_pi),
                    fmt_sig(row.limit),
                    fmt_sig(row.error)
                ));
            }
            out.line(format!(
                "# rate={},log_b={},tail_bound={}",
                fmt_sig(report.rate),
                fmt_sig(report.log_b),
                fmt_sig(report.tail_bound)
            ));
            out.finish(&run)
        }
        Command::Counterexample {
            network,
            alpha,
            direction,
            k_list,
            kprime_list,
            run,
        } => {
            let region = load_network(&network)?;
            let n: Vec<u32> = parse_list(&direction, "direction")?;
            check_len(&n, &region, "direction")?;
            let k_list: Vec<u32> = parse_list(&k_list, "k-list")?;
            let kprime_list: Vec<u32> = parse_list(&kprime_list, "kprime-list")?;
            let total: u64 = n.iter().map(|v| *v as u64).sum();
            let k_max = k_list.iter().copied().max().unwrap_or(0);
            let kp_max = kprime_list.iter().copied().max().unwrap_or(0);
            if k_max > 24 || kp_max > 30 {
                bail!("k values are limited to 24 (--k-list) and 30 (--kprime-list)");
            }
            let cap: Vec<u32> = n
                .iter()
                .map(|&v| {
                    let along_power = (v as u64) << k_max;
                    let along_offset = ((1u64 << kp_max) as f64 * v as f64 / total.max(1) as f64).ceil() as u64 + 1;
                    along_power.max(along_offset) as u32
                })
                .collect();
            let base = LogPotential::balanced_fairness(&region, cap)?;
            let report = counterexample_oscillation(&region, &base, alpha, &n, &k_list, &kprime_list, DEFAULT_TOL)?;
            let mut out = Output::new("counterexample", &run);
            out.line("sequence,k,c,state,allocation,gap_to_scaled_pf,gap_to_pf");
            for (label, rows) in [("power", &report.power_rows), ("offset", &report.offset_rows)] {
                for row in rows {
                    out.line(format!(
                        "{label},{},{},{},{},{},{}",
                        row.k,
                        fmt_sig(row.c),
                        join_semicolon(&row.state),
                        join_floats(row.allocation.rates()),
                        fmt_sig(row.gap_to_scaled_pf),
                        fmt_sig(row.gap_to_pf)
                    ));
                }
            }
            out.line(format!(
                "# pf={},limit_ratio={},separated={}",
                join_floats(report.pf.rates()),
                join_floats(&report.limit_ratio),
                report.separated
            ));
            out.finish(&run)
        }
        Command::BhatCheck {
            network,
            traffic,
            rho,
            alpha,
            eps,
            max_shell,
            run,
        } => {
            let region = load_network(&network)?;
            let rho = resolve_rho(&region, &traffic, &rho)?;
            let base = LogPotential::balanced_fairness(&region, vec![max_shell as u32; region.num_routes()])?;
            let report = bhat_finiteness_check(&region, &base, &rho, alpha, eps, max_shell)?;
            let mut out = Output::new("bhat-check", &run);
            out.line("shell,log_hat,log_scaled");
            for (m, (hat, scaled)) in report
                .log_hat_shells
                .iter()
                .zip(&report.log_scaled_shells)
                .enumerate()
            {
                out.line(format!("{m},{},{}", fmt_sig(*hat), fmt_sig(*scaled)));
            }
            out.line(format!(
                "# eps={},crossover={},decay_ratio={},dominated={},geometric_decay={},log_bhat={}",
                fmt_sig(report.eps),
                report.crossover,
                fmt_sig(report.decay_ratio),
                report.dominated,
                report.geometric_decay,
                fmt_sig(report.log_bhat)
            ));
            out.finish(&run)
        }
    }
}
