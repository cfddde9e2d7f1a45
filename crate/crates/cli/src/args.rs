use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "opensys", version, about = "Open quantum system simulations", propagate_version = true)]
pub struct Cli {
    /// Maximum worker threads for trajectory commands; output does not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    /// Write the CSV here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long = "t-max")]
    pub t_max: f64,

    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub steps: u32,
}

#[derive(Debug, Args)]
pub struct ObservableArgs {
    /// Comma-separated observables: names from [observables], `name=<builder>`, or a builder.
    /// Defaults to every [observables] entry, or to the level populations.
    #[arg(long)]
    pub observables: Vec<String>,

    /// Also emit every density-matrix entry.
    #[arg(long)]
    pub density: bool,
}

#[derive(Debug, Args)]
pub struct DeterministicArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub grid: GridArgs,

    /// Initial system state; overrides [initial].
    #[arg(long)]
    pub rho: Option<String>,

    #[command(flatten)]
    pub obs: ObservableArgs,
}

#[derive(Debug, Args)]
pub struct StochasticArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Initial pure state; overrides [initial].
    #[arg(long)]
    pub psi0: Option<String>,

    #[command(flatten)]
    pub grid: GridArgs,

    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    pub trajectories: u32,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub obs: ObservableArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    /// Exact jump times from the integrated rates.
    RateIntegral,
    /// Small fixed steps with Bernoulli jump draws.
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Selective,
    Nonselective,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact system-environment evolution reduced to the system.
    EvolveExact(DeterministicArgs),

    /// Integrate a Lindblad master equation.
    EvolveLindblad(DeterministicArgs),

    /// Integrate a time-local master equation; Lindblad models are embedded.
    EvolveTcl {
        #[command(flatten)]
        args: DeterministicArgs,

        /// Add the flow-map condition number and an invertibility-loss flag.
        #[arg(long)]
        flow_diagnostics: bool,
    },

    /// Quantum-jump unraveling of a Lindblad model.
    Mcwf(StochasticArgs),

    /// Doubled-space unraveling of a time-local model.
    Hnm {
        #[command(flatten)]
        args: StochasticArgs,

        #[arg(long, value_enum, default_value_t = Scheme::RateIntegral)]
        scheme: Scheme,

        /// Bernoulli scheme: bound on `sum_i lambda_i dt`.
        #[arg(long, default_value_t = 1e-3)]
        max_rate_step: f64,

        /// Bernoulli scheme: largest step.
        #[arg(long, default_value_t = 1e-2)]
        dt_max: f64,
    },

    /// Indirect measurement through a probe.
    Measure {
        /// A [probe] file, or a [total_system] file combined with --probe or --tau.
        #[arg(long)]
        model: PathBuf,

        /// Probe file; `[probe] tau = ...` derives the probe from the total-system model.
        #[arg(long, conflicts_with = "tau")]
        probe: Option<PathBuf>,

        /// Interaction time for a probe derived from the total-system model.
        #[arg(long)]
        tau: Option<f64>,

        #[arg(long)]
        rho: Option<String>,

        #[arg(long, value_enum)]
        mode: Mode,

        /// Outcome index to condition on (selective mode).
        #[arg(long)]
        outcome: Option<usize>,

        /// Write the post-measurement state here instead of after the table.
        #[arg(long)]
        post_state: Option<PathBuf>,
    },

    /// Parse and validate model files.
    Validate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,

        /// Print the canonical form of each model.
        #[arg(long)]
        canonical: bool,
    },

    /// Largest |difference| / standard error between a deterministic and a stochastic CSV.
    Compare {
        #[arg(long)]
        reference: PathBuf,

        #[arg(long)]
        estimate: PathBuf,
    },
}
