//! `future-attn` command line: mask inspection, forward runs, blocked-kernel
//! equivalence checks, cost benchmarks, and toy generation.
//!
//! Exit codes: 0 success, 1 usage/config/I-O error, 2 failed property or
//! tolerance check.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use config::{PartialConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "future-attn",
    version,
    about = "Future-aware causal attention masks for vision-language sequences"
)]
struct Cli {
    /// Flat JSON config file; flags override its values field by field
    #[arg(long, global = true)]
    config: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump a mask matrix as CSV ("0" / "-inf") with a count sidecar line
    Mask {
        #[command(flatten)]
        flags: PartialConfig,
    },
    /// Run a forward pass; export probs heatmap, output matrix, logsumexp
    Attn {
        #[command(flatten)]
        flags: PartialConfig,
    },
    /// Sweep blocked kernel vs naive reference; nonzero exit on mismatch
    Equiv {
        #[command(flatten)]
        flags: PartialConfig,
        /// Number of randomized trials
        #[arg(long, default_value_t = 120)]
        trials: usize,
        /// Negative-control hook: corrupt one mask cell on the naive side
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Run all mask kinds with and without merging; verify count ordering
    Bench {
        #[command(flatten)]
        flags: PartialConfig,
    },
    /// Prefill then greedily decode; emit trace and token sequence
    Generate {
        #[command(flatten)]
        flags: PartialConfig,
    },
}

fn run() -> anyhow::Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive as clap "errors"; keep their exit at 0,
            // real usage errors exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print()?;
            return Ok(code);
        }
    };
    let file = config::load_file(cli.config.as_deref())?;
    match cli.command {
        Command::Mask { flags } => commands::cmd_mask(&RunConfig::resolve(&file, &flags)),
        Command::Attn { flags } => commands::cmd_attn(&RunConfig::resolve(&file, &flags)),
        Command::Equiv {
            flags,
            trials,
            inject_fault,
        } => commands::cmd_equiv(&RunConfig::resolve(&file, &flags), trials, inject_fault),
        Command::Bench { flags } => commands::cmd_bench(&RunConfig::resolve(&file, &flags)),
        Command::Generate { flags } => commands::cmd_generate(&RunConfig::resolve(&file, &flags)),
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
