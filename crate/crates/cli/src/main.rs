//! `argtree`: validate, run, inspect and edit argument-tree configs built on
//! the demo module registry.
//!
//! Exit codes: 0 success, 1 I/O, syntax or usage problems, 2 validation or
//! build failures. Human-readable output goes to standard error.

mod commands;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "argtree",
    version,
    about = "Registry-driven argument trees for experiment configs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file
    config: PathBuf,
    /// Override a config entry, e.g. --set "{cls_trainer}.max_epochs=1" (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Define a value placeholder, e.g. --env path_tmp=/scratch (repeatable)
    #[arg(long = "env", value_name = "NAME=VALUE")]
    env: Vec<String>,
    /// Requirement key that selects the root module
    #[arg(long, default_value = "cls_task")]
    entry: String,
    /// Kind the root module must have
    #[arg(long, default_value = "task")]
    entry_kind: String,
}

#[derive(Subcommand)]
enum Command {
    /// Build the tree described by a config and report every violation
    Validate(ConfigArgs),
    /// Build, instantiate and run the experiment described by a config
    Run(ConfigArgs),
    /// List registered modules, optionally filtered by kind and tags
    List {
        #[arg(long)]
        kind: Option<String>,
        /// Required tag, e.g. --tag search=true (repeatable)
        #[arg(long = "tag", value_name = "NAME=VALUE")]
        tags: Vec<String>,
    },
    /// Write the reference of every module and argument
    Docgen {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show the structure of a config's tree and write it as Graphviz DOT
    Tree {
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the DOT graph (standard output if omitted)
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Write the canonical form of a config
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild a network from a saved state and write its canonical export
    State {
        /// State JSON file
        state: PathBuf,
        /// Keep only the selected candidates of every mixed op
        #[arg(long)]
        finalize: bool,
        /// Candidates to keep for one mixed op, e.g. --select n/block-0/op=0,3 (repeatable)
        #[arg(long = "select", value_name = "NAME=I,J")]
        selections: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP backend of the interactive editor
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory with built frontend assets to serve at /
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
        /// Define a value placeholder (repeatable)
        #[arg(long = "env", value_name = "NAME=VALUE")]
        env: Vec<String>,
        #[arg(long, default_value = "cls_task")]
        entry: String,
        #[arg(long, default_value = "task")]
        entry_kind: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Validate(args) => commands::validate(&args.into()),
        Command::Run(args) => commands::run(&args.into()),
        Command::List { kind, tags } => commands::list(kind.as_deref(), &tags),
        Command::Docgen { out } => commands::docgen(out.as_deref()),
        Command::Tree { config, dot } => commands::tree(&config.into(), dot.as_deref()),
        Command::Generate { config, out } => commands::generate(&config.into(), out.as_deref()),
        Command::State {
            state,
            finalize,
            selections,
            out,
        } => commands::state(&state, finalize, &selections, out.as_deref()),
        Command::Serve {
            port,
            host,
            static_dir,
            env,
            entry,
            entry_kind,
        } => commands::serve((host, port).into(), static_dir, &env, entry, entry_kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            failure.report();
            ExitCode::from(failure.code())
        }
    }
}

impl From<ConfigArgs> for commands::ConfigInput {
    fn from(a: ConfigArgs) -> Self {
        commands::ConfigInput {
            path: a.config,
            overrides: a.overrides,
            env: a.env,
            entry: a.entry,
            entry_kind: a.entry_kind,
        }
    }
}
