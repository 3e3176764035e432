use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trigrid_core::driver::{bench, bench_json, render_bench, validate, RunConfig};
use trigrid_core::engine::{EngineOptions, Enumeration, Fault};
use trigrid_core::graph::io::{read_path, write_path};
use trigrid_core::graph::EdgeList;
use trigrid_core::rmat::{generate, RmatParams, DEFAULT_EDGE_FACTOR};
use trigrid_core::transport::grid_side;
use trigrid_core::{run, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "trigrid", version, about = "Distributed triangle counting on a simulated 2-D process grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an RMAT graph to a file (binary for .tgr/.bin, text otherwise)
    Generate {
        #[arg(long)]
        scale: u32,
        #[arg(long, default_value_t = DEFAULT_EDGE_FACTOR)]
        edge_factor: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count triangles and print the count followed by a metrics report
    Count {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        ranks: usize,
        #[command(flatten)]
        toggles: Toggles,
        /// also write the JSON report here
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Compare the distributed count with both sequential oracles
    Validate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        ranks: usize,
        #[command(flatten)]
        toggles: Toggles,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Sweep rank counts and print a scaling table
    Bench {
        #[command(flatten)]
        input: InputArgs,
        /// comma-separated perfect squares
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        #[command(flatten)]
        toggles: Toggles,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Args)]
struct InputArgs {
    /// edge-list file, text or binary
    #[arg(long, conflicts_with = "rmat_scale")]
    input: Option<PathBuf>,
    #[arg(long)]
    rmat_scale: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_EDGE_FACTOR)]
    edge_factor: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl InputArgs {
    fn load(&self) -> trigrid_core::Result<EdgeList> {
        match (&self.input, self.rmat_scale) {
            (Some(path), None) => read_path(path),
            (None, Some(scale)) => generate(&RmatParams::new(scale, self.edge_factor, self.seed)),
            _ => Err(Error::Usage("give exactly one of --input or --rmat-scale".into())),
        }
    }
}

#[derive(Args)]
struct Toggles {
    #[arg(long)]
    no_direct_hash: bool,
    #[arg(long)]
    no_dcsr: bool,
    #[arg(long)]
    no_prune: bool,
    #[arg(long = "enum", value_enum, default_value_t = EnumArg::Jik)]
    enumeration: EnumArg,
}

impl Toggles {
    fn options(&self) -> EngineOptions {
        EngineOptions {
            direct_hash: !self.no_direct_hash,
            doubly_sparse: !self.no_dcsr,
            prune: !self.no_prune,
            enumeration: match self.enumeration {
                EnumArg::Ijk => Enumeration::Ijk,
                EnumArg::Jik => Enumeration::Jik,
            },
            fault: None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EnumArg {
    Ijk,
    Jik,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn square_ranks(p: usize) -> trigrid_core::Result<usize> {
    grid_side(p).map_err(|_| Error::Usage(format!("--ranks {p} is not a perfect square")))?;
    Ok(p)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        Error::Io(_) | Error::MalformedInput(_) | Error::Decode(_) | Error::Size(_) => EXIT_IO,
        _ => EXIT_INTERNAL,
    }
}

fn execute(command: Command) -> trigrid_core::Result<u8> {
    match command {
        Command::Generate {
            scale,
            edge_factor,
            seed,
            out,
        } => {
            let g = generate(&RmatParams::new(scale, edge_factor, seed))?;
            write_path(&g, &out)?;
            println!("wrote n={} m={} to {}", g.n, g.len(), out.display());
        }
        Command::Count {
            input,
            ranks,
            toggles,
            metrics,
            format,
        } => {
            let config = RunConfig::new(square_ranks(ranks)?).with_options(toggles.options());
            let report = run(&input.load()?, &config)?;
            if let Some(path) = metrics {
                fs::write(path, report.to_json())?;
            }
            match format {
                Format::Text => {
                    println!("{}", report.triangles);
                    print!("{}", report.render_text());
                }
                Format::Json => println!("{}", report.to_json()),
            }
        }
        Command::Validate {
            input,
            ranks,
            toggles,
            inject_fault,
        } => {
            let mut options = toggles.options();
            if inject_fault {
                options.fault = Some(Fault::DropHomeBlocks);
            }
            let config = RunConfig::new(square_ranks(ranks)?).with_options(options);
            let outcome = validate(&input.load()?, &config)?;
            println!("{}", outcome.render());
            if !outcome.agrees() {
                return Ok(EXIT_MISMATCH);
            }
        }
        Command::Bench {
            input,
            ranks,
            toggles,
            format,
        } => {
            for &p in &ranks {
                square_ranks(p)?;
            }
            let rows = bench(&input.load()?, &ranks, toggles.options())?;
            match format {
                Format::Text => print!("{}", render_bench(&rows)),
                Format::Json => println!("{}", bench_json(&rows)),
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("trigrid: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
