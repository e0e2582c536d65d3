use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use minisa::driver::{analyze, diff_runs, render_stats, write_outputs, Format, RunConfig};
use minisa::engine::{AnalysisOptions, Strategy};

#[derive(Parser)]
#[command(name = "minisa", version, about = "Path-sensitive static analyzer for MiniC")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Dfs,
    Bfs,
    UnexploredFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plist,
    Html,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analyze a compilation database or a list of .mc files.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        ctu_dir: Option<PathBuf>,
        #[arg(long)]
        ctu: bool,
        #[arg(long, value_enum, default_value = "unexplored-first")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 100_000)]
        max_nodes: usize,
        #[arg(long, default_value_t = 5)]
        max_inline_depth: usize,
        #[arg(long, default_value_t = 4)]
        max_block_visits: u32,
        #[arg(long, default_value_t = 50)]
        max_inline_size: usize,
        #[arg(long, default_value_t = 3)]
        unroll_limit: u32,
        #[arg(long)]
        widen_loops: bool,
        #[arg(long)]
        refute: bool,
        #[arg(long, default_value_t = 8)]
        refute_width: u32,
        #[arg(long)]
        emit_smt: Option<PathBuf>,
        #[arg(long)]
        coverage: bool,
        #[arg(long, default_value = "minisa-out")]
        output_dir: PathBuf,
        #[arg(long, value_enum, default_value = "plist")]
        format: FormatArg,
        #[arg(long)]
        suppress_file: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        dump_cfg: bool,
        #[arg(long)]
        stats: bool,
    },
    /// Compare the plist reports of two runs by issue hash.
    Diff { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Diff { a, b } => match diff_runs(&a, &b) {
            Ok((_, text)) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Cmd::Analyze {
            inputs,
            ctu_dir,
            ctu,
            strategy,
            max_nodes,
            max_inline_depth,
            max_block_visits,
            max_inline_size,
            unroll_limit,
            widen_loops,
            refute,
            refute_width,
            emit_smt,
            coverage,
            output_dir,
            format,
            suppress_file,
            jobs,
            dump_cfg,
            stats,
        } => {
            let cfg = RunConfig {
                inputs,
                analysis: AnalysisOptions {
                    strategy: match strategy {
                        StrategyArg::Dfs => Strategy::Dfs,
                        StrategyArg::Bfs => Strategy::Bfs,
                        StrategyArg::UnexploredFirst => Strategy::UnexploredFirst,
                    },
                    max_nodes,
                    max_inline_depth,
                    max_block_visits,
                    max_inline_size,
                    unroll_limit,
                    widen_loops,
                    ..AnalysisOptions::default()
                },
                ctu,
                ctu_dir,
                refute,
                refute_width,
                emit_smt,
                coverage,
                output_dir,
                format: match format {
                    FormatArg::Plist => Format::Plist,
                    FormatArg::Html => Format::Html,
                    FormatArg::Both => Format::Both,
                },
                suppress_file,
                jobs,
                dump_cfg,
            };
            let result = match analyze(&cfg).and_then(|r| write_outputs(&cfg, &r).map(|_| r)) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            print!("{}", result.cfg_dump);
            for r in result.emitted() {
                println!("{}:{}:{}: warning: {} [{}]", r.file, r.loc.line, r.loc.col, r.message, r.checker);
            }
            if stats {
                for line in render_stats(&result.stats).lines() {
                    eprintln!("STAT: {line}");
                }
            }
            if result.emitted().next().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
