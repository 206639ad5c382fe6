use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use streamband::allocator::AllocatorChoice;
use streamband::matrix::{comparison, run_matrix, write_table, Overrides};
use streamband::scenario;

/// Run stream-application bandwidth allocation experiments.
#[derive(Debug, Parser)]
#[command(name = "streamband", version)]
struct Args {
    /// Scenario file, or the name of a bundled scenario
    /// (ti_bottleneck, tt_bottleneck, ti_multihop, fair_5apps).
    #[arg(long)]
    scenario: String,

    /// Allocators to run; repeat or comma-separate. Defaults to the scenario's list.
    #[arg(long, value_enum, value_delimiter = ',')]
    allocator: Vec<AllocatorChoice>,

    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,

    /// Allocation interval in seconds.
    #[arg(long = "delta-t")]
    delta_t: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for traces and summaries.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Run every capacity in the scenario's sweep instead of only the first.
    #[arg(long)]
    sweep: bool,

    /// Print the comparison table to standard output.
    #[arg(long)]
    table: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let scenario = match scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let allocators = if args.allocator.is_empty() { scenario.sim.allocators.clone() } else { args.allocator.clone() };
    let mut capacities = scenario.capacities();
    if !args.sweep {
        capacities.truncate(1);
    }
    let overrides = Overrides { duration: args.duration, delta_t: args.delta_t, seed: args.seed };
    let results = run_matrix(&scenario, &allocators, &capacities, &overrides, Some(&args.out));

    let mut failed = false;
    for r in &results {
        match &r.outcome {
            Ok(s) => eprintln!(
                "ok   {} {} {}: throughput {:.3} tuples/s",
                scenario.name,
                r.cell.label(),
                r.cell.capacity_label(),
                s.throughput
            ),
            Err(e) => {
                failed = true;
                eprintln!("FAIL {} {} {}: {e}", scenario.name, r.cell.label(), r.cell.capacity_label());
            }
        }
    }
    let table = comparison(&scenario, &results);
    if let Err(e) = write_table(&table, &args.out, &scenario.name) {
        eprintln!("error: {e}");
        failed = true;
    }
    if args.table {
        print!("{}", table.to_text());
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
