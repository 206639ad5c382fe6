//! Experiment grid: allocators × capacities (× alpha for the fair
//! scheduler), run in parallel, with a comparison table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::allocator::AllocatorChoice;
use crate::error::Result;
use crate::scenario::Scenario;
use crate::sim::{run, SimConfig, Summary};

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub allocator: AllocatorChoice,
    /// Set only when the fair scheduler sweeps alpha.
    pub alpha: Option<f64>,
    pub capacity_mbps: Option<f64>,
}

impl Cell {
    pub fn label(&self) -> String {
        match self.alpha {
            Some(a) => format!("{}_a{a}", self.allocator.label()),
            None => self.allocator.label().to_string(),
        }
    }

    pub fn capacity_label(&self) -> String {
        match self.capacity_mbps {
            Some(c) => format!("{c}mbps"),
            None => "base".into(),
        }
    }

    pub fn dir(&self, out: &Path, scenario: &str) -> PathBuf {
        out.join(scenario).join(self.label()).join(self.capacity_label())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub duration: Option<f64>,
    pub delta_t: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<Summary, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub scenario: String,
    pub allocator: String,
    pub capacity: String,
    pub throughput: f64,
    pub latency: Option<f64>,
    pub utilization: Option<f64>,
    pub jain: Option<f64>,
    /// Relative throughput gain of app_aware over maxmin_tcp at this capacity.
    pub improvement: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<Row>,
    pub has_improvement: bool,
}

impl ComparisonTable {
    fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["scenario", "allocator", "capacity", "throughput", "latency_mean", "utilization", "jain"];
        if self.has_improvement {
            h.push("improvement");
        }
        h
    }

    fn cells(&self, r: &Row) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut c = vec![
            r.scenario.clone(),
            r.allocator.clone(),
            r.capacity.clone(),
            format!("{:.4}", r.throughput),
            opt(r.latency),
            opt(r.utilization),
            opt(r.jain),
        ];
        if self.has_improvement {
            c.push(r.improvement.map(|x| format!("{:+.1}%", 100.0 * x)).unwrap_or_else(|| "-".into()));
        }
        c
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", self.cells(r).join(","));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let header: Vec<String> = self.header().iter().map(|h| h.to_string()).collect();
        let body: Vec<Vec<String>> = self.rows.iter().map(|r| self.cells(r)).collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cols: &[String]| {
            cols.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut s = line(&header);
        s.push('\n');
        for r in &body {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }
}

pub fn cells(scenario: &Scenario, allocators: &[AllocatorChoice], capacities: &[Option<f64>]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &allocator in allocators {
        let alphas: Vec<Option<f64>> =
            if allocator == AllocatorChoice::AppFair && !scenario.fairness.alpha_sweep.is_empty() {
                scenario.fairness.alphas().into_iter().map(Some).collect()
            } else {
                vec![None]
            };
        for alpha in alphas {
            for &capacity_mbps in capacities {
                out.push(Cell { allocator, alpha, capacity_mbps });
            }
        }
    }
    out
}

pub fn config_for(scenario: &Scenario, cell: &Cell, overrides: &Overrides) -> SimConfig {
    let mut cfg = SimConfig::from_scenario(scenario, cell.allocator);
    if let Some(a) = cell.alpha {
        cfg.fairness.alpha = a;
    }
    if let Some(d) = overrides.duration {
        cfg.duration = d;
    }
    if let Some(d) = overrides.delta_t {
        cfg.delta_t = d;
        cfg.fairness.regroup_period = d;
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    cfg
}

/// Runs every cell, writing traces under `out` when given. A failing cell
/// does not stop the others.
pub fn run_matrix(
    scenario: &Scenario,
    allocators: &[AllocatorChoice],
    capacities: &[Option<f64>],
    overrides: &Overrides,
    out: Option<&Path>,
) -> Vec<CellResult> {
    cells(scenario, allocators, capacities)
        .into_par_iter()
        .map(|cell| {
            let cfg = config_for(scenario, &cell, overrides);
            let outcome = run(scenario, cell.capacity_mbps, &cfg).and_then(|r| {
                if let Some(dir) = out {
                    r.write(&cell.dir(dir, &scenario.name))?;
                }
                Ok(r.summary)
            });
            CellResult { cell, outcome: outcome.map_err(|e| e.to_string()) }
        })
        .collect()
}

pub fn comparison(scenario: &Scenario, results: &[CellResult]) -> ComparisonTable {
    let find = |choice: AllocatorChoice, cap: Option<f64>| {
        results
            .iter()
            .find(|r| r.cell.allocator == choice && r.cell.capacity_mbps == cap)
            .and_then(|r| r.outcome.as_ref().ok())
    };
    let mut table = ComparisonTable::default();
    for r in results {
        let Ok(s) = &r.outcome else { continue };
        let improvement = if r.cell.allocator == AllocatorChoice::AppAware {
            find(AllocatorChoice::MaxminTcp, r.cell.capacity_mbps)
                .filter(|b| b.throughput > 0.0)
                .map(|b| (s.throughput - b.throughput) / b.throughput)
        } else {
            None
        };
        table.has_improvement |= improvement.is_some();
        table.rows.push(Row {
            scenario: scenario.name.clone(),
            allocator: r.cell.label(),
            capacity: r.cell.capacity_label(),
            throughput: s.throughput,
            latency: s.latency.as_ref().map(|l| l.mean),
            utilization: s.utilization,
            jain: s.jain,
            improvement,
        });
    }
    table
}

pub fn write_table(table: &ComparisonTable, out: &Path, scenario: &str) -> Result<()> {
    let dir = out.join(scenario);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("comparison.csv"), table.to_csv())?;
    std::fs::write(dir.join("comparison.txt"), table.to_text())?;
    Ok(())
}
