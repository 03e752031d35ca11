//! Variant by step scale by seed grids run in parallel.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{build_problem, ExperimentConfig, VariantArg};
use crate::trace_io::{self, Summary};
use crate::{run_on, trace_file_name, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub variants: Vec<VariantArg>,
    pub seeds: Vec<u64>,
    /// Step scales; empty means the one in the base configuration.
    pub s_etas: Vec<f64>,
}

impl Grid {
    pub fn new(variants: Vec<VariantArg>, seeds: Vec<u64>) -> Self {
        Self {
            variants,
            seeds,
            s_etas: Vec::new(),
        }
    }

    fn scales(&self, base: &ExperimentConfig) -> Vec<f64> {
        if self.s_etas.is_empty() {
            vec![base.s_eta]
        } else {
            self.s_etas.clone()
        }
    }
}

#[derive(Debug)]
pub struct Cell {
    pub variant: VariantArg,
    pub s_eta: f64,
    pub seed: u64,
    pub outcome: Result<Summary, CliError>,
}

/// Runs every cell of `grid` with `base` as the template; the problem for
/// each seed is built once and shared by its variants. When `out_dir` is set,
/// every successful cell writes its trace there under the `solve` file name,
/// with the step scale appended when the grid sweeps more than one.
pub fn run_grid(
    base: &ExperimentConfig,
    grid: &Grid,
    jobs: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<Vec<Cell>, CliError> {
    if grid.variants.is_empty() || grid.seeds.is_empty() {
        return Err(CliError::Usage("the grid is empty".into()));
    }
    let scales = grid.scales(base);
    for &s_eta in &scales {
        ExperimentConfig { s_eta, ..base.clone() }.validate()?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| {
        let problems: Vec<_> = grid
            .seeds
            .par_iter()
            .map(|&seed| {
                let cfg = ExperimentConfig { seed, ..base.clone() };
                build_problem(&cfg)
            })
            .collect();
        let mut cells = Vec::new();
        for i in 0..grid.seeds.len() {
            for &s_eta in &scales {
                for &v in &grid.variants {
                    cells.push((i, s_eta, v));
                }
            }
        }
        cells
            .into_par_iter()
            .map(|(i, s_eta, variant)| {
                let seed = grid.seeds[i];
                let cfg = ExperimentConfig {
                    seed,
                    variant,
                    s_eta,
                    ..base.clone()
                };
                let outcome = match &problems[i] {
                    Err(e) => Err(e.clone()),
                    Ok(problem) => run_on(problem, &cfg).and_then(|(trace, summary)| {
                        if let Some(dir) = out_dir {
                            let mut name = trace_file_name(&cfg);
                            if scales.len() > 1 {
                                name = name.replace(".jsonl", &format!("-s{s_eta}.jsonl"));
                            }
                            trace_io::write_trace_file(&dir.join(name), &trace.records, &summary)?;
                        }
                        Ok(summary)
                    }),
                };
                Ok(Cell {
                    variant,
                    s_eta,
                    seed,
                    outcome,
                })
            })
            .collect()
    })
}

/// Mean and range of one column over the successful cells of a variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn fmt_spread(s: Option<Spread>) -> String {
    match s {
        Some(s) => format!("{:.3e} [{:.3e}, {:.3e}]", s.mean, s.min, s.max),
        None => "-".into(),
    }
}

/// Table with one row per variant (and step scale, when several), in grid
/// order, followed by the failed cells.
pub fn table(grid: &Grid, cells: &[Cell]) -> String {
    let mut scales: Vec<f64> = Vec::new();
    for c in cells {
        if !scales.contains(&c.s_eta) {
            scales.push(c.s_eta);
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>5} {:>36} {:>36} {:>6}",
        "variant", "runs", "f_rel mean [min, max]", "stat_rel mean [min, max]", "failed"
    );
    for &s_eta in &scales {
        for &v in &grid.variants {
            let row: Vec<&Cell> = cells.iter().filter(|c| c.variant == v && c.s_eta == s_eta).collect();
            let ok: Vec<&Summary> = row.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let failed = row.len() - ok.len();
            let f: Vec<f64> = ok.iter().map(|s| s.final_f_rel).collect();
            let st: Vec<f64> = ok.iter().map(|s| s.final_stat_rel).collect();
            let label = if scales.len() > 1 {
                format!("{} s={s_eta}", v.name())
            } else {
                v.name().to_string()
            };
            let _ = writeln!(
                out,
                "{:<14} {:>5} {:>36} {:>36} {:>6}",
                label,
                row.len(),
                fmt_spread(Spread::of(&f)),
                fmt_spread(Spread::of(&st)),
                failed
            );
        }
    }
    for c in cells {
        if let Err(e) = &c.outcome {
            let _ = writeln!(out, "FAILED {} s={} seed {}: {e}", c.variant, c.s_eta, c.seed);
        }
    }
    out
}
