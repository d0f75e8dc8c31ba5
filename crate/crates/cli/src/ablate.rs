//! Component ablation grid and pseudo-quantity sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use otfcl::protocol;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::Toggles;

pub const SWEEP: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

#[derive(Debug, Clone)]
pub struct Cell {
    pub group: &'static str,
    pub variant: &'static str,
    pub ican: bool,
    pub isay: bool,
    pub pseudo_per_real: f64,
}

pub fn cells(base_pseudo: f64, sweep: bool) -> Vec<Cell> {
    let component = |variant, ican, isay| Cell {
        group: "component",
        variant,
        ican,
        isay,
        pseudo_per_real: base_pseudo,
    };
    let mut out = vec![
        component("naive", false, false),
        component("ican_only", true, false),
        component("isay_only", false, true),
        component("full", true, true),
    ];
    if sweep {
        out.extend(SWEEP.iter().map(|&p| Cell {
            group: "sweep",
            variant: "full",
            ican: true,
            isay: true,
            pseudo_per_real: p,
        }));
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn run_ablate(
    config: &Path,
    output_dir: &Path,
    repeats: u64,
    sweep: bool,
    toggles: &Toggles,
) -> Result<()> {
    if repeats == 0 {
        bail!("--repeats must be positive");
    }
    let mut base = ExperimentConfig::load(config)?;
    toggles.apply(&mut base);
    let grid = cells(base.run.ican.pseudo_per_real, sweep);
    let first_seed = base.run.seed;

    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| (0..repeats).map(move |r| (c, first_seed + r)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(c, seed)| -> Result<(f64, f64)> {
            let cell = &grid[c];
            let mut cfg = base.clone();
            cfg.reseed(seed);
            cfg.run.ican_enabled = cell.ican;
            cfg.run.isay_enabled = cell.isay;
            cfg.run.ican.pseudo_per_real = cell.pseudo_per_real;
            let (train, test) = cfg.load_data()?;
            let out = protocol::run(&cfg.run, &train, &test)
                .with_context(|| format!("{} seed {seed}", cell.variant))?;
            Ok((out.report.last_accuracy, out.report.average_accuracy))
        })
        .collect::<Result<_>>()?;

    let echo = serde_json::json!({
        "seed": first_seed,
        "repeats": repeats,
        "config": base,
    });
    let mut csv = String::new();
    writeln!(csv, "# {echo}")?;
    writeln!(
        csv,
        "group,variant,generator,pseudo_per_real,runs,last_mean,last_std,average_mean,average_std"
    )?;
    for (c, cell) in grid.iter().enumerate() {
        let runs = &results[c * repeats as usize..(c + 1) * repeats as usize];
        let last: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let avg: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let (lm, ls) = mean_std(&last);
        let (am, asd) = mean_std(&avg);
        writeln!(
            csv,
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            cell.group,
            cell.variant,
            base.run.ican.generator.as_str(),
            cell.pseudo_per_real,
            repeats,
            lm,
            ls,
            am,
            asd
        )?;
        println!(
            "{:<9} {:<10} p={:<4} last {:6.2} ± {:5.2}  average {:6.2} ± {:5.2}",
            cell.group, cell.variant, cell.pseudo_per_real, lm, ls, am, asd
        );
    }
    fs::create_dir_all(output_dir)
        .with_context(|| format!("creating {}", output_dir.display()))?;
    fs::write(output_dir.join("ablation.csv"), csv)?;
    Ok(())
}
