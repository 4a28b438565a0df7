use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dynopt::analysis::{find_sites, FallbackPolicy};
use dynopt::bench::{self, sweep::to_csv, DatasetSpec, SweepPoint, SweepRow};
use dynopt::lang::{self, has_errors, Program, Severity};
use dynopt::passes::{AggConfig, AggGranularity, CoarsenConfig, PassKind, Threshold, ThresholdConfig};
use dynopt::pipeline::{run_pipeline, PassConfig};
use dynopt::sim::{simulate, Dataset, SimConfig};

#[derive(Parser)]
#[command(name = "dynoptc", about = "Dynamic-parallelism optimizer and simulator for .mk kernels")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Transform a program and write the result.
    Emit {
        file: PathBuf,
        #[command(flatten)]
        passes: PassArgs,
        /// Output path; stdout when absent.
        #[arg(long)]
        emit: Option<PathBuf>,
        /// Also simulate the transformed program.
        #[arg(long)]
        run: bool,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Transform and simulate a program, printing its report.
    Run {
        file: PathBuf,
        #[command(flatten)]
        passes: PassArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Sweep pass configurations over a bundled benchmark.
    Sweep {
        #[arg(long)]
        bench: String,
        /// e.g. `powerlaw:10000:seed1`, `road:1000:seed7`, `hand`,
        /// `manylaunch:1024:seed3`
        #[arg(long)]
        dataset: String,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Comma list of thresholds; `off` disables the pass.
        #[arg(long, default_value = "0,32,inf")]
        thresholds: String,
        /// Comma list of coarsening factors; `off` disables the pass.
        #[arg(long, default_value = "off")]
        cfactors: String,
        #[arg(long, default_value = "none,block,multiblock,grid")]
        aggs: String,
        #[arg(long, default_value_t = 4)]
        group_size: u32,
        #[arg(long, default_value_t = 0)]
        agg_threshold: u32,
        #[arg(long)]
        cost: Option<String>,
    },
}

#[derive(Args)]
struct PassArgs {
    /// `n` or `inf`.
    #[arg(long)]
    threshold: Option<String>,
    /// Compare gridDim*blockDim against the threshold when the thread count
    /// cannot be extracted.
    #[arg(long)]
    product_fallback: bool,
    #[arg(long)]
    cfactor: Option<u32>,
    /// none, block, multiblock or grid.
    #[arg(long)]
    agg: Option<String>,
    #[arg(long, default_value_t = 4)]
    group_size: u32,
    #[arg(long, default_value_t = 0)]
    agg_threshold: u32,
    /// Print the per-site analysis before transforming.
    #[arg(long)]
    explain_analysis: bool,
    #[arg(long, hide = true)]
    pass_order: Option<String>,
}

#[derive(Args)]
struct SimArgs {
    /// Buffer initializers.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Cost overrides, `key=value,...`.
    #[arg(long)]
    cost: Option<String>,
    /// Randomized interleaving seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fence_check: bool,
    /// Write a one-row CSV summary here.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_threshold(s: &str) -> Result<Threshold> {
    Threshold::parse(s).with_context(|| format!("bad threshold `{s}`"))
}

fn parse_agg(s: &str) -> Result<AggGranularity> {
    AggGranularity::parse(s).with_context(|| format!("bad aggregation granularity `{s}`"))
}

impl PassArgs {
    fn config(&self) -> Result<PassConfig> {
        let threshold = match &self.threshold {
            Some(t) => Some(ThresholdConfig {
                threshold: parse_threshold(t)?,
                fallback: if self.product_fallback {
                    FallbackPolicy::Product
                } else {
                    FallbackPolicy::Skip
                },
            }),
            None => None,
        };
        let coarsen = self.cfactor.map(CoarsenConfig::new).transpose()?;
        let granularity = self.agg.as_deref().map(parse_agg).transpose()?.unwrap_or_default();
        let agg = AggConfig {
            granularity,
            group_size: self.group_size,
            agg_threshold: self.agg_threshold,
        };
        agg.check()?;
        let mut cfg = PassConfig {
            threshold,
            coarsen,
            aggregate: (granularity != AggGranularity::None).then_some(agg),
            ..PassConfig::default()
        };
        if let Some(order) = &self.pass_order {
            cfg.order = order
                .split(',')
                .map(|p| PassKind::from_name(p.trim()).with_context(|| format!("unknown pass `{p}`")))
                .collect::<Result<_>>()?;
        }
        Ok(cfg)
    }
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig {
            seed: self.seed,
            fence_check: self.fence_check,
            ..SimConfig::default()
        };
        if let Some(c) = &self.cost {
            cfg.costs.apply_overrides(c)?;
        }
        Ok(cfg)
    }

    fn dataset(&self) -> Result<Option<Dataset>> {
        match &self.dataset {
            None => Ok(None),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(Some(Dataset::parse(&text)?))
            }
        }
    }
}

fn load(file: &Path) -> Result<Program> {
    let src = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let name = file.display().to_string();
    let prog = lang::parse_unchecked(&src).map_err(|e| anyhow::anyhow!("{name}:{}: {}", e.span.line, e.message))?;
    let diags = lang::validate(&prog);
    for d in &diags {
        eprintln!("{}", d.render(&name));
    }
    if has_errors(&diags) {
        bail!("{name}: validation failed");
    }
    Ok(prog)
}

fn transform(file: &Path, passes: &PassArgs) -> Result<Program> {
    let prog = load(file)?;
    if passes.explain_analysis {
        for s in find_sites(&prog) {
            println!("{}", s.explain());
        }
    }
    let out = run_pipeline(&prog, &passes.config()?)?;
    for d in out.diagnostics.iter().filter(|d| d.severity != Severity::Info) {
        eprintln!("{}", d.render(&file.display().to_string()));
    }
    eprint!("{}", out.manifest_text());
    Ok(out.program)
}

fn simulate_and_print(prog: &Program, file: &Path, sim: &SimArgs) -> Result<()> {
    let ds = sim.dataset()?;
    let report = simulate(prog, ds.as_ref(), &sim.config()?)?;
    print!("{}", report.to_text());
    if let Some(path) = &sim.report {
        let row = SweepRow {
            bench: file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            dataset: sim.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()),
            point: SweepPoint::default(),
            result: Ok(report),
        };
        fs::write(path, to_csv(&[row])).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn split_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(f).collect()
}

fn main_inner() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Emit {
            file,
            passes,
            emit,
            run,
            sim,
        } => {
            let prog = transform(&file, &passes)?;
            let text = lang::print(&prog);
            match &emit {
                Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            if run {
                simulate_and_print(&prog, &file, &sim)?;
            }
        }
        Cmd::Run { file, passes, sim } => {
            let prog = transform(&file, &passes)?;
            simulate_and_print(&prog, &file, &sim)?;
        }
        Cmd::Sweep {
            bench: name,
            dataset,
            report,
            thresholds,
            cfactors,
            aggs,
            group_size,
            agg_threshold,
            cost,
        } => {
            let bench = bench::benchmark(&name).with_context(|| format!("unknown benchmark `{name}`"))?;
            let spec: DatasetSpec = dataset.parse()?;
            let thresholds = split_list(&thresholds, |t| match t {
                "off" => Ok(None),
                _ => parse_threshold(t).map(Some),
            })?;
            let cfactors = split_list(&cfactors, |c| match c {
                "off" => Ok(None),
                _ => c.parse().map(Some).with_context(|| format!("bad coarsening factor `{c}`")),
            })?;
            let aggs = split_list(&aggs, parse_agg)?;
            let mut points = SweepPoint::grid(&thresholds, &cfactors, &aggs);
            for p in &mut points {
                p.group_size = group_size;
                p.agg_threshold = agg_threshold;
            }
            let mut sim = SimConfig::default();
            if let Some(c) = &cost {
                sim.costs.apply_overrides(c)?;
            }
            let csv = to_csv(&bench::sweep(&bench, &spec, &points, &sim));
            match &report {
                Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
