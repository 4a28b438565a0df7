//! Exhaustive configuration sweep with CSV output.

use std::fmt::Write;

use rayon::prelude::*;

use super::{Benchmark, DatasetSpec};
use crate::passes::{AggConfig, AggGranularity, CoarsenConfig, Threshold, ThresholdConfig};
use crate::pipeline::PassConfig;
use crate::sim::{SimConfig, SimReport};

pub const CSV_HEADER: &str = "bench,dataset,threshold,cfactor,agg,group_size,agg_threshold,num_launches,host_launches,blocks_scheduled,instructions,makespan,t_parent,t_launch,t_agg,t_disagg,t_child,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    /// `None` disables thresholding.
    pub threshold: Option<Threshold>,
    /// `None` disables coarsening.
    pub cfactor: Option<u32>,
    pub agg: AggGranularity,
    pub group_size: u32,
    pub agg_threshold: u32,
}

impl Default for SweepPoint {
    fn default() -> Self {
        SweepPoint {
            threshold: None,
            cfactor: None,
            agg: AggGranularity::None,
            group_size: 4,
            agg_threshold: 0,
        }
    }
}

impl SweepPoint {
    pub fn pass_config(&self) -> Result<PassConfig, String> {
        let coarsen = match self.cfactor {
            Some(f) => Some(CoarsenConfig::new(f).map_err(|e| e.to_string())?),
            None => None,
        };
        let aggregate = (self.agg != AggGranularity::None).then_some(AggConfig {
            granularity: self.agg,
            group_size: self.group_size,
            agg_threshold: self.agg_threshold,
        });
        Ok(PassConfig {
            threshold: self.threshold.map(ThresholdConfig::new),
            coarsen,
            aggregate,
            ..PassConfig::default()
        })
    }

    /// The cross product, in nesting order threshold, cfactor, agg.
    pub fn grid(thresholds: &[Option<Threshold>], cfactors: &[Option<u32>], aggs: &[AggGranularity]) -> Vec<SweepPoint> {
        let mut v = Vec::new();
        for &threshold in thresholds {
            for &cfactor in cfactors {
                for &agg in aggs {
                    v.push(SweepPoint {
                        threshold,
                        cfactor,
                        agg,
                        ..SweepPoint::default()
                    });
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub bench: String,
    pub dataset: String,
    pub point: SweepPoint,
    pub result: Result<SimReport, String>,
}

fn agg_name(a: AggGranularity) -> &'static str {
    match a {
        AggGranularity::None => "none",
        AggGranularity::Block => "block",
        AggGranularity::MultiBlock => "multiblock",
        AggGranularity::Grid => "grid",
    }
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let p = &self.point;
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            self.bench,
            self.dataset,
            p.threshold.map_or("off".to_string(), |t| t.to_string()),
            p.cfactor.map_or("off".to_string(), |c| c.to_string()),
            agg_name(p.agg),
            if p.agg == AggGranularity::MultiBlock {
                p.group_size.to_string()
            } else {
                "-".into()
            },
            p.agg_threshold,
        );
        match &self.result {
            Ok(r) => {
                let _ = write!(
                    s,
                    ",{},{},{},{},{}",
                    r.num_launches, r.host_launches, r.blocks_scheduled, r.instructions, r.makespan
                );
                for t in r.phase_time {
                    let _ = write!(s, ",{t}");
                }
                s.push(',');
            }
            Err(e) => {
                s.push_str(&",".repeat(10));
                s.push_str(&e.replace([',', '\n'], ";"));
            }
        }
        s
    }
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Run every point (in parallel) and check each against the reference.
/// Rows come back in `points` order.
pub fn sweep(bench: &Benchmark, spec: &DatasetSpec, points: &[SweepPoint], sim: &SimConfig) -> Vec<SweepRow> {
    let row = |point: SweepPoint, result: Result<SimReport, String>| SweepRow {
        bench: bench.name.to_string(),
        dataset: spec.to_string(),
        point,
        result,
    };
    let prepared = bench
        .dataset(spec)
        .and_then(|ds| bench.reference(&ds, sim).map(|r| (ds, r)));
    let (ds, reference) = match prepared {
        Ok(v) => v,
        Err(e) => return points.iter().map(|p| row(*p, Err(e.to_string()))).collect(),
    };
    points
        .par_iter()
        .map(|p| {
            let result = p.pass_config().and_then(|cfg| {
                let report = bench.run_variant(&ds, &cfg, sim).map_err(|e| e.to_string())?;
                bench.compare(&reference, &report).map_err(|e| e.to_string())?;
                Ok(report)
            });
            row(*p, result)
        })
        .collect()
}
