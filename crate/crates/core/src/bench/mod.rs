//! Bundled benchmarks, dataset generators and the parameter sweep driver.

pub mod graph;
pub mod sweep;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lang::{parse, Program};
use crate::pipeline::{run_pipeline, PassConfig, PipelineError};
use crate::sim::memory::Data;
use crate::sim::{simulate, Dataset, SimConfig, SimError, SimReport};

pub use graph::{generate_graph, Graph, GraphKind};
pub use sweep::{sweep, SweepPoint, SweepRow};

pub const SSSP_INF: i32 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Benchmark {
    pub name: &'static str,
    /// Source with nested launches.
    pub cdp: &'static str,
    /// Reference source without nested launches.
    pub nocdp: &'static str,
    /// Buffers compared against the reference.
    pub outputs: &'static [&'static str],
}

pub const BFS: Benchmark = Benchmark {
    name: "bfs",
    cdp: include_str!("../../kernels/bfs.mk"),
    nocdp: include_str!("../../kernels/bfs_nocdp.mk"),
    outputs: &["dist"],
};

pub const SSSP: Benchmark = Benchmark {
    name: "sssp",
    cdp: include_str!("../../kernels/sssp.mk"),
    nocdp: include_str!("../../kernels/sssp_nocdp.mk"),
    outputs: &["dist"],
};

pub const MANYLAUNCH: Benchmark = Benchmark {
    name: "manylaunch",
    cdp: include_str!("../../kernels/manylaunch.mk"),
    nocdp: include_str!("../../kernels/manylaunch_nocdp.mk"),
    outputs: &["out"],
};

pub const ALL: [Benchmark; 3] = [BFS, SSSP, MANYLAUNCH];

pub fn benchmark(name: &str) -> Option<Benchmark> {
    ALL.into_iter().find(|b| b.name == name)
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("bad dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("output `{buffer}` differs at element {index}: expected {expected}, got {actual}")]
    Mismatch {
        buffer: String,
        index: usize,
        expected: String,
        actual: String,
    },
}

/// A dataset description such as `powerlaw:10000:seed1`, `road:1000:7`,
/// `hand` or `manylaunch:1024:seed3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSpec {
    Graph { kind: GraphKind, size: usize, seed: u64 },
    ManyLaunch { parents: usize, seed: u64 },
}

impl FromStr for DatasetSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        let bad = || BenchError::Dataset(format!("cannot parse `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts == ["hand"] {
            return Ok(DatasetSpec::Graph {
                kind: GraphKind::Hand,
                size: 10,
                seed: 0,
            });
        }
        let (kind, size, seed) = match parts.as_slice() {
            [k, n] => (*k, *n, "0"),
            [k, n, seed] => (*k, *n, *seed),
            _ => return Err(bad()),
        };
        let size: usize = size.parse().map_err(|_| bad())?;
        let seed: u64 = seed.trim_start_matches("seed").parse().map_err(|_| bad())?;
        if size == 0 || size > 100_000 {
            return Err(BenchError::Dataset(format!("size {size} outside 1..=100000")));
        }
        Ok(match kind {
            "powerlaw" => DatasetSpec::Graph {
                kind: GraphKind::PowerLaw,
                size,
                seed,
            },
            "road" => DatasetSpec::Graph {
                kind: GraphKind::Road,
                size,
                seed,
            },
            "manylaunch" => DatasetSpec::ManyLaunch { parents: size, seed },
            _ => return Err(bad()),
        })
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Graph {
                kind: GraphKind::Hand, ..
            } => f.write_str("hand"),
            DatasetSpec::Graph { kind, size, seed } => write!(f, "{}:{size}:seed{seed}", kind.name()),
            DatasetSpec::ManyLaunch { parents, seed } => write!(f, "manylaunch:{parents}:seed{seed}"),
        }
    }
}

/// Child sizes for the launch microbenchmark: 90% below 32, 10% in
/// [256, 1024].
pub fn manylaunch_sizes(parents: usize, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..parents)
        .map(|_| {
            if rng.gen_bool(0.1) {
                rng.gen_range(256..=1024)
            } else {
                rng.gen_range(0..32)
            }
        })
        .collect()
}

pub fn manylaunch_dataset(sizes: &[i32]) -> Dataset {
    let mut offs = Vec::with_capacity(sizes.len());
    let mut total = 0;
    for &s in sizes {
        offs.push(total);
        total += s;
    }
    Dataset::new()
        .with_i32("meta", vec![sizes.len() as i32])
        .with_i32("sizes", sizes.to_vec())
        .with_i32("offs", offs)
        .with_i32("out", vec![0; total as usize])
}

pub fn graph_dataset(g: &Graph, weighted: bool) -> Dataset {
    let n = g.vertices();
    let (unreached, ds) = if weighted {
        (SSSP_INF, Dataset::new().with_i32("wt", g.weight.clone()))
    } else {
        (-1, Dataset::new())
    };
    let mut dist = vec![unreached; n];
    dist[0] = 0;
    ds.with_i32("meta", vec![n as i32])
        .with_i32("row", g.row.clone())
        .with_i32("col", g.col.clone())
        .with_i32("dist", dist)
        .with_i32("changed", vec![0])
}

impl Benchmark {
    pub fn cdp_program(&self) -> Program {
        parse(self.cdp).expect("bundled benchmark source is valid")
    }

    pub fn nocdp_program(&self) -> Program {
        parse(self.nocdp).expect("bundled benchmark source is valid")
    }

    pub fn dataset(&self, spec: &DatasetSpec) -> Result<Dataset, BenchError> {
        match (self.name, spec) {
            ("manylaunch", DatasetSpec::ManyLaunch { parents, seed }) => {
                Ok(manylaunch_dataset(&manylaunch_sizes(*parents, *seed)))
            }
            ("bfs" | "sssp", DatasetSpec::Graph { kind, size, seed }) => {
                Ok(graph_dataset(&generate_graph(*kind, *size, *seed), self.name == "sssp"))
            }
            _ => Err(BenchError::Dataset(format!("`{spec}` does not fit benchmark `{}`", self.name))),
        }
    }

    pub fn reference(&self, ds: &Dataset, sim: &SimConfig) -> Result<SimReport, BenchError> {
        Ok(simulate(&self.nocdp_program(), Some(ds), sim)?)
    }

    /// Transform the nested-launch source with `pass` and simulate it.
    pub fn run_variant(&self, ds: &Dataset, pass: &PassConfig, sim: &SimConfig) -> Result<SimReport, BenchError> {
        let out = run_pipeline(&self.cdp_program(), pass)?;
        Ok(simulate(&out.program, Some(ds), sim)?)
    }

    /// Element-exact comparison of the output buffers.
    pub fn compare(&self, reference: &SimReport, report: &SimReport) -> Result<(), BenchError> {
        for &name in self.outputs {
            let mismatch = |index: usize, expected: String, actual: String| BenchError::Mismatch {
                buffer: name.to_string(),
                index,
                expected,
                actual,
            };
            let (Some(want), Some(got)) = (reference.buffer(name), report.buffer(name)) else {
                return Err(mismatch(0, "buffer".into(), "missing".into()));
            };
            if want == got {
                continue;
            }
            if want.len() != got.len() {
                return Err(mismatch(0, format!("length {}", want.len()), format!("length {}", got.len())));
            }
            let i = (0..want.len())
                .find(|&i| data_at(want, i) != data_at(got, i))
                .unwrap_or(0);
            return Err(mismatch(i, data_at(want, i), data_at(got, i)));
        }
        Ok(())
    }
}

fn data_at(d: &Data, i: usize) -> String {
    match d {
        Data::I32(v) => v[i].to_string(),
        Data::I64(v) => v[i].to_string(),
        Data::F32(v) => format!("{:?}", v[i]),
        Data::Ptr(v) => format!("{:?}", v[i]),
    }
}

/// Run the transformed benchmark and check it against the reference.
pub fn run_benchmark(
    bench: &Benchmark,
    ds: &Dataset,
    pass: &PassConfig,
    sim: &SimConfig,
) -> Result<SimReport, BenchError> {
    let reference = bench.reference(ds, sim)?;
    let report = bench.run_variant(ds, pass, sim)?;
    bench.compare(&reference, &report)?;
    Ok(report)
}
