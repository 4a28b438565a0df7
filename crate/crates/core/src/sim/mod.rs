//! Deterministic execution model for programs with device-side launches.
//!
//! Blocks run functionally when they are dispatched to an SM slot; time is
//! accounted per thread, folded into block busy times, and advanced by a
//! discrete-event loop over block completions, launch-queue arrivals and
//! grid readiness.

pub mod dataset;
mod engine;
pub mod interp;
pub mod memory;
pub mod report;
pub mod value;

use thiserror::Error;

pub use dataset::Dataset;
pub use engine::simulate;
pub use report::LaunchRecord;
pub use interp::Trap;
pub use report::SimReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CostParams {
    pub instruction_cost: u64,
    /// Charged to a device thread per issued launch.
    pub launch_latency: u64,
    /// The pending-launch queue releases one grid per this many ticks.
    pub launch_service: u64,
    pub block_sched_overhead: u64,
    pub max_concurrent_blocks: usize,
    pub queue_capacity: usize,
    /// Per-thread surcharge for kernels that contain a launch statement.
    pub cdp_code_overhead: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            instruction_cost: 1,
            launch_latency: 500,
            launch_service: 100,
            block_sched_overhead: 10,
            max_concurrent_blocks: 64,
            queue_capacity: 8192,
            cdp_code_overhead: 20,
        }
    }
}

impl CostParams {
    /// All overheads zero, one instruction per tick.
    pub fn zero_overhead() -> Self {
        CostParams {
            instruction_cost: 1,
            launch_latency: 0,
            launch_service: 0,
            block_sched_overhead: 0,
            max_concurrent_blocks: 64,
            queue_capacity: 8192,
            cdp_code_overhead: 0,
        }
    }

    pub const KEYS: [&'static str; 7] = [
        "instructionCost",
        "launchLatency",
        "launchService",
        "blockSchedOverhead",
        "maxConcurrentBlocks",
        "queueCapacity",
        "cdpCodeOverhead",
    ];

    pub fn set(&mut self, key: &str, value: u64) -> Result<(), SimError> {
        match key {
            "instructionCost" => self.instruction_cost = value,
            "launchLatency" => self.launch_latency = value,
            "launchService" => self.launch_service = value,
            "blockSchedOverhead" => self.block_sched_overhead = value,
            "maxConcurrentBlocks" if value > 0 => self.max_concurrent_blocks = value as usize,
            "queueCapacity" => self.queue_capacity = value as usize,
            "cdpCodeOverhead" => self.cdp_code_overhead = value,
            "maxConcurrentBlocks" => return Err(SimError::Config("maxConcurrentBlocks must be positive".into())),
            _ => {
                return Err(SimError::Config(format!(
                    "unknown cost key `{key}` (expected one of {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply `key=value,key=value` overrides.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<(), SimError> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("expected key=value, got `{part}`")))?;
            let v: u64 = v
                .trim()
                .parse()
                .map_err(|_| SimError::Config(format!("`{v}` is not a nonnegative integer")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub costs: CostParams,
    /// Trap reads of another block's writes that no fence, launch or grid
    /// completion has published.
    pub fence_check: bool,
    /// Randomize thread interleaving and block dispatch order.
    pub seed: Option<u64>,
    /// Statements one block may execute before it is declared stuck.
    pub block_step_limit: u64,
    /// Entry host function.
    pub entry: String,
    /// Keep a log of every device launch request in the report.
    pub record_launches: bool,
    /// Expressions evaluated in the issuing thread at a launch site
    /// (`kernel:line`), logged with the launch record.
    pub probes: Vec<(String, crate::lang::Expr)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            costs: CostParams::default(),
            fence_check: false,
            seed: None,
            block_step_limit: 50_000_000,
            entry: "main".to_string(),
            record_launches: false,
            probes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("trap: {0}")]
    Trap(Trap),
    #[error("deadlock: {message}\n{dump}")]
    Deadlock { message: String, dump: String },
    #[error("pending launch queue overflow (capacity {capacity}) at site {site}")]
    QueueOverflow { site: String, capacity: usize },
    #[error("no host function `{0}` to run")]
    NoEntry(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl From<Trap> for SimError {
    fn from(t: Trap) -> Self {
        SimError::Trap(t)
    }
}

impl SimError {
    pub fn is_unpublished_read(&self) -> bool {
        matches!(self, SimError::Trap(t) if t.message.contains("unpublished"))
    }
}
