use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::interp::{phase_index, Ctx, Env, LaunchReq, Thread, Yield};
use super::memory::{Cell, Memory};
use super::report::{BufferDump, LaunchRecord, SimReport};
use super::value::Value;
use super::{SimConfig, SimError};
use crate::lang::*;

/// Run the program's host entry to completion.
pub fn simulate(prog: &Program, dataset: Option<&Dataset>, cfg: &SimConfig) -> Result<SimReport, SimError> {
    let mut dev = Device::new(prog, cfg)?;
    if let Some(ds) = dataset {
        dev.load(ds)?;
    }
    dev.run_host()?;
    Ok(dev.finish())
}

struct GridTask<'p> {
    kernel: &'p KernelDef,
    seq: u64,
    grid: [u32; 3],
    block: [u32; 3],
    args: Vec<Value>,
    parent: Option<usize>,
    /// Dispatch order of block indices (shuffled in randomized mode).
    order: Option<Vec<u32>>,
    next: u32,
    blocks_total: u32,
    blocks_done: u32,
    children: u64,
    done: bool,
    phase: Phase,
    unpublished: Vec<(Cell, u32)>,
    glue: Vec<usize>,
}

impl GridTask<'_> {
    fn block_at(&self, i: u32) -> u32 {
        match &self.order {
            Some(o) => o[i as usize],
            None => i,
        }
    }
}

enum Ev {
    BlockDone { grid: usize },
    Enqueue(Box<PendingLaunch>),
    Ready { grid: usize },
}

struct PendingLaunch {
    req: LaunchReq,
    parent: usize,
    parent_block: u32,
    parent_thread: u32,
}

struct BlockOutcome {
    busy: u64,
    phase: [u64; 5],
    instructions: u64,
    launches: Vec<(u64, LaunchReq, u32)>,
}

struct Device<'p> {
    prog: &'p Program,
    cfg: &'p SimConfig,
    mem: Memory,
    defines: HashMap<&'p str, Value>,
    launching: HashSet<&'p str>,
    grids: Vec<GridTask<'p>>,
    ready: BTreeSet<usize>,
    events: BinaryHeap<Reverse<(u64, u64)>>,
    payloads: HashMap<u64, Ev>,
    ev_seq: u64,
    now: u64,
    free_slots: usize,
    departures: VecDeque<u64>,
    next_departure: u64,
    next_uid: u32,
    family_busy: Vec<bool>,
    rng: Option<ChaCha8Rng>,
    // Counters.
    num_launches: u64,
    host_launches: u64,
    blocks_scheduled: u64,
    instructions: u64,
    makespan: u64,
    max_pending: usize,
    phase_time: [u64; 5],
    busy_time: u64,
    log: Vec<LaunchRecord>,
}

/// Kernels whose code, including called device functions, contains a launch.
fn launching_kernels(prog: &Program) -> HashSet<&str> {
    let mut set: HashSet<&str> = prog
        .kernels
        .iter()
        .filter(|k| k.flags.contains_launch || !visit::launches(&k.body).is_empty())
        .map(|k| k.name.as_str())
        .collect();
    loop {
        let mut grew = false;
        for k in &prog.kernels {
            if set.contains(k.name.as_str()) {
                continue;
            }
            let mut calls = false;
            visit::walk_stmts(&k.body, &mut |s| {
                if let StmtKind::Call { callee, .. } = &s.kind {
                    calls |= set.contains(callee.as_str());
                }
            });
            if calls {
                set.insert(&k.name);
                grew = true;
            }
        }
        if !grew {
            return set;
        }
    }
}

fn dims_product(d: [u32; 3]) -> u64 {
    d.iter().map(|&x| x as u64).product()
}

impl<'p> Device<'p> {
    fn new(prog: &'p Program, cfg: &'p SimConfig) -> Result<Self, SimError> {
        let mut mem = Memory::new(cfg.fence_check);
        for g in &prog.globals {
            mem.declare_global(&g.name, g.elem, g.extent);
        }
        let defines = prog
            .defines
            .iter()
            .map(|d| {
                let v = i32::try_from(d.value).map(Value::I32).unwrap_or(Value::I64(d.value));
                (d.name.as_str(), v)
            })
            .collect();
        Ok(Device {
            prog,
            cfg,
            mem,
            defines,
            launching: launching_kernels(prog),
            grids: Vec::new(),
            ready: BTreeSet::new(),
            events: BinaryHeap::new(),
            payloads: HashMap::new(),
            ev_seq: 0,
            now: 0,
            free_slots: cfg.costs.max_concurrent_blocks,
            departures: VecDeque::new(),
            next_departure: 0,
            next_uid: 1,
            family_busy: vec![false; prog.glue.len()],
            rng: cfg.seed.map(ChaCha8Rng::seed_from_u64),
            num_launches: 0,
            host_launches: 0,
            blocks_scheduled: 0,
            instructions: 0,
            makespan: 0,
            max_pending: 0,
            phase_time: [0; 5],
            busy_time: 0,
            log: Vec::new(),
        })
    }

    fn load(&mut self, ds: &Dataset) -> Result<(), SimError> {
        for (name, data) in &ds.buffers {
            let id = self
                .mem
                .lookup(name)
                .ok_or_else(|| SimError::Dataset(format!("no global buffer `{name}`")))?;
            self.mem
                .set_data(id, data.clone())
                .map_err(|e| SimError::Dataset(e.to_string()))?;
        }
        Ok(())
    }

    fn push_event(&mut self, time: u64, ev: Ev) {
        let seq = self.ev_seq;
        self.ev_seq += 1;
        self.events.push(Reverse((time, seq)));
        self.payloads.insert(seq, ev);
    }

    fn run_host(&mut self) -> Result<(), SimError> {
        let prog = self.prog;
        let main = prog
            .kernel(&self.cfg.entry)
            .filter(|k| k.kind == KernelKind::Host)
            .ok_or_else(|| SimError::NoEntry(self.cfg.entry.clone()))?;
        let mut host = Thread::new(main, &[], Env::default(), Phase::Parent)?;
        let mut steps = 0u64;
        loop {
            let y = {
                let mut ctx = Ctx {
                    prog,
                    mem: &mut self.mem,
                    costs: &self.cfg.costs,
                    defines: &self.defines,
                    shared: HashMap::new(),
                    probes: &self.cfg.probes,
                };
                host.step(&mut ctx)?
            };
            steps += 1;
            if steps > self.cfg.block_step_limit {
                return Err(SimError::Deadlock {
                    message: "host step limit exceeded".into(),
                    dump: format!("host `{}`", main.name),
                });
            }
            for req in std::mem::take(&mut host.launches) {
                self.host_launch(req.callee, req.grid, req.block, req.args, Phase::Parent)?;
            }
            match y {
                Some(Yield::Sync) => self.run_device()?,
                Some(Yield::Done) => {
                    self.run_device()?;
                    return Ok(());
                }
                Some(Yield::Barrier(_)) => {
                    return Err(SimError::Config("barrier in host code".into()));
                }
                None => {}
            }
        }
    }

    fn host_launch(
        &mut self,
        callee: String,
        grid: [u32; 3],
        block: [u32; 3],
        args: Vec<Value>,
        phase: Phase,
    ) -> Result<(), SimError> {
        if dims_product(grid) * dims_product(block) == 0 {
            return Ok(());
        }
        self.host_launches += 1;
        let g = self.create_grid(&callee, grid, block, args, None, phase)?;
        let at = self.now + self.cfg.costs.launch_latency;
        self.push_event(at, Ev::Ready { grid: g });
        Ok(())
    }

    fn create_grid(
        &mut self,
        callee: &str,
        grid: [u32; 3],
        block: [u32; 3],
        args: Vec<Value>,
        parent: Option<usize>,
        phase: Phase,
    ) -> Result<usize, SimError> {
        let prog = self.prog;
        let kernel = prog
            .kernel(callee)
            .filter(|k| k.kind == KernelKind::Entry)
            .ok_or_else(|| SimError::Config(format!("unknown kernel `{callee}`")))?;
        let total = dims_product(grid);
        if total > u32::MAX as u64 {
            return Err(SimError::Config(format!("grid of `{callee}` too large")));
        }
        let mut glue = Vec::new();
        for (i, gd) in prog.glue.iter().enumerate() {
            if gd.parent == callee {
                if self.family_busy[i] {
                    return Err(SimError::Config(format!(
                        "aggregation buffers {} still in use by a running `{callee}` grid",
                        gd.family()
                    )));
                }
                self.setup_glue(gd, grid[0], block[0])?;
                self.family_busy[i] = true;
                glue.push(i);
            }
        }
        let order = self.rng.as_mut().map(|rng| {
            let mut o: Vec<u32> = (0..total as u32).collect();
            o.shuffle(rng);
            o
        });
        let id = self.grids.len();
        self.grids.push(GridTask {
            kernel,
            seq: id as u64,
            grid,
            block,
            args,
            parent,
            order,
            next: 0,
            blocks_total: total as u32,
            blocks_done: 0,
            children: 0,
            done: false,
            phase,
            unpublished: Vec::new(),
            glue,
        });
        Ok(id)
    }

    /// Size and zero the buffer family of one aggregation site.
    fn setup_glue(&mut self, gd: &GlueDecl, gx: u32, bx: u32) -> Result<(), SimError> {
        let gx = gx as usize;
        let bx = bx as usize;
        let gs = gd.group_size.max(1) as usize;
        let (groups, rows) = match gd.granularity {
            Granularity::Block => (gx, bx),
            Granularity::MultiBlock => (gx.div_ceil(gs), gs * bx),
            Granularity::Grid => (1, gx * bx),
        };
        let fam = gd.family();
        let child = self
            .prog
            .kernel(&gd.child)
            .ok_or_else(|| SimError::Config(format!("glue child `{}` missing", gd.child)))?;
        let mut names: Vec<(String, usize)> = (0..child.params.len())
            .map(|i| (format!("{fam}_args{i}"), groups * rows))
            .collect();
        names.push((format!("{fam}_gdim"), groups * rows));
        names.push((format!("{fam}_bdim"), groups * rows));
        for s in ["max", "ctr", "done"] {
            names.push((format!("{fam}_{s}"), groups));
        }
        for (n, extent) in names {
            let id = self
                .mem
                .lookup(&n)
                .ok_or_else(|| SimError::Config(format!("aggregation buffer `{n}` not declared")))?;
            self.mem.reset(id, extent);
        }
        Ok(())
    }

    fn dispatch(&mut self) -> Result<(), SimError> {
        while self.free_slots > 0 && !self.ready.is_empty() {
            let g = match self.rng.as_mut() {
                Some(rng) => {
                    let k = rng.gen_range(0..self.ready.len());
                    *self.ready.iter().nth(k).expect("index in range")
                }
                None => *self.ready.iter().next().expect("nonempty"),
            };
            let task = &mut self.grids[g];
            let b = task.block_at(task.next);
            task.next += 1;
            if task.next == task.blocks_total {
                self.ready.remove(&g);
            }
            let out = self.run_block(g, b)?;
            self.free_slots -= 1;
            self.blocks_scheduled += 1;
            self.instructions += out.instructions;
            let sched = self.cfg.costs.block_sched_overhead;
            let sched_phase = if self.grids[g].parent.is_some() {
                Phase::Launch
            } else {
                self.grids[g].phase
            };
            self.phase_time[phase_index(sched_phase)] += sched;
            for (i, t) in out.phase.iter().enumerate() {
                self.phase_time[i] += t;
            }
            self.busy_time += sched + out.busy;
            let start = self.now + sched;
            self.grids[g].children += out.launches.len() as u64;
            for (offset, req, thread) in out.launches {
                let p = PendingLaunch {
                    req,
                    parent: g,
                    parent_block: b,
                    parent_thread: thread,
                };
                self.push_event(start + offset, Ev::Enqueue(Box::new(p)));
            }
            self.push_event(start + out.busy, Ev::BlockDone { grid: g });
        }
        Ok(())
    }

    fn run_block(&mut self, g: usize, b: u32) -> Result<BlockOutcome, SimError> {
        let prog = self.prog;
        let task = &self.grids[g];
        let kernel = task.kernel;
        let (grid, block) = (task.grid, task.block);
        let args = task.args.clone();
        let phase = task.phase;
        let uid = self.next_uid;
        self.next_uid += 1;
        let n = dims_product(block) as usize;
        let split = |lin: u32, d: [u32; 3]| {
            let x = lin % d[0];
            let y = (lin / d[0]) % d[1];
            let z = lin / (d[0] * d[1]);
            [x as i32, y as i32, z as i32]
        };
        let to_i32 = |d: [u32; 3]| [d[0] as i32, d[1] as i32, d[2] as i32];
        let cdp = if self.launching.contains(kernel.name.as_str()) {
            self.cfg.costs.cdp_code_overhead
        } else {
            0
        };
        let mut threads = Vec::with_capacity(n);
        for t in 0..n as u32 {
            let env = Env {
                block_idx: split(b, grid),
                thread_idx: split(t, block),
                grid_dim: to_i32(grid),
                block_dim: to_i32(block),
                block_uid: uid,
            };
            let mut th = Thread::new(kernel, &args, env, phase)?;
            if cdp > 0 {
                th.charge(Phase::Launch, cdp);
            }
            threads.push(th);
        }
        let mark = self.mem.shared_mark();
        let mut rng = self.rng.take();
        let result = run_threads(
            &mut threads,
            &mut Ctx {
                prog,
                mem: &mut self.mem,
                costs: &self.cfg.costs,
                defines: &self.defines,
                shared: HashMap::new(),
                probes: &self.cfg.probes,
            },
            rng.as_mut(),
            self.cfg.block_step_limit,
            uid,
            &kernel.name,
            b,
        );
        self.rng = rng;
        self.mem.free_shared(mark);
        let mut out = result?;
        for t in &mut threads {
            out.instructions += t.instructions;
            if self.cfg.fence_check {
                let cells = std::mem::take(&mut t.unpublished);
                self.grids[g].unpublished.extend(cells.into_iter().map(|c| (c, uid)));
            }
        }
        Ok(out)
    }

    fn run_device(&mut self) -> Result<(), SimError> {
        loop {
            self.dispatch()?;
            let Some(Reverse((t, _))) = self.events.peek().copied() else {
                return Ok(());
            };
            self.now = t;
            while let Some(Reverse((t2, seq))) = self.events.peek().copied() {
                if t2 != t {
                    break;
                }
                self.events.pop();
                let ev = self.payloads.remove(&seq).expect("payload");
                self.handle(ev)?;
            }
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Ready { grid } => {
                if self.grids[grid].blocks_total > 0 {
                    self.ready.insert(grid);
                }
            }
            Ev::BlockDone { grid } => {
                self.free_slots += 1;
                self.grids[grid].blocks_done += 1;
                self.try_complete(grid)?;
            }
            Ev::Enqueue(p) => self.enqueue(*p)?,
        }
        Ok(())
    }

    fn enqueue(&mut self, p: PendingLaunch) -> Result<(), SimError> {
        let PendingLaunch {
            req,
            parent,
            parent_block,
            parent_thread,
        } = p;
        if self.cfg.record_launches {
            self.log.push(LaunchRecord {
                site: req.site.clone(),
                callee: req.callee.clone(),
                grid: req.grid,
                block: req.block,
                args: req.args.clone(),
                parent_grid: self.grids[parent].seq,
                parent_block,
                parent_thread,
                probe: req.probe,
            });
        }
        if dims_product(req.grid) * dims_product(req.block) == 0 {
            self.grids[parent].children -= 1;
            return self.try_complete(parent);
        }
        self.num_launches += 1;
        while self.departures.front().is_some_and(|&d| d <= self.now) {
            self.departures.pop_front();
        }
        let depart = self.now.max(self.next_departure);
        self.next_departure = depart + self.cfg.costs.launch_service;
        self.departures.push_back(depart);
        if self.departures.len() > self.cfg.costs.queue_capacity {
            return Err(SimError::QueueOverflow {
                site: req.site,
                capacity: self.cfg.costs.queue_capacity,
            });
        }
        self.max_pending = self.max_pending.max(self.departures.len());
        let g = self.create_grid(&req.callee, req.grid, req.block, req.args, Some(parent), Phase::Child)?;
        self.push_event(depart, Ev::Ready { grid: g });
        Ok(())
    }

    fn try_complete(&mut self, mut g: usize) -> Result<(), SimError> {
        loop {
            let t = &self.grids[g];
            if t.done || t.blocks_done < t.blocks_total || t.children > 0 {
                return Ok(());
            }
            self.grids[g].done = true;
            self.makespan = self.makespan.max(self.now);
            for (cell, uid) in std::mem::take(&mut self.grids[g].unpublished) {
                self.mem.publish(&[cell], uid);
            }
            self.grids[g].args = Vec::new();
            for gi in std::mem::take(&mut self.grids[g].glue) {
                self.family_busy[gi] = false;
                let prog = self.prog;
                let gd = &prog.glue[gi];
                if gd.granularity == Granularity::Grid {
                    self.grid_glue_launch(gd)?;
                }
            }
            match self.grids[g].parent {
                Some(p) => {
                    self.grids[p].children -= 1;
                    g = p;
                }
                None => return Ok(()),
            }
        }
    }

    /// Grid-granularity completion hook: launch the aggregated child from
    /// the host if any parent recorded work.
    fn grid_glue_launch(&mut self, gd: &GlueDecl) -> Result<(), SimError> {
        let fam = gd.family();
        let read = |m: &Memory, n: &str| -> Result<i64, SimError> {
            let id = m
                .lookup(n)
                .ok_or_else(|| SimError::Config(format!("aggregation buffer `{n}` not declared")))?;
            m.load(id, 0, 0)
                .and_then(|v| v.as_i64().map_err(|_| super::memory::MemError::BadHandle))
                .map_err(|e| SimError::Config(e.to_string()))
        };
        let ctr = read(&self.mem, &format!("{fam}_ctr"))?;
        let max = read(&self.mem, &format!("{fam}_max"))?;
        let (n, sum) = (ctr >> 32, ctr & 0xffff_ffff);
        if sum > 0 {
            self.host_launch(
                gd.agg_kernel(),
                [sum as u32, 1, 1],
                [max as u32, 1, 1],
                vec![Value::I32(0), Value::I32(n as i32), Value::I32(sum as i32)],
                Phase::Child,
            )?;
        }
        Ok(())
    }

    fn finish(self) -> SimReport {
        let buffers = self
            .mem
            .globals()
            .iter()
            .map(|b| BufferDump {
                name: b.name.clone(),
                data: b.data.clone(),
            })
            .collect();
        SimReport {
            buffers,
            num_launches: self.num_launches,
            host_launches: self.host_launches,
            blocks_scheduled: self.blocks_scheduled,
            instructions: self.instructions,
            makespan: self.makespan,
            max_pending_depth: self.max_pending,
            phase_time: self.phase_time,
            busy_time: self.busy_time,
            launch_log: self.log,
        }
    }
}

fn blocked_dump(threads: &[Thread<'_>], waiting: &[Option<usize>], kernel: &str, block: u32) -> String {
    let mut lines = Vec::new();
    for (i, t) in threads.iter().enumerate() {
        let state = match (t.done, waiting[i]) {
            (true, _) => "exited".to_string(),
            (false, Some(id)) => format!("waiting at barrier #{id:x}"),
            (false, None) => "running".to_string(),
        };
        lines.push(format!("  {kernel} block {block} thread {i}: {state}"));
        if lines.len() >= 16 {
            lines.push(format!("  ... {} threads total", threads.len()));
            break;
        }
    }
    lines.join("\n")
}

/// Run every thread of one block to completion, barrier segment by barrier
/// segment. Returns busy time and attributed phases of the critical path.
fn run_threads<'p>(
    threads: &mut [Thread<'p>],
    ctx: &mut Ctx<'_, 'p>,
    mut rng: Option<&mut ChaCha8Rng>,
    step_limit: u64,
    uid: u32,
    kernel: &str,
    block: u32,
) -> Result<BlockOutcome, SimError> {
    let n = threads.len();
    let mut waiting: Vec<Option<usize>> = vec![None; n];
    let mut out = BlockOutcome {
        busy: 0,
        phase: [0; 5],
        instructions: 0,
        launches: Vec::new(),
    };
    let mut runnable: Vec<usize> = (0..n).collect();
    let mut cursor = 0usize;
    let mut steps = 0u64;
    loop {
        let pick = match rng.as_deref_mut() {
            Some(r) if !runnable.is_empty() => Some(runnable[r.gen_range(0..runnable.len())]),
            Some(_) => None,
            None => {
                while cursor < n && (threads[cursor].done || waiting[cursor].is_some()) {
                    cursor += 1;
                }
                (cursor < n).then_some(cursor)
            }
        };
        match pick {
            Some(i) => {
                let budget = match rng.as_deref_mut() {
                    Some(r) => r.gen_range(1..=4),
                    None => u32::MAX,
                };
                let mut ran = 0;
                let stopped = loop {
                    if ran == budget {
                        break false;
                    }
                    ran += 1;
                    steps += 1;
                    if steps > step_limit {
                        return Err(SimError::Deadlock {
                            message: format!("block step limit exceeded in `{kernel}`"),
                            dump: blocked_dump(threads, &waiting, kernel, block),
                        });
                    }
                    let y = threads[i].step(ctx)?;
                    if !threads[i].launches.is_empty() {
                        // A launch makes the block's prior writes visible to the child.
                        if ctx.mem.fence_check {
                            for t in threads.iter_mut() {
                                let cells = std::mem::take(&mut t.unpublished);
                                ctx.mem.publish(&cells, uid);
                            }
                        }
                        let seg_start = out.busy;
                        for req in std::mem::take(&mut threads[i].launches) {
                            out.launches.push((seg_start + req.at, req, i as u32));
                        }
                    }
                    match y {
                        None => {}
                        Some(Yield::Barrier(id)) => {
                            waiting[i] = Some(id);
                            break true;
                        }
                        Some(Yield::Done) => break true,
                        Some(Yield::Sync) => {
                            return Err(SimError::Trap(super::Trap {
                                kernel: kernel.to_string(),
                                line: 0,
                                message: "sync in device code".into(),
                            }))
                        }
                    }
                };
                if stopped {
                    if let Some(pos) = runnable.iter().position(|&x| x == i) {
                        runnable.swap_remove(pos);
                    }
                }
            }
            None => {
                let (crit, max) = threads
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (i, t.seg_cost))
                    .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
                out.busy += max;
                if n > 0 {
                    for (k, v) in threads[crit].seg_phase.iter().enumerate() {
                        out.phase[k] += v;
                    }
                }
                for t in threads.iter_mut() {
                    t.seg_cost = 0;
                    t.seg_phase = [0; 5];
                }
                let live: Vec<usize> = (0..n).filter(|&i| !threads[i].done).collect();
                if live.is_empty() {
                    return Ok(out);
                }
                let first = waiting[live[0]];
                if live.iter().any(|&i| waiting[i] != first) {
                    return Err(SimError::Deadlock {
                        message: format!("barrier divergence in `{kernel}` block {block}"),
                        dump: blocked_dump(threads, &waiting, kernel, block),
                    });
                }
                for w in waiting.iter_mut() {
                    *w = None;
                }
                runnable = live;
                cursor = 0;
            }
        }
    }
}
