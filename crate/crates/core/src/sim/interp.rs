//! Resumable per-thread interpreter.
//!
//! A thread is an explicit frame stack over borrowed statement lists, so the
//! block runner can suspend it at barriers or after any statement.

use std::collections::HashMap;

use super::memory::{Cell, MemError, Memory};
use super::value::{self, BufId, Value, ValueError};
use super::CostParams;
use crate::lang::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Trap {
    pub kernel: String,
    pub line: u32,
    pub message: String,
}

impl std::fmt::Display for Trap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.kernel, self.line, self.message)
    }
}

/// Builtin index values of one thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env {
    pub block_idx: [i32; 3],
    pub thread_idx: [i32; 3],
    pub grid_dim: [i32; 3],
    pub block_dim: [i32; 3],
    /// Globally unique block id (0 is the host).
    pub block_uid: u32,
}

/// State shared by all threads of the executing block.
pub struct Ctx<'a, 'p> {
    pub prog: &'p Program,
    pub mem: &'a mut Memory,
    pub costs: &'a CostParams,
    pub defines: &'a HashMap<&'p str, Value>,
    /// Shared arrays allocated so far in this block.
    pub shared: HashMap<&'p str, BufId>,
    pub probes: &'a [(String, Expr)],
}

#[derive(Debug, Clone)]
pub struct LaunchReq {
    pub callee: String,
    pub grid: [u32; 3],
    pub block: [u32; 3],
    pub args: Vec<Value>,
    /// Thread-local segment time at which the launch was issued.
    pub at: u64,
    pub site: String,
    pub probe: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Yield {
    /// Waiting at the barrier statement with this identity.
    Barrier(usize),
    Done,
    /// Host only.
    Sync,
}

enum FrameKind<'p> {
    Seq,
    While { cond: &'p Expr },
    For { cond: &'p Expr, step: &'p Stmt, outer_mark: usize },
    Call { fn_base: usize },
    Region { prev: Phase },
}

struct Frame<'p> {
    stmts: &'p [Stmt],
    pc: usize,
    locals_mark: usize,
    kind: FrameKind<'p>,
}

struct Local<'p> {
    name: &'p str,
    ty: Type,
    val: Value,
}

pub struct Thread<'p> {
    frames: Vec<Frame<'p>>,
    locals: Vec<Local<'p>>,
    fn_base: usize,
    pub env: Env,
    pub phase: Phase,
    /// Cost accumulated in the current barrier segment, total and per phase.
    pub seg_cost: u64,
    pub seg_phase: [u64; 5],
    pub instructions: u64,
    pub launches: Vec<LaunchReq>,
    pub unpublished: Vec<Cell>,
    kernel: &'p str,
    line: u32,
    pub done: bool,
}

pub fn phase_index(p: Phase) -> usize {
    match p {
        Phase::Parent => 0,
        Phase::Launch => 1,
        Phase::Agg => 2,
        Phase::Disagg => 3,
        Phase::Child => 4,
    }
}

impl<'p> Thread<'p> {
    pub fn new(kernel: &'p KernelDef, args: &[Value], env: Env, phase: Phase) -> Result<Self, Trap> {
        let mut t = Thread {
            frames: Vec::new(),
            locals: Vec::with_capacity(16),
            fn_base: 0,
            env,
            phase,
            seg_cost: 0,
            seg_phase: [0; 5],
            instructions: 0,
            launches: Vec::new(),
            unpublished: Vec::new(),
            kernel: &kernel.name,
            line: kernel.span.line,
            done: false,
        };
        t.bind_params(kernel, args)?;
        t.frames.push(Frame {
            stmts: &kernel.body,
            pc: 0,
            locals_mark: t.locals.len(),
            kind: FrameKind::Seq,
        });
        Ok(t)
    }

    fn bind_params(&mut self, k: &'p KernelDef, args: &[Value]) -> Result<(), Trap> {
        if args.len() != k.params.len() {
            return Err(self.trap(format!("`{}` expects {} argument(s), got {}", k.name, k.params.len(), args.len())));
        }
        for (p, a) in k.params.iter().zip(args) {
            let val = a.coerce(p.ty).map_err(|e| self.value_trap(e))?;
            self.locals.push(Local {
                name: &p.name,
                ty: p.ty,
                val,
            });
        }
        Ok(())
    }

    pub fn charge(&mut self, phase: Phase, amount: u64) {
        self.seg_cost += amount;
        self.seg_phase[phase_index(phase)] += amount;
    }

    fn trap(&self, message: impl Into<String>) -> Trap {
        Trap {
            kernel: self.kernel.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn value_trap(&self, e: ValueError) -> Trap {
        self.trap(match e {
            ValueError::DivisionByZero => "division by zero".to_string(),
            ValueError::NotANumber(m) | ValueError::Pointer(m) => m.to_string(),
        })
    }

    fn mem_trap(&self, e: MemError) -> Trap {
        self.trap(e.to_string())
    }

    fn local(&self, name: &str) -> Option<&Local<'p>> {
        self.locals[self.fn_base..].iter().rev().find(|l| l.name == name)
    }

    fn local_mut(&mut self, name: &str) -> Option<&mut Local<'p>> {
        self.locals[self.fn_base..].iter_mut().rev().find(|l| l.name == name)
    }

    fn buffer(&self, name: &str, ctx: &Ctx<'_, 'p>) -> Result<BufId, Trap> {
        if let Some(l) = self.local(name) {
            return match l.val {
                Value::Buf(id) => Ok(id),
                Value::Null => Err(self.mem_trap(MemError::BadHandle)),
                _ => Err(self.trap(format!("`{name}` is not a buffer"))),
            };
        }
        ctx.mem.lookup(name).ok_or_else(|| self.trap(format!("unknown buffer `{name}`")))
    }

    pub fn eval(&self, e: &Expr, ctx: &Ctx<'_, 'p>) -> Result<Value, Trap> {
        Ok(match e {
            Expr::Int(v) => Value::I32(*v),
            Expr::Long(v) => Value::I64(*v),
            Expr::Float(v) => Value::F32(*v),
            Expr::Var(n) => {
                if let Some(l) = self.local(n) {
                    l.val
                } else if let Some(v) = ctx.defines.get(n.as_str()) {
                    *v
                } else if let Some(id) = ctx.mem.lookup(n) {
                    Value::Buf(id)
                } else {
                    return Err(self.trap(format!("undefined identifier `{n}`")));
                }
            }
            Expr::Index { buf, index } => {
                let id = self.buffer(buf, ctx)?;
                let i = self.eval(index, ctx)?.as_i64().map_err(|e| self.value_trap(e))?;
                ctx.mem.load(id, i, self.env.block_uid).map_err(|e| self.mem_trap(e))?
            }
            Expr::Binary { op: BinOp::And, lhs, rhs } => {
                let l = self.eval(lhs, ctx)?.truthy().map_err(|e| self.value_trap(e))?;
                Value::I32((l && self.eval(rhs, ctx)?.truthy().map_err(|e| self.value_trap(e))?) as i32)
            }
            Expr::Binary { op: BinOp::Or, lhs, rhs } => {
                let l = self.eval(lhs, ctx)?.truthy().map_err(|e| self.value_trap(e))?;
                Value::I32((l || self.eval(rhs, ctx)?.truthy().map_err(|e| self.value_trap(e))?) as i32)
            }
            Expr::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs, ctx)?;
                let r = self.eval(rhs, ctx)?;
                value::binary(*op, l, r).map_err(|e| self.value_trap(e))?
            }
            Expr::Unary { op, operand } => value::unary(*op, self.eval(operand, ctx)?).map_err(|e| self.value_trap(e))?,
            Expr::Cast { ty, operand } => self.eval(operand, ctx)?.cast(*ty).map_err(|e| self.value_trap(e))?,
            Expr::Ceil(a) => match self.eval(a, ctx)? {
                Value::F32(v) => Value::F32(v.ceil()),
                other => other,
            },
            Expr::Min(a, b) | Expr::Max(a, b) => {
                let l = self.eval(a, ctx)?;
                let r = self.eval(b, ctx)?;
                value::min_max(matches!(e, Expr::Max(..)), l, r).map_err(|e| self.value_trap(e))?
            }
            Expr::Builtin(b, d) => {
                let i = d.index();
                Value::I32(match b {
                    BuiltinVar::BlockIdx => self.env.block_idx[i],
                    BuiltinVar::ThreadIdx => self.env.thread_idx[i],
                    BuiltinVar::GridDim => self.env.grid_dim[i],
                    BuiltinVar::BlockDim => self.env.block_dim[i],
                })
            }
            Expr::Dim3(_) => return Err(self.trap("dim3 outside a launch configuration")),
            Expr::Ballot(_) | Expr::Shfl(..) => return Err(self.trap("warp-level primitives are not executable")),
        })
    }

    fn eval_dims(&self, e: &Expr, ctx: &Ctx<'_, 'p>) -> Result<[u32; 3], Trap> {
        let comps: Vec<&Expr> = match e {
            Expr::Dim3(cs) => cs.iter().collect(),
            other => vec![other],
        };
        let mut out = [1u32; 3];
        for (i, c) in comps.into_iter().enumerate() {
            let v = self.eval(c, ctx)?.as_i64().map_err(|e| self.value_trap(e))?;
            if !(0..=u32::MAX as i64).contains(&v) {
                return Err(self.trap(format!("launch dimension {v} out of range")));
            }
            out[i] = v as u32;
        }
        Ok(out)
    }

    fn assign_local(&mut self, name: &str, v: Value) -> Result<(), Trap> {
        let trap = self.trap(format!("assignment to undeclared `{name}`"));
        let l = self.local_mut(name).ok_or(trap)?;
        match v.coerce(l.ty) {
            Ok(v) => {
                l.val = v;
                Ok(())
            }
            Err(e) => Err(self.value_trap(e)),
        }
    }

    fn push_local(&mut self, name: &'p str, ty: Type, v: Value) -> Result<(), Trap> {
        let val = v.coerce(ty).map_err(|e| self.value_trap(e))?;
        self.locals.push(Local { name, ty, val });
        Ok(())
    }

    fn push_frame(&mut self, stmts: &'p [Stmt], kind: FrameKind<'p>) {
        self.frames.push(Frame {
            stmts,
            pc: 0,
            locals_mark: self.locals.len(),
            kind,
        });
    }

    /// Unwind a finished frame. Loops may re-enter instead of popping.
    fn finish_frame(&mut self, ctx: &Ctx<'_, 'p>) -> Result<(), Trap> {
        let f = self.frames.last_mut().expect("frame");
        let mark = f.locals_mark;
        // Regions are cost markers only; their declarations stay visible.
        if !matches!(f.kind, FrameKind::Region { .. }) {
            self.locals.truncate(mark);
        }
        let top = self.frames.len() - 1;
        match self.frames[top].kind {
            FrameKind::Seq => {
                self.frames.pop();
            }
            FrameKind::Region { prev } => {
                self.phase = prev;
                self.frames.pop();
            }
            FrameKind::Call { fn_base } => {
                self.frames.pop();
                self.fn_base = fn_base;
            }
            FrameKind::While { cond } => {
                self.charge(self.phase, ctx.costs.instruction_cost);
                self.instructions += 1;
                if self.eval(cond, ctx)?.truthy().map_err(|e| self.value_trap(e))? {
                    self.frames[top].pc = 0;
                } else {
                    self.frames.pop();
                }
            }
            FrameKind::For { cond, step, outer_mark } => {
                self.charge(self.phase, ctx.costs.instruction_cost);
                self.instructions += 1;
                if let StmtKind::Assign {
                    target: LValue::Var(v),
                    value,
                } = &step.kind
                {
                    let nv = self.eval(value, ctx)?;
                    self.assign_local(v, nv)?;
                }
                if self.eval(cond, ctx)?.truthy().map_err(|e| self.value_trap(e))? {
                    self.frames[top].pc = 0;
                } else {
                    self.frames.pop();
                    self.locals.truncate(outer_mark);
                }
            }
        }
        Ok(())
    }

    /// Execute one statement (or one frame transition).
    pub fn step(&mut self, ctx: &mut Ctx<'_, 'p>) -> Result<Option<Yield>, Trap> {
        let Some(f) = self.frames.last_mut() else {
            self.done = true;
            return Ok(Some(Yield::Done));
        };
        if f.pc >= f.stmts.len() {
            self.finish_frame(ctx)?;
            if self.frames.is_empty() {
                self.done = true;
                return Ok(Some(Yield::Done));
            }
            return Ok(None);
        }
        let s: &'p Stmt = &f.stmts[f.pc];
        f.pc += 1;
        self.line = s.span.line;
        if !matches!(s.kind, StmtKind::Block(_) | StmtKind::Region { .. }) {
            self.charge(self.phase, ctx.costs.instruction_cost);
            self.instructions += 1;
        }
        match &s.kind {
            StmtKind::Decl { ty, name, init } => {
                let v = match init {
                    Some(e) => self.eval(e, ctx)?,
                    None => Value::zero(*ty),
                };
                self.push_local(name, *ty, v)?;
            }
            StmtKind::Shared { elem, name, extent } => {
                let id = match ctx.shared.get(name.as_str()) {
                    Some(id) => *id,
                    None => {
                        let id = ctx.mem.alloc_shared(name, *elem, *extent as usize);
                        ctx.shared.insert(name, id);
                        id
                    }
                };
                self.push_local(name, Type::Ptr(*elem), Value::Buf(id))?;
            }
            StmtKind::Assign { target, value } => {
                let v = self.eval(value, ctx)?;
                match target {
                    LValue::Var(n) => self.assign_local(n, v)?,
                    LValue::Index { buf, index } => {
                        let id = self.buffer(buf, ctx)?;
                        let i = self.eval(index, ctx)?.as_i64().map_err(|e| self.value_trap(e))?;
                        if ctx.mem.store(id, i, v, self.env.block_uid).map_err(|e| self.mem_trap(e))? {
                            self.unpublished.push((id, i as u32));
                        }
                    }
                }
            }
            StmtKind::Atomic {
                dest,
                op,
                buf,
                index,
                operands,
            } => {
                let id = self.buffer(buf, ctx)?;
                let i = self.eval(index, ctx)?.as_i64().map_err(|e| self.value_trap(e))?;
                let mut ops = [Value::Null; 2];
                for (k, o) in operands.iter().enumerate() {
                    ops[k] = self.eval(o, ctx)?;
                }
                let old = ctx
                    .mem
                    .atomic(id, i, *op, &ops[..operands.len()])
                    .map_err(|e| self.mem_trap(e))?;
                if let Some(d) = dest {
                    match d.declare {
                        Some(ty) => self.push_local(&d.name, ty, old)?,
                        None => self.assign_local(&d.name, old)?,
                    }
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                if self.eval(cond, ctx)?.truthy().map_err(|e| self.value_trap(e))? {
                    self.push_frame(then_body, FrameKind::Seq);
                } else if let Some(e) = else_body {
                    self.push_frame(e, FrameKind::Seq);
                }
            }
            StmtKind::While { cond, body } => {
                if self.eval(cond, ctx)?.truthy().map_err(|e| self.value_trap(e))? {
                    self.push_frame(body, FrameKind::While { cond });
                }
            }
            StmtKind::For {
                var,
                init,
                cond,
                step,
                body,
            } => {
                let outer_mark = self.locals.len();
                let v = self.eval(init, ctx)?;
                self.push_local(var, Type::INT, v)?;
                if self.eval(cond, ctx)?.truthy().map_err(|e| self.value_trap(e))? {
                    self.push_frame(body, FrameKind::For { cond, step, outer_mark });
                } else {
                    self.locals.truncate(outer_mark);
                }
            }
            StmtKind::Block(body) => self.push_frame(body, FrameKind::Seq),
            StmtKind::Region { phase, body } => {
                let prev = self.phase;
                self.phase = *phase;
                self.push_frame(body, FrameKind::Region { prev });
            }
            StmtKind::Barrier => return Ok(Some(Yield::Barrier(s as *const Stmt as usize))),
            StmtKind::Fence => {
                ctx.mem.publish(&self.unpublished, self.env.block_uid);
                self.unpublished.clear();
            }
            StmtKind::Sync => return Ok(Some(Yield::Sync)),
            StmtKind::Return => {
                loop {
                    match self.frames.last().map(|f| &f.kind) {
                        None => {
                            self.done = true;
                            return Ok(Some(Yield::Done));
                        }
                        Some(FrameKind::Call { .. }) => {
                            let f = self.frames.last_mut().expect("frame");
                            f.pc = f.stmts.len();
                            self.finish_frame(ctx)?;
                            break;
                        }
                        Some(FrameKind::Region { prev }) => {
                            self.phase = *prev;
                            self.frames.pop();
                        }
                        Some(FrameKind::For { outer_mark, .. }) => {
                            let m = *outer_mark;
                            self.frames.pop();
                            self.locals.truncate(m);
                        }
                        Some(_) => {
                            let m = self.frames.pop().expect("frame").locals_mark;
                            self.locals.truncate(m);
                        }
                    }
                }
                if self.frames.is_empty() {
                    self.done = true;
                    return Ok(Some(Yield::Done));
                }
            }
            StmtKind::Continue => loop {
                match self.frames.last().map(|f| &f.kind) {
                    Some(FrameKind::While { .. } | FrameKind::For { .. }) => {
                        let f = self.frames.last_mut().expect("frame");
                        f.pc = f.stmts.len();
                        break;
                    }
                    Some(FrameKind::Region { prev }) => {
                        self.phase = *prev;
                        self.frames.pop();
                    }
                    Some(FrameKind::Seq) => {
                        let m = self.frames.pop().expect("frame").locals_mark;
                        self.locals.truncate(m);
                    }
                    _ => return Err(self.trap("continue outside a loop")),
                }
            },
            StmtKind::Launch(l) => {
                let grid = self.eval_dims(&l.grid, ctx)?;
                let block = self.eval_dims(&l.block, ctx)?;
                let callee = ctx
                    .prog
                    .kernel(&l.callee)
                    .ok_or_else(|| self.trap(format!("unknown kernel `{}`", l.callee)))?;
                let mut args = Vec::with_capacity(l.args.len());
                for (a, p) in l.args.iter().zip(&callee.params) {
                    args.push(self.eval(a, ctx)?.coerce(p.ty).map_err(|e| self.value_trap(e))?);
                }
                // The issuing statement itself was charged to the current
                // phase above; move it to the launch phase with the latency.
                self.seg_phase[phase_index(self.phase)] -= ctx.costs.instruction_cost;
                self.seg_cost -= ctx.costs.instruction_cost;
                let lat = if self.env.block_uid == 0 { 0 } else { ctx.costs.launch_latency };
                self.charge(Phase::Launch, ctx.costs.instruction_cost + lat);
                let site = format!("{}:{}", self.kernel, s.span.line);
                let probe = match ctx.probes.iter().find(|(k, _)| *k == site) {
                    Some((_, e)) => Some(self.eval(e, ctx)?),
                    None => None,
                };
                self.launches.push(LaunchReq {
                    callee: l.callee.clone(),
                    grid,
                    block,
                    args,
                    at: self.seg_cost,
                    site,
                    probe,
                });
            }
            StmtKind::Call { callee, args } => {
                let k = ctx
                    .prog
                    .kernel(callee)
                    .ok_or_else(|| self.trap(format!("unknown function `{callee}`")))?;
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, ctx)?);
                }
                let saved = self.fn_base;
                let base = self.locals.len();
                self.fn_base = base;
                self.bind_params(k, &vals)?;
                self.frames.push(Frame {
                    stmts: &k.body,
                    pc: 0,
                    locals_mark: base,
                    kind: FrameKind::Call { fn_base: saved },
                });
            }
        }
        Ok(None)
    }

    /// Read a local by name (tests and debugging).
    pub fn local_value(&self, name: &str) -> Option<Value> {
        self.local(name).map(|l| l.val)
    }
}
