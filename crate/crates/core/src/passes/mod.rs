//! Source-to-source transformations. Each pass takes a program and returns a
//! rewritten copy plus one manifest entry per launch site it considered.

pub mod aggregate;
pub mod coarsen;
pub mod threshold;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::lang::visit::{self, StmtPath};
use crate::lang::*;

pub use aggregate::{AggConfig, AggGranularity};
pub use coarsen::CoarsenConfig;
pub use threshold::{Threshold, ThresholdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PassKind {
    Threshold,
    Coarsen,
    Aggregate,
}

impl PassKind {
    pub const CANONICAL: [PassKind; 3] = [PassKind::Threshold, PassKind::Coarsen, PassKind::Aggregate];

    pub fn name(self) -> &'static str {
        match self {
            PassKind::Threshold => "threshold",
            PassKind::Coarsen => "coarsen",
            PassKind::Aggregate => "aggregate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "threshold" | "t" | "T" => Some(PassKind::Threshold),
            "coarsen" | "c" | "C" => Some(PassKind::Coarsen),
            "aggregate" | "a" | "A" => Some(PassKind::Aggregate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Transformed,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// `kernel:line` of the launch statement.
    pub site: String,
    pub pass: PassKind,
    pub action: Action,
}

impl ManifestEntry {
    pub fn new(site: String, pass: PassKind, action: Action) -> Self {
        ManifestEntry { site, pass, action }
    }

    pub fn skipped(site: String, pass: PassKind, reason: impl Into<String>) -> Self {
        Self::new(site, pass, Action::Skipped(reason.into()))
    }
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let action = match &self.action {
            Action::Transformed => "transformed".to_string(),
            Action::Skipped(r) => format!("skipped:{r}"),
        };
        write!(f, "site={} pass={} action={}", self.site, self.pass.name(), action)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PassError {
    #[error("{0}")]
    Config(String),
    #[error("cannot transform `{kernel}`: {reason}")]
    Refused { kernel: String, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct PassOutput {
    pub program: Program,
    pub manifest: Vec<ManifestEntry>,
    pub diagnostics: Vec<Diagnostic>,
}

pub(crate) fn site_key(owner: &str, span: Span) -> String {
    format!("{owner}:{}", span.line)
}

/// Every identifier a kernel binds: parameters and all local declarations.
pub(crate) fn bound_names(k: &KernelDef) -> HashSet<String> {
    let mut names: HashSet<String> = k.params.iter().map(|p| p.name.clone()).collect();
    visit::walk_stmts(&k.body, &mut |s| match &s.kind {
        StmtKind::Shared { name, .. } => {
            names.insert(name.clone());
        }
        StmtKind::Atomic {
            dest: Some(AtomicDest {
                name, declare: Some(_), ..
            }),
            ..
        } => {
            names.insert(name.clone());
        }
        _ => {
            if let Some(n) = visit::written_var(s) {
                names.insert(n.to_string());
            }
        }
    });
    names
}

/// `base`, or `base_1`, `base_2`, ... avoiding `taken`. The result is added
/// to `taken`.
pub(crate) fn fresh(base: &str, taken: &mut HashSet<String>) -> String {
    let mut name = base.to_string();
    let mut i = 1;
    while taken.contains(&name) {
        name = format!("{base}_{i}");
        i += 1;
    }
    taken.insert(name.clone());
    name
}

pub(crate) fn decl(ty: Type, name: &str, init: Expr) -> Stmt {
    Stmt::new(StmtKind::Decl {
        ty,
        name: name.to_string(),
        init: Some(init),
    })
}

pub(crate) fn assign(name: &str, value: Expr) -> Stmt {
    Stmt::new(StmtKind::Assign {
        target: LValue::Var(name.to_string()),
        value,
    })
}

pub(crate) fn store(buf: &str, index: Expr, value: Expr) -> Stmt {
    Stmt::new(StmtKind::Assign {
        target: LValue::Index {
            buf: buf.to_string(),
            index,
        },
        value,
    })
}

pub(crate) fn if_then(cond: Expr, then_body: Vec<Stmt>) -> Stmt {
    Stmt::new(StmtKind::If {
        cond,
        then_body,
        else_body: None,
    })
}

pub(crate) fn launch(callee: &str, grid: Expr, block: Expr, args: Vec<Expr>, span: Span) -> Stmt {
    Stmt::at(
        StmtKind::Launch(LaunchStmt {
            callee: callee.to_string(),
            grid,
            block,
            args,
        }),
        span,
    )
}

/// `for (int v = init; v < bound; v = v + 1) { body }`
pub(crate) fn counted_loop(var: &str, init: Expr, cond: Expr, body: Vec<Stmt>) -> Stmt {
    Stmt::new(StmtKind::For {
        var: var.to_string(),
        init,
        cond,
        step: Box::new(assign(var, Expr::bin(BinOp::Add, Expr::var(var), Expr::Int(1)))),
        body,
    })
}

pub(crate) fn replace_at(body: &mut Vec<Stmt>, path: &StmtPath, with: Stmt) {
    if let Some(s) = visit::stmt_at_mut(body, path) {
        *s = with;
    }
}

/// Keys of launch sites inside host functions.
pub(crate) fn host_sites(prog: &Program) -> Vec<String> {
    let mut out = Vec::new();
    for k in prog.kernels.iter().filter(|k| k.kind == KernelKind::Host) {
        visit::walk_stmts(&k.body, &mut |s| {
            if matches!(s.kind, StmtKind::Launch(_)) {
                out.push(site_key(&k.name, s.span));
            }
        });
    }
    out
}

/// Apply the builtin substitutions that move a kernel body into a context
/// where block/grid indices are ordinary variables.
pub(crate) fn substitute(body: &mut [Stmt], pairs: &[(BuiltinVar, &str)]) {
    let subst: Vec<(BuiltinVar, Expr)> = pairs.iter().map(|(b, n)| (*b, Expr::var(*n))).collect();
    visit::substitute_builtins(body, &subst);
}

/// Informational diagnostic about a site a pass left alone.
pub(crate) fn info(span: Span, message: impl Into<String>) -> Diagnostic {
    Diagnostic::info(span, Category::Transform, message)
}

/// True if `k` calls (transitively) a device function that reads builtins.
/// Substituting builtins in `k` alone would then not move the whole body.
pub(crate) fn helpers_read_builtins(prog: &Program, k: &KernelDef) -> bool {
    let mut seen = HashSet::new();
    let mut stack = vec![k.name.clone()];
    while let Some(name) = stack.pop() {
        let Some(cur) = prog.kernel(&name) else { continue };
        visit::walk_stmts(&cur.body, &mut |s| {
            if let StmtKind::Call { callee, .. } = &s.kind {
                if seen.insert(callee.clone()) {
                    stack.push(callee.clone());
                }
            }
        });
    }
    seen.iter()
        .filter_map(|n| prog.kernel(n))
        .any(|f| visit::uses_builtins(&f.body))
}
