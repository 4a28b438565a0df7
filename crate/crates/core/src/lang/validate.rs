use std::collections::{HashMap, HashSet};
use std::fmt;

use super::ast::*;
use super::visit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    DuplicateDefinition,
    UndefinedCallee,
    UndefinedIdentifier,
    ArityMismatch,
    WrongCalleeKind,
    RecursiveLaunch,
    DivisionByZero,
    MisplacedDim3,
    BuiltinOutsideKernel,
    MultiDimLaunch,
    MisplacedStatement,
    Transform,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::DuplicateDefinition => "duplicate definition",
            Category::UndefinedCallee => "undefined callee",
            Category::UndefinedIdentifier => "undefined identifier",
            Category::ArityMismatch => "arity mismatch",
            Category::WrongCalleeKind => "wrong callee kind",
            Category::RecursiveLaunch => "recursive launch rejected",
            Category::DivisionByZero => "division by zero",
            Category::MisplacedDim3 => "misplaced dim3",
            Category::BuiltinOutsideKernel => "builtin outside kernel",
            Category::MultiDimLaunch => "multi-dimensional launch",
            Category::MisplacedStatement => "misplaced statement",
            Category::Transform => "transform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub span: Span,
    pub severity: Severity,
    pub category: Category,
    pub message: String,
}

impl Diagnostic {
    pub fn new(span: Span, severity: Severity, category: Category, message: impl Into<String>) -> Self {
        Diagnostic {
            span,
            severity,
            category,
            message: message.into(),
        }
    }

    pub fn error(span: Span, category: Category, message: impl Into<String>) -> Self {
        Self::new(span, Severity::Error, category, message)
    }

    pub fn info(span: Span, category: Category, message: impl Into<String>) -> Self {
        Self::new(span, Severity::Info, category, message)
    }

    /// `file:line:col: severity: message`
    pub fn render(&self, file: &str) -> String {
        format!(
            "{file}:{}:{}: {}: {}: {}",
            self.span.line,
            self.span.col,
            self.severity,
            self.category.as_str(),
            self.message
        )
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Check every program invariant. Returns an empty list for a clean program.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut v = Validator {
        prog: p,
        diags: Vec::new(),
    };
    v.run();
    v.diags
}

struct Validator<'a> {
    prog: &'a Program,
    diags: Vec<Diagnostic>,
}

impl<'a> Validator<'a> {
    fn push(&mut self, d: Diagnostic) {
        self.diags.push(d);
    }

    fn run(&mut self) {
        let p = self.prog;
        let mut seen = HashSet::new();
        for k in &p.kernels {
            if !seen.insert(k.name.as_str()) {
                self.push(Diagnostic::error(
                    k.span,
                    Category::DuplicateDefinition,
                    format!("kernel `{}` defined more than once", k.name),
                ));
            }
        }
        let mut gseen = HashSet::new();
        for g in &p.globals {
            if !gseen.insert(g.name.as_str()) {
                self.push(Diagnostic::error(
                    g.span,
                    Category::DuplicateDefinition,
                    format!("global `{}` declared more than once", g.name),
                ));
            }
        }
        let mut dseen = HashSet::new();
        for d in &p.defines {
            if !dseen.insert(d.name.as_str()) {
                self.push(Diagnostic::error(
                    d.span,
                    Category::DuplicateDefinition,
                    format!("`{}` defined more than once", d.name),
                ));
            }
        }
        for g in &p.glue {
            for name in [&g.parent, &g.child] {
                if p.kernel(name).is_none() {
                    self.push(Diagnostic::error(
                        g.span,
                        Category::UndefinedCallee,
                        format!("glue references undefined kernel `{name}`"),
                    ));
                }
            }
            if p.kernel(&g.agg_kernel()).is_none() {
                self.push(Diagnostic::error(
                    g.span,
                    Category::UndefinedCallee,
                    format!("glue references undefined kernel `{}`", g.agg_kernel()),
                ));
            }
        }
        for k in &p.kernels {
            self.kernel(k);
        }
        self.cycles();
    }

    fn kernel(&mut self, k: &'a KernelDef) {
        let mut scopes: Vec<HashSet<&str>> = vec![k.params.iter().map(|p| p.name.as_str()).collect()];
        self.body(k, &k.body, &mut scopes, 0);
        if k.kind != KernelKind::Entry && visit::uses_builtins(&k.body) {
            self.push(Diagnostic::error(
                k.span,
                Category::BuiltinOutsideKernel,
                format!(
                    "{} function `{}` reads builtin index variables",
                    k.kind.keyword(),
                    k.name
                ),
            ));
        }
    }

    fn resolves(&self, scopes: &[HashSet<&str>], name: &str) -> bool {
        scopes.iter().any(|s| s.contains(name)) || self.prog.define(name).is_some() || self.prog.global(name).is_some()
    }

    fn body(&mut self, k: &'a KernelDef, body: &'a [Stmt], scopes: &mut Vec<HashSet<&'a str>>, loops: usize) {
        for s in body {
            self.stmt(k, s, scopes, loops);
        }
    }

    fn scoped(&mut self, k: &'a KernelDef, body: &'a [Stmt], scopes: &mut Vec<HashSet<&'a str>>, loops: usize) {
        scopes.push(HashSet::new());
        self.body(k, body, scopes, loops);
        scopes.pop();
    }

    fn expr(&mut self, s: &Stmt, e: &Expr, scopes: &[HashSet<&str>], launch_config: bool) {
        let mut undefined = Vec::new();
        let mut zero_div = false;
        let mut bad_dim3 = false;
        let top_is_dim3 = launch_config && matches!(e, Expr::Dim3(_));
        visit::walk_expr(e, &mut |x| match x {
            Expr::Var(n) | Expr::Index { buf: n, .. } => {
                if !self.resolves(scopes, n) && !undefined.contains(n) {
                    undefined.push(n.clone());
                }
            }
            Expr::Binary {
                op: BinOp::Div | BinOp::Rem,
                rhs,
                ..
            } if matches!(**rhs, Expr::Int(0) | Expr::Long(0)) => zero_div = true,
            Expr::Dim3(_) if !std::ptr::eq(x, e) || !top_is_dim3 => bad_dim3 = true,
            _ => {}
        });
        for n in undefined {
            self.push(Diagnostic::error(
                s.span,
                Category::UndefinedIdentifier,
                format!("`{n}` is not defined"),
            ));
        }
        if zero_div {
            self.push(Diagnostic::error(s.span, Category::DivisionByZero, "division by literal zero"));
        }
        if bad_dim3 {
            self.push(Diagnostic::error(
                s.span,
                Category::MisplacedDim3,
                "dim3 may only appear as a launch configuration",
            ));
        }
    }

    fn check_name(&mut self, s: &Stmt, name: &str, scopes: &[HashSet<&str>]) {
        if !self.resolves(scopes, name) {
            self.push(Diagnostic::error(
                s.span,
                Category::UndefinedIdentifier,
                format!("`{name}` is not defined"),
            ));
        }
    }

    fn misplaced(&mut self, s: &Stmt, what: &str, k: &KernelDef) {
        self.push(Diagnostic::error(
            s.span,
            Category::MisplacedStatement,
            format!("`{what}` is not allowed in {} `{}`", k.kind.keyword(), k.name),
        ));
    }

    fn stmt(&mut self, k: &'a KernelDef, s: &'a Stmt, scopes: &mut Vec<HashSet<&'a str>>, loops: usize) {
        let host = k.kind == KernelKind::Host;
        match &s.kind {
            StmtKind::Decl { name, init, .. } => {
                if let Some(e) = init {
                    self.expr(s, e, scopes, false);
                }
                scopes.last_mut().unwrap().insert(name);
            }
            StmtKind::Shared { name, .. } => {
                if k.kind != KernelKind::Entry {
                    self.misplaced(s, "shared", k);
                }
                scopes.last_mut().unwrap().insert(name);
            }
            StmtKind::Assign { target, value } => {
                match target {
                    LValue::Var(n) => self.check_name(s, n, scopes),
                    LValue::Index { buf, index } => {
                        self.check_name(s, buf, scopes);
                        self.expr(s, index, scopes, false);
                    }
                }
                self.expr(s, value, scopes, false);
            }
            StmtKind::Atomic {
                dest,
                buf,
                index,
                operands,
                ..
            } => {
                self.check_name(s, buf, scopes);
                self.expr(s, index, scopes, false);
                for o in operands {
                    self.expr(s, o, scopes, false);
                }
                if let Some(d) = dest {
                    if d.declare.is_some() {
                        scopes.last_mut().unwrap().insert(&d.name);
                    } else {
                        self.check_name(s, &d.name, scopes);
                    }
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                self.expr(s, cond, scopes, false);
                self.scoped(k, then_body, scopes, loops);
                if let Some(e) = else_body {
                    self.scoped(k, e, scopes, loops);
                }
            }
            StmtKind::While { cond, body } => {
                self.expr(s, cond, scopes, false);
                self.scoped(k, body, scopes, loops + 1);
            }
            StmtKind::For {
                var,
                init,
                cond,
                step,
                body,
            } => {
                self.expr(s, init, scopes, false);
                scopes.push(HashSet::from([var.as_str()]));
                self.expr(s, cond, scopes, false);
                self.stmt(k, step, scopes, loops + 1);
                self.scoped(k, body, scopes, loops + 1);
                scopes.pop();
            }
            StmtKind::Block(body) => self.scoped(k, body, scopes, loops),
            StmtKind::Region { body, .. } => self.body(k, body, scopes, loops),
            StmtKind::Barrier | StmtKind::Fence => {
                if host {
                    self.misplaced(s, if matches!(s.kind, StmtKind::Barrier) { "barrier" } else { "fence" }, k);
                }
            }
            StmtKind::Sync => {
                if !host {
                    self.misplaced(s, "sync", k);
                }
            }
            StmtKind::Return => {}
            StmtKind::Continue => {
                if loops == 0 {
                    self.misplaced(s, "continue outside a loop", k);
                }
            }
            StmtKind::Launch(l) => {
                self.expr(s, &l.grid, scopes, true);
                self.expr(s, &l.block, scopes, true);
                for a in &l.args {
                    self.expr(s, a, scopes, false);
                }
                match self.prog.kernel(&l.callee) {
                    None => self.push(Diagnostic::error(
                        s.span,
                        Category::UndefinedCallee,
                        format!("launch of undefined kernel `{}`", l.callee),
                    )),
                    Some(c) => {
                        if c.kind != KernelKind::Entry {
                            self.push(Diagnostic::error(
                                s.span,
                                Category::WrongCalleeKind,
                                format!("`{}` is not a kernel and cannot be launched", c.name),
                            ));
                        }
                        if c.params.len() != l.args.len() {
                            self.push(Diagnostic::error(
                                s.span,
                                Category::ArityMismatch,
                                format!(
                                    "`{}` takes {} argument(s), launched with {}",
                                    c.name,
                                    c.params.len(),
                                    l.args.len()
                                ),
                            ));
                        }
                        if is_multi_dim_config(&l.grid) || is_multi_dim_config(&l.block) {
                            self.push(Diagnostic::info(
                                s.span,
                                Category::MultiDimLaunch,
                                format!("launch of `{}` uses a multi-dimensional configuration", c.name),
                            ));
                        }
                    }
                }
            }
            StmtKind::Call { callee, args } => {
                for a in args {
                    self.expr(s, a, scopes, false);
                }
                match self.prog.kernel(callee) {
                    None => self.push(Diagnostic::error(
                        s.span,
                        Category::UndefinedCallee,
                        format!("call of undefined function `{callee}`"),
                    )),
                    Some(c) => {
                        if c.kind != KernelKind::Device {
                            self.push(Diagnostic::error(
                                s.span,
                                Category::WrongCalleeKind,
                                format!("`{callee}` is not a device function"),
                            ));
                        }
                        if c.params.len() != args.len() {
                            self.push(Diagnostic::error(
                                s.span,
                                Category::ArityMismatch,
                                format!("`{callee}` takes {} argument(s), called with {}", c.params.len(), args.len()),
                            ));
                        }
                    }
                }
            }
        }
    }

    /// Launch/call graph cycles, including self-launch.
    fn cycles(&mut self) {
        let p = self.prog;
        let mut edges: HashMap<&str, Vec<(&str, Span)>> = HashMap::new();
        for k in &p.kernels {
            let e = edges.entry(k.name.as_str()).or_default();
            visit::walk_stmts(&k.body, &mut |s| match &s.kind {
                StmtKind::Launch(l) => e.push((l.callee.as_str(), s.span)),
                StmtKind::Call { callee, .. } => e.push((callee.as_str(), s.span)),
                _ => {}
            });
        }
        // Color-based DFS; report the edge that closes each cycle once.
        let mut color: HashMap<&str, u8> = HashMap::new();
        let mut reported = Vec::new();
        fn dfs<'b>(
            n: &'b str,
            edges: &HashMap<&'b str, Vec<(&'b str, Span)>>,
            color: &mut HashMap<&'b str, u8>,
            out: &mut Vec<(String, String, Span)>,
        ) {
            color.insert(n, 1);
            for (m, sp) in edges.get(n).into_iter().flatten() {
                match color.get(m).copied().unwrap_or(0) {
                    0 if edges.contains_key(m) => dfs(m, edges, color, out),
                    1 => out.push((n.to_string(), m.to_string(), *sp)),
                    _ => {}
                }
            }
            color.insert(n, 2);
        }
        for k in &p.kernels {
            if color.get(k.name.as_str()).copied().unwrap_or(0) == 0 {
                dfs(&k.name, &edges, &mut color, &mut reported);
            }
        }
        for (from, to, span) in reported {
            let msg = if from == to {
                format!("`{from}` launches itself")
            } else {
                format!("launch cycle through `{from}` -> `{to}`")
            };
            self.push(Diagnostic::error(span, Category::RecursiveLaunch, msg));
        }
    }
}

/// True for a `dim3` configuration with more than one component, or any
/// y/z builtin in the configuration.
pub fn is_multi_dim_config(e: &Expr) -> bool {
    if let Expr::Dim3(cs) = e {
        if cs.len() > 1 {
            return true;
        }
    }
    let mut yz = false;
    visit::walk_expr(e, &mut |x| {
        if matches!(x, Expr::Builtin(_, Dim::Y | Dim::Z)) {
            yz = true;
        }
    });
    yz
}
