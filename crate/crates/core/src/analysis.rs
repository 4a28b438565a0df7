//! Per-launch-site analyses: whether the child can be serialized, and which
//! expression in the grid configuration is the desired number of child
//! threads.

use std::fmt;

use crate::lang::validate::is_multi_dim_config;
use crate::lang::visit::{self, StmtPath};
use crate::lang::*;

/// Which ceiling-division idiom produced the grid dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// `(N + b - 1) / b`
    AddRoundUp,
    /// `(N - 1) / b + 1`
    MinusOnePlusOne,
    /// `N / b + (N % b != 0)`
    RemainderCorrection,
    /// `ceil(N / (float)b)`
    FloatCeil,
    /// `ceil((float)N / b)`
    FloatCeilNumerator,
    /// `dim3(...)` of the above, one per component
    Dim3,
}

impl Pattern {
    pub fn name(self) -> &'static str {
        match self {
            Pattern::AddRoundUp => "(a) add-round-up",
            Pattern::MinusOnePlusOne => "(b) minus-one-plus-one",
            Pattern::RemainderCorrection => "(c) remainder-correction",
            Pattern::FloatCeil => "(d) float-ceil",
            Pattern::FloatCeilNumerator => "(e) float-ceil-numerator",
            Pattern::Dim3 => "(f) dim3",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildCount {
    /// The extracted thread count, valid at the launch site.
    pub expr: Expr,
    pub pattern: Pattern,
    /// Whether `expr` occurs verbatim in the written grid expression (so it
    /// can be replaced by `_threads` there).
    pub in_grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FallbackPolicy {
    /// Leave sites whose extraction fails untransformed.
    #[default]
    Skip,
    /// Compare `gDim * bDim` against the threshold instead.
    Product,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchSite {
    pub owner: String,
    pub owner_kind: KernelKind,
    pub path: StmtPath,
    pub span: Span,
    pub launch: LaunchStmt,
    pub transformable: bool,
    pub reasons: Vec<String>,
    pub child_count: Option<ChildCount>,
    pub multi_dim: bool,
    /// The site sits inside a `while`/`for` of its owner.
    pub in_loop: bool,
    /// Divisions that looked like ceiling-division but whose divisor was
    /// neither a literal nor the block dimension.
    pub near_misses: Vec<String>,
}

impl LaunchSite {
    pub fn callee(&self) -> &str {
        &self.launch.callee
    }

    /// `kernel:line` key used in manifests.
    pub fn key(&self) -> String {
        format!("{}:{}", self.owner, self.span.line)
    }

    pub fn explain(&self) -> String {
        let verdict = if self.transformable {
            "yes".to_string()
        } else {
            format!("no ({})", self.reasons.join(", "))
        };
        let (pattern, extracted) = match &self.child_count {
            Some(c) => (c.pattern.name().to_string(), expr_to_string(&c.expr)),
            None => ("no match".to_string(), "-".to_string()),
        };
        let mut s = format!(
            "site={} callee={} transformable={} pattern={} extracted={}",
            self.key(),
            self.callee(),
            verdict,
            pattern,
            extracted
        );
        if self.multi_dim {
            s.push_str(" multi-dim=yes");
        }
        for n in &self.near_misses {
            s.push_str(&format!(" near-miss=\"{n}\""));
        }
        s
    }
}

/// All device-side launch sites (in `kernel` and `device` functions), fully
/// analyzed, in program order.
pub fn find_sites(prog: &Program) -> Vec<LaunchSite> {
    let mut out = Vec::new();
    for k in &prog.kernels {
        if k.kind == KernelKind::Host {
            continue;
        }
        out.extend(kernel_sites(prog, k));
    }
    out
}

pub fn kernel_sites(prog: &Program, k: &KernelDef) -> Vec<LaunchSite> {
    let mut found = Vec::new();
    visit::walk_with_paths(&k.body, &mut |s, path| {
        if let StmtKind::Launch(l) = &s.kind {
            found.push((path.clone(), s.span, l.clone()));
        }
    });
    found
        .into_iter()
        .map(|(path, span, launch)| {
            let ctx = SiteContext::new(&k.body, &path);
            let mut site = LaunchSite {
                owner: k.name.clone(),
                owner_kind: k.kind,
                in_loop: ctx.in_loop,
                path,
                span,
                multi_dim: is_multi_dim_config(&launch.grid) || is_multi_dim_config(&launch.block),
                launch,
                transformable: false,
                reasons: Vec::new(),
                child_count: None,
                near_misses: Vec::new(),
            };
            site = classify_transformable(site, prog);
            let (count, misses) = extract_with_context(&site.launch, &ctx);
            site.child_count = count;
            site.near_misses = misses;
            site
        })
        .collect()
}

/// Transformable iff the callee uses no barrier, warp primitive or shared
/// memory.
pub fn classify_transformable(mut site: LaunchSite, prog: &Program) -> LaunchSite {
    site.reasons.clear();
    match prog.kernel(site.callee()) {
        None => site.reasons.push("undefined callee".into()),
        Some(callee) => {
            let f = visit::scan_flags(&callee.body);
            if f.uses_barrier {
                site.reasons.push("barrier synchronization".into());
            }
            if f.uses_warp_primitive {
                site.reasons.push("warp-level primitive".into());
            }
            if f.uses_shared_mem {
                site.reasons.push("shared memory".into());
            }
            if visit::uses_multi_dim_builtins(&callee.body) {
                site.multi_dim = true;
            }
        }
    }
    site.transformable = site.reasons.is_empty();
    site
}

/// Extract the desired child thread count of the launch at `path` in `owner`.
pub fn extract_child_count(owner: &KernelDef, path: &StmtPath) -> Option<ChildCount> {
    let launch = match visit::stmt_at(&owner.body, path).map(|s| &s.kind) {
        Some(StmtKind::Launch(l)) => l,
        _ => return None,
    };
    let ctx = SiteContext::new(&owner.body, path);
    extract_with_context(launch, &ctx).0
}

/// Statements that may execute before a site, for single-assignment
/// temporary inlining.
struct SiteContext<'a> {
    /// Path-level statements preceding the site, in execution order.
    preceding: Vec<&'a Stmt>,
    /// Statements that run after the site but before its next execution
    /// (only when the site is inside a loop).
    after: Vec<&'a Stmt>,
    loop_vars: Vec<&'a str>,
    in_loop: bool,
}

impl<'a> SiteContext<'a> {
    fn new(body: &'a [Stmt], path: &StmtPath) -> Self {
        let mut ctx = SiteContext {
            preceding: Vec::new(),
            after: Vec::new(),
            loop_vars: Vec::new(),
            in_loop: false,
        };
        let mut cur = body;
        for st in &path.steps {
            ctx.take_level(cur, st.index);
            let s = &cur[st.index];
            match &s.kind {
                StmtKind::While { .. } => ctx.in_loop = true,
                StmtKind::For { var, step, .. } => {
                    ctx.in_loop = true;
                    ctx.loop_vars.push(var);
                    ctx.after.push(step);
                }
                _ => {}
            }
            cur = visit::child_blocks(s)[st.branch];
        }
        ctx.take_level(cur, path.last);
        ctx
    }

    fn take_level(&mut self, list: &'a [Stmt], idx: usize) {
        self.preceding.extend(list[..idx].iter());
        if self.in_loop {
            self.after.extend(list[idx + 1..].iter());
        }
    }

    fn writes_in(stmts: &[&Stmt], name: &str) -> usize {
        stmts.iter().map(|s| visit::count_writes(std::slice::from_ref(*s), name)).sum()
    }

    /// The single definition of `name` reaching the site, if it is safe to
    /// substitute.
    fn definition(&self, name: &str) -> Option<&'a Expr> {
        if self.loop_vars.contains(&name) {
            return None;
        }
        let total = Self::writes_in(&self.preceding, name) + Self::writes_in(&self.after, name);
        if total != 1 {
            return None;
        }
        let (pos, rhs) = self.preceding.iter().enumerate().find_map(|(i, s)| match &s.kind {
            StmtKind::Decl { name: n, init: Some(e), .. } if n == name => Some((i, e)),
            StmtKind::Assign {
                target: LValue::Var(n),
                value,
            } if n == name => Some((i, value)),
            _ => None,
        })?;
        // Operands of the definition must be unchanged between it and the site.
        let later = &self.preceding[pos + 1..];
        for v in visit::expr_vars(rhs) {
            if Self::writes_in(later, &v) + Self::writes_in(&self.after, &v) > 0 || self.loop_vars.contains(&v.as_str()) {
                return None;
            }
        }
        Some(rhs)
    }

    fn inline(&self, e: &Expr, depth: usize) -> Expr {
        if depth == 0 {
            return e.clone();
        }
        visit::map_expr(e, &mut |x| match x {
            Expr::Var(n) => self.definition(n).map(|rhs| self.inline(rhs, depth - 1)),
            _ => None,
        })
    }
}

const INLINE_DEPTH: usize = 8;

fn extract_with_context(launch: &LaunchStmt, ctx: &SiteContext<'_>) -> (Option<ChildCount>, Vec<String>) {
    let grid = ctx.inline(&launch.grid, INLINE_DEPTH);
    let block = ctx.inline(&launch.block, INLINE_DEPTH);
    let mut misses = Vec::new();
    let found = match (&grid, &block) {
        (Expr::Dim3(gs), _) if gs.len() > 1 => {
            let blocks: Vec<Expr> = match &block {
                Expr::Dim3(bs) => bs.clone(),
                b => vec![b.clone()],
            };
            let mut parts = Vec::new();
            for (i, g) in gs.iter().enumerate() {
                let b = blocks.get(i).cloned().unwrap_or(Expr::Int(1));
                let part = match strip_casts(g) {
                    lit if lit.is_int_literal() => Some(lit.clone()),
                    _ => match_component(g, &b, &mut misses).map(|(n, _)| n),
                };
                match part {
                    Some(n) => parts.push(n),
                    None => {
                        parts.clear();
                        break;
                    }
                }
            }
            let mut it = parts.into_iter();
            it.next().map(|first| {
                let expr = it.fold(first, |acc, n| Expr::bin(BinOp::Mul, acc, n));
                (expr, Pattern::Dim3)
            })
        }
        (g, b) => {
            let g = match g {
                Expr::Dim3(cs) if cs.len() == 1 => &cs[0],
                other => other,
            };
            let b = match b {
                Expr::Dim3(cs) if cs.len() == 1 => &cs[0],
                other => other,
            };
            match_component(g, b, &mut misses)
        }
    };
    let count = found.map(|(expr, pattern)| ChildCount {
        in_grid: visit::contains_subexpr(&launch.grid, &expr),
        expr,
        pattern,
    });
    (count, misses)
}

fn strip_casts(e: &Expr) -> &Expr {
    match e {
        Expr::Cast { operand, .. } => strip_casts(operand),
        other => other,
    }
}

fn divisor_ok(r: &Expr, block: &Expr) -> bool {
    let r = strip_casts(r);
    r.is_int_literal() || r == strip_casts(block)
}

/// Signed additive terms of an expression.
fn additive_terms(e: &Expr, positive: bool, out: &mut Vec<(bool, Expr)>) {
    match strip_casts(e) {
        Expr::Binary { op: BinOp::Add, lhs, rhs } => {
            additive_terms(lhs, positive, out);
            additive_terms(rhs, positive, out);
        }
        Expr::Binary { op: BinOp::Sub, lhs, rhs } => {
            additive_terms(lhs, positive, out);
            additive_terms(rhs, !positive, out);
        }
        other => out.push((positive, other.clone())),
    }
}

/// Drop literal and block-dimension terms from a numerator.
fn strip_terms(numerator: &Expr, block: &Expr) -> Option<Expr> {
    let mut terms = Vec::new();
    additive_terms(numerator, true, &mut terms);
    let b = strip_casts(block);
    let kept: Vec<(bool, Expr)> = terms
        .into_iter()
        .filter(|(_, t)| !(t.is_int_literal() || strip_casts(t) == b))
        .collect();
    let first_pos = kept.iter().position(|(p, _)| *p)?;
    let mut acc = strip_casts(&kept[first_pos].1).clone();
    for (i, (pos, t)) in kept.into_iter().enumerate() {
        if i == first_pos {
            continue;
        }
        acc = Expr::bin(if pos { BinOp::Add } else { BinOp::Sub }, acc, t);
    }
    Some(acc)
}

fn is_remainder_test(e: &Expr) -> bool {
    match strip_casts(e) {
        Expr::Binary {
            op: BinOp::Ne | BinOp::Gt,
            lhs,
            rhs,
        } => {
            matches!(strip_casts(lhs), Expr::Binary { op: BinOp::Rem, .. }) && matches!(strip_casts(rhs), Expr::Int(0))
        }
        _ => false,
    }
}

fn match_division<'e>(e: &'e Expr, block: &Expr, misses: &mut Vec<String>) -> Option<&'e Expr> {
    match strip_casts(e) {
        Expr::Binary {
            op: BinOp::Div,
            lhs,
            rhs,
        } => {
            if divisor_ok(rhs, block) {
                Some(lhs)
            } else {
                misses.push(format!(
                    "divisor `{}` is neither a literal nor the block dimension `{}`",
                    expr_to_string(rhs),
                    expr_to_string(block)
                ));
                None
            }
        }
        _ => None,
    }
}

fn match_component(g: &Expr, block: &Expr, misses: &mut Vec<String>) -> Option<(Expr, Pattern)> {
    let g = strip_casts(g);
    match g {
        Expr::Ceil(inner) => {
            let num = match_division(inner, block, misses)?;
            let pattern = if matches!(num, Expr::Cast { .. }) {
                Pattern::FloatCeilNumerator
            } else {
                Pattern::FloatCeil
            };
            strip_terms(num, block).map(|n| (n, pattern))
        }
        Expr::Binary { op: BinOp::Div, .. } => {
            let num = match_division(g, block, misses)?;
            strip_terms(num, block).map(|n| (n, Pattern::AddRoundUp))
        }
        Expr::Binary { op: BinOp::Add, .. } => {
            let mut terms = Vec::new();
            additive_terms(g, true, &mut terms);
            let divs: Vec<usize> = terms
                .iter()
                .enumerate()
                .filter(|(_, (p, t))| *p && matches!(t, Expr::Binary { op: BinOp::Div, .. }))
                .map(|(i, _)| i)
                .collect();
            let [di] = divs.as_slice() else { return None };
            let others: Vec<&Expr> = terms.iter().enumerate().filter(|(i, _)| i != di).map(|(_, (_, t))| t).collect();
            let pattern = if others.iter().all(|t| t.is_int_literal()) {
                Pattern::MinusOnePlusOne
            } else if others.iter().all(|t| t.is_int_literal() || is_remainder_test(t)) {
                Pattern::RemainderCorrection
            } else {
                return None;
            };
            let num = match_division(&terms[*di].1, block, misses)?;
            strip_terms(num, block).map(|n| (n, pattern))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site_for(src: &str) -> LaunchSite {
        let p = parse(src).unwrap();
        find_sites(&p).into_iter().next().unwrap()
    }

    fn extracted(grid_src: &str) -> Option<(String, Pattern)> {
        let src = format!(
            "kernel child(int n) {{}}\nkernel parent(int N, int b, int Nx, int Ny, int bx, int by) {{ launch child<<<{grid_src}, b>>>(N); }}"
        );
        let s = site_for(&src);
        s.child_count.map(|c| (expr_to_string(&c.expr), c.pattern))
    }

    #[test]
    fn ceiling_patterns_extract_numerator() {
        assert_eq!(extracted("(N + b - 1) / b"), Some(("N".into(), Pattern::AddRoundUp)));
        assert_eq!(extracted("(N - 1) / b + 1"), Some(("N".into(), Pattern::MinusOnePlusOne)));
        assert_eq!(extracted("N / b + (N % b != 0)"), Some(("N".into(), Pattern::RemainderCorrection)));
        assert_eq!(extracted("ceil(N / (float)b)"), Some(("N".into(), Pattern::FloatCeil)));
        assert_eq!(extracted("ceil((float)N / b)"), Some(("N".into(), Pattern::FloatCeilNumerator)));
        assert_eq!(extracted("(int)ceil((float)N / b)"), Some(("N".into(), Pattern::FloatCeilNumerator)));
    }

    #[test]
    fn dim3_multiplies_components() {
        let src = "kernel child(int n) {}\nkernel parent(int Nx, int Ny, int bx, int by) { launch child<<<dim3((Nx + bx - 1) / bx, (Ny + by - 1) / by), dim3(bx, by)>>>(Nx); }";
        let s = site_for(src);
        assert!(s.multi_dim);
        let c = s.child_count.unwrap();
        assert_eq!(expr_to_string(&c.expr), "Nx * Ny");
        assert_eq!(c.pattern, Pattern::Dim3);
    }

    #[test]
    fn intermediate_variable_is_inlined() {
        let src = "kernel child(int n) {}\nkernel parent(int N, int b) {\n int numBlocks = N / b + (N % b != 0);\n launch child<<<numBlocks, b>>>(N);\n}";
        let c = site_for(src).child_count.unwrap();
        assert_eq!(expr_to_string(&c.expr), "N");
        assert!(!c.in_grid);
    }

    #[test]
    fn chained_temporaries_are_inlined() {
        let src = "kernel child(int n) {}\nkernel parent(int N) {\n int b = 64;\n int t = N + b - 1;\n int g = t / b;\n launch child<<<g, b>>>(N);\n}";
        let c = site_for(src).child_count.unwrap();
        assert_eq!(expr_to_string(&c.expr), "N");
    }

    #[test]
    fn reassigned_temporaries_are_not_inlined() {
        let src = "kernel child(int n) {}\nkernel parent(int N, int b) {\n int g = (N + b - 1) / b;\n g = g + 1;\n launch child<<<g, b>>>(N);\n}";
        assert!(site_for(src).child_count.is_none());
        let src = "kernel child(int n) {}\nkernel parent(int N, int b) {\n int M = N;\n int g = (M + b - 1) / b;\n M = 3;\n launch child<<<g, b>>>(N);\n}";
        assert!(site_for(src).child_count.is_none());
    }

    #[test]
    fn table_lookup_is_a_miss() {
        let src = "global int someTable[4];\nkernel child(int n) {}\nkernel parent(int i, int b) { launch child<<<someTable[i], b>>>(i); }";
        assert!(site_for(src).child_count.is_none());
    }

    #[test]
    fn foreign_divisor_is_a_logged_near_miss() {
        let s = site_for("kernel child(int n) {}\nkernel parent(int N, int b, int c) { launch child<<<(N + c - 1) / c, b>>>(N); }");
        assert!(s.child_count.is_none());
        assert_eq!(s.near_misses.len(), 1);
    }

    #[test]
    fn transformability_reasons() {
        let s = site_for("kernel child() { barrier; }\nkernel parent() { launch child<<<1, 1>>>(); }");
        assert!(!s.transformable);
        assert_eq!(s.reasons, vec!["barrier synchronization"]);
        let s = site_for("kernel child() { shared int buf[64]; buf[0] = 1; }\nkernel parent() { launch child<<<1, 1>>>(); }");
        assert_eq!(s.reasons, vec!["shared memory"]);
        let s = site_for("global int g[4];\nkernel child() { g[threadIdx.x] = g[0] + 1; }\nkernel parent() { launch child<<<1, 1>>>(); }");
        assert!(s.transformable && s.reasons.is_empty());
    }

    #[test]
    fn loop_sites_do_not_inline_loop_written_vars() {
        let src = "kernel child(int n) {}\nkernel parent(int N, int b) {\n int g = 0;\n for (int i = 0; i < 3; i++) {\n  g = (N + b - 1) / b;\n  launch child<<<g, b>>>(N);\n }\n}";
        let s = site_for(src);
        assert!(s.in_loop);
        assert!(s.child_count.is_none());
    }
}
