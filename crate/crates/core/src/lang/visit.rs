//! Generic traversals over statements and expressions.

use super::ast::*;

/// Visit every expression reachable from `e` (pre-order).
pub fn walk_expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(e);
    match e {
        Expr::Int(_) | Expr::Long(_) | Expr::Float(_) | Expr::Var(_) | Expr::Builtin(..) => {}
        Expr::Index { index, .. } => walk_expr(index, f),
        Expr::Binary { lhs, rhs, .. } => {
            walk_expr(lhs, f);
            walk_expr(rhs, f);
        }
        Expr::Unary { operand, .. } | Expr::Cast { operand, .. } => walk_expr(operand, f),
        Expr::Ceil(a) | Expr::Ballot(a) => walk_expr(a, f),
        Expr::Min(a, b) | Expr::Max(a, b) | Expr::Shfl(a, b) => {
            walk_expr(a, f);
            walk_expr(b, f);
        }
        Expr::Dim3(cs) => cs.iter().for_each(|c| walk_expr(c, f)),
    }
}

/// Rebuild `e` bottom-up, letting `f` replace any node. `f` returns `None`
/// to keep recursing into the node unchanged.
pub fn map_expr(e: &Expr, f: &mut dyn FnMut(&Expr) -> Option<Expr>) -> Expr {
    if let Some(r) = f(e) {
        return r;
    }
    let bx = |x: &Expr, f: &mut dyn FnMut(&Expr) -> Option<Expr>| Box::new(map_expr(x, f));
    match e {
        Expr::Int(_) | Expr::Long(_) | Expr::Float(_) | Expr::Var(_) | Expr::Builtin(..) => e.clone(),
        Expr::Index { buf, index } => Expr::Index {
            buf: buf.clone(),
            index: bx(index, f),
        },
        Expr::Binary { op, lhs, rhs } => Expr::Binary {
            op: *op,
            lhs: bx(lhs, f),
            rhs: bx(rhs, f),
        },
        Expr::Unary { op, operand } => Expr::Unary {
            op: *op,
            operand: bx(operand, f),
        },
        Expr::Cast { ty, operand } => Expr::Cast {
            ty: *ty,
            operand: bx(operand, f),
        },
        Expr::Ceil(a) => Expr::Ceil(bx(a, f)),
        Expr::Ballot(a) => Expr::Ballot(bx(a, f)),
        Expr::Min(a, b) => Expr::Min(bx(a, f), bx(b, f)),
        Expr::Max(a, b) => Expr::Max(bx(a, f), bx(b, f)),
        Expr::Shfl(a, b) => Expr::Shfl(bx(a, f), bx(b, f)),
        Expr::Dim3(cs) => Expr::Dim3(cs.iter().map(|c| map_expr(c, f)).collect()),
    }
}

/// Expressions directly held by a statement (not by nested statements).
pub fn stmt_exprs(s: &Stmt) -> Vec<&Expr> {
    match &s.kind {
        StmtKind::Decl { init, .. } => init.iter().collect(),
        StmtKind::Assign { target, value } => {
            let mut v = vec![value];
            if let LValue::Index { index, .. } = target {
                v.push(index);
            }
            v
        }
        StmtKind::Atomic { index, operands, .. } => std::iter::once(index).chain(operands.iter()).collect(),
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
        StmtKind::For { init, cond, .. } => vec![init, cond],
        StmtKind::Launch(l) => std::iter::once(&l.grid)
            .chain(std::iter::once(&l.block))
            .chain(l.args.iter())
            .collect(),
        StmtKind::Call { args, .. } => args.iter().collect(),
        StmtKind::Shared { .. }
        | StmtKind::Block(_)
        | StmtKind::Region { .. }
        | StmtKind::Barrier
        | StmtKind::Fence
        | StmtKind::Sync
        | StmtKind::Return
        | StmtKind::Continue => vec![],
    }
}

/// Nested statement lists of a compound statement. The `for` step is
/// reported as its own one-element list.
pub fn child_blocks(s: &Stmt) -> Vec<&[Stmt]> {
    match &s.kind {
        StmtKind::If {
            then_body, else_body, ..
        } => {
            let mut v = vec![then_body.as_slice()];
            if let Some(e) = else_body {
                v.push(e.as_slice());
            }
            v
        }
        StmtKind::While { body, .. } | StmtKind::Block(body) | StmtKind::Region { body, .. } => vec![body.as_slice()],
        StmtKind::For { step, body, .. } => vec![std::slice::from_ref(step.as_ref()), body.as_slice()],
        _ => vec![],
    }
}

/// Visit every statement in `body` recursively (pre-order).
pub fn walk_stmts<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in body {
        f(s);
        for b in child_blocks(s) {
            walk_stmts(b, f);
        }
    }
}

/// Visit every expression in `body` recursively.
pub fn walk_body_exprs<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    walk_stmts(body, &mut |s| {
        for e in stmt_exprs(s) {
            walk_expr(e, f);
        }
    });
}

/// Rewrite every expression in `body` in place with `map_expr(.., f)`.
pub fn map_body_exprs(body: &mut [Stmt], f: &mut dyn FnMut(&Expr) -> Option<Expr>) {
    for s in body.iter_mut() {
        map_stmt_exprs(s, f);
    }
}

fn map_stmt_exprs(s: &mut Stmt, f: &mut dyn FnMut(&Expr) -> Option<Expr>) {
    let m = |e: &mut Expr, f: &mut dyn FnMut(&Expr) -> Option<Expr>| *e = map_expr(e, f);
    match &mut s.kind {
        StmtKind::Decl { init, .. } => {
            if let Some(e) = init {
                m(e, f)
            }
        }
        StmtKind::Assign { target, value } => {
            if let LValue::Index { index, .. } = target {
                m(index, f);
            }
            m(value, f);
        }
        StmtKind::Atomic { index, operands, .. } => {
            m(index, f);
            operands.iter_mut().for_each(|e| m(e, f));
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            m(cond, f);
            map_body_exprs(then_body, f);
            if let Some(e) = else_body {
                map_body_exprs(e, f);
            }
        }
        StmtKind::While { cond, body } => {
            m(cond, f);
            map_body_exprs(body, f);
        }
        StmtKind::For {
            init, cond, step, body, ..
        } => {
            m(init, f);
            m(cond, f);
            map_stmt_exprs(step, f);
            map_body_exprs(body, f);
        }
        StmtKind::Block(body) | StmtKind::Region { body, .. } => map_body_exprs(body, f),
        StmtKind::Launch(l) => {
            m(&mut l.grid, f);
            m(&mut l.block, f);
            l.args.iter_mut().for_each(|e| m(e, f));
        }
        StmtKind::Call { args, .. } => args.iter_mut().for_each(|e| m(e, f)),
        StmtKind::Shared { .. }
        | StmtKind::Barrier
        | StmtKind::Fence
        | StmtKind::Sync
        | StmtKind::Return
        | StmtKind::Continue => {}
    }
}

/// Feature flags of a body, computed by a full recursive scan.
pub fn scan_flags(body: &[Stmt]) -> KernelFlags {
    let mut flags = KernelFlags::default();
    walk_stmts(body, &mut |s| match &s.kind {
        StmtKind::Barrier => flags.uses_barrier = true,
        StmtKind::Shared { .. } => flags.uses_shared_mem = true,
        StmtKind::Launch(_) => flags.contains_launch = true,
        _ => {}
    });
    walk_body_exprs(body, &mut |e| {
        if matches!(e, Expr::Ballot(_) | Expr::Shfl(..)) {
            flags.uses_warp_primitive = true;
        }
    });
    flags
}

/// Replace builtin `var.x` occurrences according to `subst` in `body`.
pub fn substitute_builtins(body: &mut [Stmt], subst: &[(BuiltinVar, Expr)]) {
    map_body_exprs(body, &mut |e| match e {
        Expr::Builtin(b, Dim::X) => subst.iter().find(|(k, _)| k == b).map(|(_, r)| r.clone()),
        _ => None,
    });
}

/// True if any builtin with a y or z component appears in `body`.
pub fn uses_multi_dim_builtins(body: &[Stmt]) -> bool {
    let mut found = false;
    walk_body_exprs(body, &mut |e| {
        if matches!(e, Expr::Builtin(_, Dim::Y | Dim::Z)) {
            found = true;
        }
    });
    found
}

pub fn uses_builtins(body: &[Stmt]) -> bool {
    let mut found = false;
    walk_body_exprs(body, &mut |e| {
        if matches!(e, Expr::Builtin(..)) {
            found = true;
        }
    });
    found
}

pub fn contains_return(body: &[Stmt]) -> bool {
    let mut found = false;
    walk_stmts(body, &mut |s| {
        if matches!(s.kind, StmtKind::Return) {
            found = true;
        }
    });
    found
}

/// True if a `return` appears inside a loop nested in `body`.
pub fn return_inside_loop(body: &[Stmt]) -> bool {
    fn go(body: &[Stmt], in_loop: bool) -> bool {
        body.iter().any(|s| match &s.kind {
            StmtKind::Return => in_loop,
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => go(body, true),
            _ => child_blocks(s).into_iter().any(|b| go(b, in_loop)),
        })
    }
    go(body, false)
}

/// Turn every `return` that is not inside a loop into `continue`, so a body
/// wrapped in a new loop skips to its next iteration. Callers must first
/// check [`return_inside_loop`].
pub fn returns_to_continue(body: &mut [Stmt]) {
    for s in body.iter_mut() {
        match &mut s.kind {
            StmtKind::Return => s.kind = StmtKind::Continue,
            StmtKind::While { .. } | StmtKind::For { .. } => {}
            StmtKind::If {
                then_body, else_body, ..
            } => {
                returns_to_continue(then_body);
                if let Some(e) = else_body {
                    returns_to_continue(e);
                }
            }
            StmtKind::Block(b) | StmtKind::Region { body: b, .. } => returns_to_continue(b),
            _ => {}
        }
    }
}

/// Local variable written by a statement, if any (not recursive).
pub fn written_var(s: &Stmt) -> Option<&str> {
    match &s.kind {
        StmtKind::Decl { name, .. } => Some(name),
        StmtKind::Assign {
            target: LValue::Var(name),
            ..
        } => Some(name),
        StmtKind::Atomic { dest: Some(d), .. } => Some(&d.name),
        StmtKind::For { var, .. } => Some(var),
        _ => None,
    }
}

/// Number of statements in `body` (recursively) that write local `name`.
pub fn count_writes(body: &[Stmt], name: &str) -> usize {
    let mut n = 0;
    walk_stmts(body, &mut |s| {
        if written_var(s) == Some(name) {
            n += 1;
        }
    });
    n
}

/// Names referenced by `Var` nodes in `e`.
pub fn expr_vars(e: &Expr) -> Vec<String> {
    let mut v = Vec::new();
    walk_expr(e, &mut |x| {
        if let Expr::Var(n) = x {
            if !v.contains(n) {
                v.push(n.clone());
            }
        }
    });
    v
}

pub fn replace_subexpr(e: &Expr, needle: &Expr, with: &Expr) -> Expr {
    map_expr(e, &mut |x| (x == needle).then(|| with.clone()))
}

pub fn contains_subexpr(e: &Expr, needle: &Expr) -> bool {
    let mut found = false;
    walk_expr(e, &mut |x| {
        if x == needle {
            found = true;
        }
    });
    found
}

/// Every launch statement in `body`.
pub fn launches(body: &[Stmt]) -> Vec<&LaunchStmt> {
    let mut v = Vec::new();
    walk_stmts(body, &mut |s| {
        if let StmtKind::Launch(l) = &s.kind {
            v.push(l);
        }
    });
    v
}

/// One step of a statement path: the index within the current list and which
/// nested list of that statement to descend into next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathStep {
    pub index: usize,
    pub branch: usize,
}

/// Location of a statement: `steps` descend through compound statements
/// (`branch` indexes [`child_blocks`]) and `last` indexes the final list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct StmtPath {
    pub steps: Vec<PathStep>,
    pub last: usize,
}

pub fn stmt_at<'a>(body: &'a [Stmt], path: &StmtPath) -> Option<&'a Stmt> {
    let mut cur = body;
    for st in &path.steps {
        let s = cur.get(st.index)?;
        cur = *child_blocks(s).get(st.branch)?;
    }
    cur.get(path.last)
}

fn child_blocks_mut(s: &mut Stmt) -> Vec<&mut Vec<Stmt>> {
    match &mut s.kind {
        StmtKind::If {
            then_body, else_body, ..
        } => {
            let mut v = vec![then_body];
            if let Some(e) = else_body {
                v.push(e);
            }
            v
        }
        StmtKind::While { body, .. } | StmtKind::Block(body) | StmtKind::Region { body, .. } => vec![body],
        // The for step is never a path target; branch 1 is the body.
        StmtKind::For { body, .. } => vec![body],
        _ => vec![],
    }
}

pub fn stmt_at_mut<'a>(body: &'a mut Vec<Stmt>, path: &StmtPath) -> Option<&'a mut Stmt> {
    let mut cur = body;
    for st in &path.steps {
        let s = cur.get_mut(st.index)?;
        let is_for = matches!(s.kind, StmtKind::For { .. });
        let branch = if is_for {
            st.branch.checked_sub(1)?
        } else {
            st.branch
        };
        cur = child_blocks_mut(s).into_iter().nth(branch)?;
    }
    cur.get_mut(path.last)
}

/// Visit every statement together with its path.
pub fn walk_with_paths<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt, &StmtPath)) {
    fn go<'a>(body: &'a [Stmt], prefix: &mut Vec<PathStep>, f: &mut dyn FnMut(&'a Stmt, &StmtPath)) {
        for (i, s) in body.iter().enumerate() {
            f(
                s,
                &StmtPath {
                    steps: prefix.clone(),
                    last: i,
                },
            );
            for (b, blk) in child_blocks(s).into_iter().enumerate() {
                prefix.push(PathStep { index: i, branch: b });
                go(blk, prefix, f);
                prefix.pop();
            }
        }
    }
    go(body, &mut Vec::new(), f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(kind: StmtKind) -> Stmt {
        Stmt::new(kind)
    }

    #[test]
    fn flags_follow_nested_statements() {
        let body = vec![s(StmtKind::If {
            cond: Expr::int(1),
            then_body: vec![s(StmtKind::Barrier)],
            else_body: Some(vec![s(StmtKind::Shared {
                elem: ScalarType::Int,
                name: "t".into(),
                extent: 4,
            })]),
        })];
        let f = scan_flags(&body);
        assert!(f.uses_barrier && f.uses_shared_mem);
        assert!(!f.contains_launch && !f.uses_warp_primitive);
    }

    #[test]
    fn returns_become_continue_outside_loops() {
        let mut body = vec![
            s(StmtKind::If {
                cond: Expr::int(1),
                then_body: vec![s(StmtKind::Return)],
                else_body: None,
            }),
            s(StmtKind::Return),
        ];
        assert!(!return_inside_loop(&body));
        returns_to_continue(&mut body);
        assert!(!contains_return(&body));
    }

    #[test]
    fn path_lookup_round_trips() {
        let body = vec![
            s(StmtKind::Barrier),
            s(StmtKind::For {
                var: "i".into(),
                init: Expr::int(0),
                cond: Expr::int(1),
                step: Box::new(s(StmtKind::Assign {
                    target: LValue::Var("i".into()),
                    value: Expr::int(1),
                })),
                body: vec![s(StmtKind::Fence), s(StmtKind::Return)],
            }),
        ];
        let mut seen = Vec::new();
        walk_with_paths(&body, &mut |st, p| {
            if matches!(st.kind, StmtKind::Return) {
                seen.push(p.clone());
            }
        });
        assert_eq!(seen.len(), 1);
        assert!(matches!(stmt_at(&body, &seen[0]).unwrap().kind, StmtKind::Return));
        let mut body = body;
        assert!(matches!(stmt_at_mut(&mut body, &seen[0]).unwrap().kind, StmtKind::Return));
    }
}
