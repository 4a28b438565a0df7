//! Launch aggregation. Participating parent threads record their launch
//! configuration and arguments in per-group tables; one launch of
//! `<child>_agg` then covers the whole group and each of its blocks looks up
//! the parent it works for.
//!
//! Tables are columnar: one `_agg_<child>_args<i>` buffer per child
//! parameter, indexed by row. The 64-bit counter `_agg_<child>_ctr` packs
//! the number of rows in its high half and the running grid-size sum in the
//! low half, so a single atomic add hands out both the row and its prefix.

use super::*;
use crate::analysis::{self, LaunchSite};
use crate::lang::validate::is_multi_dim_config;

pub const GROUP_SIZE_DEFINE: &str = "_AGG_GROUP_SIZE";
pub const THRESHOLD_DEFINE: &str = "_AGG_THRESHOLD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggGranularity {
    #[default]
    None,
    Block,
    MultiBlock,
    Grid,
}

impl AggGranularity {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AggGranularity::None),
            "block" => Some(AggGranularity::Block),
            "multiblock" | "multi-block" => Some(AggGranularity::MultiBlock),
            "grid" => Some(AggGranularity::Grid),
            _ => None,
        }
    }

    fn lang(self) -> Option<Granularity> {
        match self {
            AggGranularity::None => None,
            AggGranularity::Block => Some(Granularity::Block),
            AggGranularity::MultiBlock => Some(Granularity::MultiBlock),
            AggGranularity::Grid => Some(Granularity::Grid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggConfig {
    pub granularity: AggGranularity,
    /// Parent blocks per group, multi-block only.
    pub group_size: u32,
    /// Minimum participating threads per block, block only; 0 disables.
    pub agg_threshold: u32,
}

impl AggConfig {
    pub fn new(granularity: AggGranularity) -> Self {
        AggConfig {
            granularity,
            group_size: 2,
            agg_threshold: 0,
        }
    }

    pub fn check(&self) -> Result<(), PassError> {
        if self.agg_threshold > 0 && self.granularity != AggGranularity::Block {
            return Err(PassError::Config("aggregation threshold requires block granularity".into()));
        }
        if self.granularity == AggGranularity::MultiBlock && self.group_size < 2 {
            return Err(PassError::Config("multi-block group size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Buffer names of one aggregation family.
struct Family {
    prefix: String,
    n_args: usize,
}

impl Family {
    fn new(child: &KernelDef) -> Self {
        Family {
            prefix: agg_family(&child.name),
            n_args: child.params.len(),
        }
    }
    fn buf(&self, s: &str) -> String {
        format!("{}_{s}", self.prefix)
    }
    fn args(&self, i: usize) -> String {
        format!("{}_args{i}", self.prefix)
    }
}

fn atomic(dest: Option<(&str, Type)>, op: AtomicOp, buf: &str, index: Expr, operand: Expr) -> Stmt {
    Stmt::new(StmtKind::Atomic {
        dest: dest.map(|(n, t)| AtomicDest {
            name: n.to_string(),
            declare: Some(t),
        }),
        op,
        buf: buf.to_string(),
        index,
        operands: vec![operand],
    })
}

fn region(phase: Phase, body: Vec<Stmt>) -> Stmt {
    Stmt::new(StmtKind::Region { phase, body })
}

fn var(n: &str) -> Expr {
    Expr::var(n)
}

fn low32(e: Expr) -> Expr {
    Expr::cast(ScalarType::Int, Expr::bin(BinOp::BitAnd, e, Expr::Long(0xffff_ffff)))
}

fn high32(e: Expr) -> Expr {
    Expr::cast(ScalarType::Int, Expr::bin(BinOp::Shr, e, Expr::Int(32)))
}

fn tid_is_zero() -> Expr {
    Expr::bin(BinOp::Eq, Expr::builtin(BuiltinVar::ThreadIdx), Expr::int(0))
}

/// Names used in the generated parent code.
struct ParentNames {
    ag: String,
    ab: String,
    aa: Vec<String>,
    grp: String,
    base: String,
    old: String,
    row: String,
    ctr: String,
    sum: String,
    prev: String,
}

impl ParentNames {
    fn new(parent: &KernelDef, n_args: usize) -> Self {
        let mut t = bound_names(parent);
        ParentNames {
            ag: fresh("_agg_ag", &mut t),
            ab: fresh("_agg_ab", &mut t),
            aa: (0..n_args).map(|i| fresh(&format!("_agg_aa{i}"), &mut t)).collect(),
            grp: fresh("_agg_grp", &mut t),
            base: fresh("_agg_base", &mut t),
            old: fresh("_agg_old", &mut t),
            row: fresh("_agg_row", &mut t),
            ctr: fresh("_agg_c", &mut t),
            sum: fresh("_agg_sum", &mut t),
            prev: fresh("_agg_prev", &mut t),
        }
    }
}

fn prologue(n: &ParentNames, child: &KernelDef, gran: Granularity) -> Vec<Stmt> {
    let mut v = vec![decl(Type::INT, &n.ag, Expr::int(0)), decl(Type::INT, &n.ab, Expr::int(0))];
    for (name, p) in n.aa.iter().zip(&child.params) {
        v.push(Stmt::new(StmtKind::Decl {
            ty: p.ty,
            name: name.clone(),
            init: None,
        }));
    }
    let bidx = || Expr::builtin(BuiltinVar::BlockIdx);
    let bdim = || Expr::builtin(BuiltinVar::BlockDim);
    let (grp, base) = match gran {
        Granularity::Block => (bidx(), Expr::bin(BinOp::Mul, var(&n.grp), bdim())),
        Granularity::MultiBlock => (
            Expr::bin(BinOp::Div, bidx(), var(GROUP_SIZE_DEFINE)),
            Expr::bin(BinOp::Mul, var(&n.grp), Expr::bin(BinOp::Mul, var(GROUP_SIZE_DEFINE), bdim())),
        ),
        Granularity::Grid => (Expr::int(0), Expr::int(0)),
    };
    v.push(decl(Type::INT, &n.grp, grp));
    v.push(decl(Type::INT, &n.base, base));
    v
}

/// Replacement for the launch statement: record this thread's launch.
fn record(n: &ParentNames, fam: &Family, l: &LaunchStmt, span: Span) -> Stmt {
    let mut body = vec![assign(&n.ag, l.grid.clone()), assign(&n.ab, l.block.clone())];
    for (name, a) in n.aa.iter().zip(&l.args) {
        body.push(assign(name, a.clone()));
    }
    let one_row = Expr::bin(
        BinOp::Add,
        Expr::Long(1 << 32),
        Expr::cast(ScalarType::Long, var(&n.ag)),
    );
    let mut inner = vec![
        atomic(Some((&n.old, Type::LONG)), AtomicOp::Add64, &fam.buf("ctr"), var(&n.grp), one_row),
        decl(Type::INT, &n.row, Expr::bin(BinOp::Add, var(&n.base), high32(var(&n.old)))),
        store(&fam.buf("gdim"), var(&n.row), low32(var(&n.old))),
        store(&fam.buf("bdim"), var(&n.row), var(&n.ab)),
    ];
    for (i, name) in n.aa.iter().enumerate() {
        inner.push(store(&fam.args(i), var(&n.row), var(name)));
    }
    inner.push(atomic(None, AtomicOp::Max, &fam.buf("max"), var(&n.grp), var(&n.ab)));
    body.push(if_then(Expr::bin(BinOp::Gt, var(&n.ag), Expr::int(0)), inner));
    let mut s = region(Phase::Agg, body);
    s.span = span;
    s
}

/// Read the group counter and launch the aggregated child if non-empty.
fn launch_group(n: &ParentNames, fam: &Family, agg_kernel: &str, span: Span) -> Vec<Stmt> {
    vec![
        decl(Type::LONG, &n.ctr, Expr::index(fam.buf("ctr"), var(&n.grp))),
        decl(Type::INT, &n.sum, low32(var(&n.ctr))),
        if_then(
            Expr::bin(BinOp::Gt, var(&n.sum), Expr::int(0)),
            vec![launch(
                agg_kernel,
                var(&n.sum),
                Expr::index(fam.buf("max"), var(&n.grp)),
                vec![var(&n.base), high32(var(&n.ctr)), var(&n.sum)],
                span,
            )],
        ),
    ]
}

fn epilogue(n: &ParentNames, fam: &Family, site: &LaunchSite, agg_kernel: &str, cfg: &AggConfig) -> Vec<Stmt> {
    let span = site.span;
    match cfg.granularity {
        AggGranularity::Block if cfg.agg_threshold > 0 => {
            // Everyone reads the counter; below the threshold each
            // participant launches its own grid.
            let direct = launch(
                &site.launch.callee,
                var(&n.ag),
                var(&n.ab),
                n.aa.iter().map(|a| var(a)).collect(),
                span,
            );
            let mut group = launch_group(n, fam, agg_kernel, span);
            let ctr_decl = group.remove(0);
            vec![region(
                Phase::Agg,
                vec![
                    Stmt::new(StmtKind::Barrier),
                    ctr_decl,
                    Stmt::new(StmtKind::If {
                        cond: Expr::bin(BinOp::Lt, high32(var(&n.ctr)), var(THRESHOLD_DEFINE)),
                        then_body: vec![if_then(Expr::bin(BinOp::Gt, var(&n.ag), Expr::int(0)), vec![direct])],
                        else_body: Some(vec![if_then(tid_is_zero(), group)]),
                    }),
                ],
            )]
        }
        AggGranularity::Block => vec![region(
            Phase::Agg,
            vec![
                Stmt::new(StmtKind::Barrier),
                if_then(tid_is_zero(), launch_group(n, fam, agg_kernel, span)),
            ],
        )],
        AggGranularity::MultiBlock => {
            let gs = || var(GROUP_SIZE_DEFINE);
            let blocks_in_group = Expr::Min(
                Box::new(gs()),
                Box::new(Expr::bin(
                    BinOp::Sub,
                    Expr::builtin(BuiltinVar::GridDim),
                    Expr::bin(BinOp::Mul, var(&n.grp), gs()),
                )),
            );
            let last = Expr::bin(BinOp::Eq, var(&n.prev), Expr::bin(BinOp::Sub, blocks_in_group, Expr::int(1)));
            vec![region(
                Phase::Agg,
                vec![
                    Stmt::new(StmtKind::Fence),
                    Stmt::new(StmtKind::Barrier),
                    if_then(
                        tid_is_zero(),
                        vec![
                            atomic(Some((&n.prev, Type::INT)), AtomicOp::Add, &fam.buf("done"), var(&n.grp), Expr::int(1)),
                            if_then(last, launch_group(n, fam, agg_kernel, span)),
                        ],
                    ),
                ],
            )]
        }
        AggGranularity::Grid | AggGranularity::None => vec![],
    }
}

/// `<child>_agg(int base, int n, int sum)`: find this block's parent row
/// by binary search over the scanned grid sizes, then run the original
/// body for that parent.
pub fn make_agg_child(child: &KernelDef) -> KernelDef {
    let fam = Family::new(child);
    let mut t = bound_names(child);
    let mut f = |s: &str| fresh(s, &mut t);
    let (base, n, sum) = (f("_agg_base"), f("_agg_n"), f("_agg_sum"));
    let (lo, hi, mid) = (f("_agg_lo"), f("_agg_hi"), f("_agg_mid"));
    let (row, start) = (f("_agg_prow"), f("_agg_start"));
    let (pb, pg, pbd) = (f("_agg_pbIdx"), f("_agg_pgDim"), f("_agg_pbDim"));
    let bidx = || Expr::builtin(BuiltinVar::BlockIdx);
    let add = |a: Expr, b: Expr| Expr::bin(BinOp::Add, a, b);
    let sub = |a: Expr, b: Expr| Expr::bin(BinOp::Sub, a, b);

    let search = Stmt::new(StmtKind::While {
        cond: Expr::bin(BinOp::Lt, var(&lo), var(&hi)),
        body: vec![
            decl(
                Type::INT,
                &mid,
                Expr::bin(BinOp::Div, add(add(var(&lo), var(&hi)), Expr::int(1)), Expr::int(2)),
            ),
            Stmt::new(StmtKind::If {
                cond: Expr::bin(
                    BinOp::Le,
                    Expr::index(fam.buf("gdim"), add(var(&base), var(&mid))),
                    bidx(),
                ),
                then_body: vec![assign(&lo, var(&mid))],
                else_body: Some(vec![assign(&hi, sub(var(&mid), Expr::int(1)))]),
            }),
        ],
    });
    let mut disagg = vec![
        decl(Type::INT, &lo, Expr::int(0)),
        decl(Type::INT, &hi, sub(var(&n), Expr::int(1))),
        search,
        decl(Type::INT, &row, add(var(&base), var(&lo))),
        decl(Type::INT, &start, Expr::index(fam.buf("gdim"), var(&row))),
        decl(Type::INT, &pb, sub(bidx(), var(&start))),
        decl(Type::INT, &pg, sub(var(&sum), var(&start))),
        if_then(
            Expr::bin(BinOp::Lt, add(var(&lo), Expr::int(1)), var(&n)),
            vec![assign(
                &pg,
                sub(Expr::index(fam.buf("gdim"), add(var(&row), Expr::int(1))), var(&start)),
            )],
        ),
        decl(Type::INT, &pbd, Expr::index(fam.buf("bdim"), var(&row))),
    ];
    for (i, p) in child.params.iter().enumerate() {
        disagg.push(decl(p.ty, &p.name, Expr::index(fam.args(i), var(&row))));
    }

    let mut body = child.body.clone();
    substitute(
        &mut body,
        &[
            (BuiltinVar::BlockIdx, &pb),
            (BuiltinVar::GridDim, &pg),
            (BuiltinVar::BlockDim, &pbd),
        ],
    );
    let guarded = if_then(
        Expr::bin(BinOp::Lt, Expr::builtin(BuiltinVar::ThreadIdx), var(&pbd)),
        vec![region(Phase::Child, body)],
    );
    let params = vec![
        Param::new(base, Type::INT),
        Param::new(n, Type::INT),
        Param::new(sum, Type::INT),
    ];
    let mut k = KernelDef::new(
        agg_kernel_name(&child.name),
        KernelKind::Entry,
        params,
        vec![region(Phase::Disagg, disagg), guarded],
    );
    k.span = child.span;
    k
}

pub fn agg_kernel_name(child: &str) -> String {
    format!("{child}_agg")
}

fn host_only_parent(prog: &Program, parent: &str) -> Result<(), String> {
    let mut host = 0;
    for k in &prog.kernels {
        for l in visit::launches(&k.body) {
            if l.callee != parent {
                continue;
            }
            if k.kind != KernelKind::Host {
                return Err("parent-launched-from-device".into());
            }
            if is_multi_dim_config(&l.grid) || is_multi_dim_config(&l.block) {
                return Err("multi-dimensional-parent".into());
            }
            host += 1;
        }
    }
    if host == 0 {
        return Err("parent-never-launched".into());
    }
    Ok(())
}

fn skip_reason(prog: &Program, site: &LaunchSite, used_parents: &[String], used_children: &[String]) -> Option<String> {
    if site.owner_kind != KernelKind::Entry {
        return Some("inside-device-function".into());
    }
    if site.in_loop {
        return Some("inside-loop".into());
    }
    if site.multi_dim {
        return Some("multi-dimensional".into());
    }
    let parent = prog.kernel(&site.owner)?;
    let Some(child) = prog.kernel(site.callee()) else {
        return Some("undefined-callee".into());
    };
    if child.kind != KernelKind::Entry {
        return Some("callee-not-a-kernel".into());
    }
    if used_parents.contains(&parent.name) || prog.glue.iter().any(|g| g.parent == parent.name) {
        return Some("parent-already-aggregates".into());
    }
    if used_children.contains(&child.name)
        || prog.glue.iter().any(|g| g.child == child.name || g.agg_kernel() == child.name)
        || prog.kernel(&agg_kernel_name(&child.name)).is_some()
    {
        return Some("child-already-aggregated".into());
    }
    if visit::contains_return(&parent.body) {
        return Some("parent-returns-early".into());
    }
    if visit::uses_multi_dim_builtins(&parent.body) {
        return Some("multi-dimensional-parent".into());
    }
    if let Err(r) = host_only_parent(prog, &parent.name) {
        return Some(r);
    }
    if visit::scan_flags(&child.body).uses_barrier {
        return Some("child-uses-barrier".into());
    }
    if helpers_read_builtins(prog, child) {
        return Some("helper-reads-builtins".into());
    }
    None
}

pub fn apply_aggregate(prog: &Program, cfg: &AggConfig) -> Result<PassOutput, PassError> {
    cfg.check()?;
    let mut out = PassOutput {
        program: prog.clone(),
        ..Default::default()
    };
    let Some(gran) = cfg.granularity.lang() else {
        return Ok(out);
    };
    let mut parents = Vec::new();
    let mut children = Vec::new();
    for site in analysis::find_sites(prog) {
        let key = site.key();
        if let Some(reason) = skip_reason(prog, &site, &parents, &children) {
            out.diagnostics
                .push(info(site.span, format!("aggregate: site {key} left unchanged: {reason}")));
            out.manifest.push(ManifestEntry::skipped(key, PassKind::Aggregate, reason));
            continue;
        }
        let child = prog.kernel(site.callee()).expect("checked").clone();
        let fam = Family::new(&child);
        let agg_kernel = agg_kernel_name(&child.name);
        let parent = out.program.kernel_mut(&site.owner).expect("owner exists");
        let names = ParentNames::new(parent, fam.n_args);
        replace_at(&mut parent.body, &site.path, record(&names, &fam, &site.launch, site.span));
        let mut body = prologue(&names, &child, gran);
        body.append(&mut parent.body);
        body.extend(epilogue(&names, &fam, &site, &agg_kernel, cfg));
        parent.body = body;

        for (i, p) in child.params.iter().enumerate() {
            out.program.ensure_global(&fam.args(i), p.ty, 0);
        }
        for (s, ty) in [
            ("gdim", Type::INT),
            ("bdim", Type::INT),
            ("max", Type::INT),
            ("ctr", Type::LONG),
            ("done", Type::INT),
        ] {
            out.program.ensure_global(&fam.buf(s), ty, 0);
        }
        out.program.glue.push(GlueDecl {
            parent: site.owner.clone(),
            child: child.name.clone(),
            granularity: gran,
            group_size: if gran == Granularity::MultiBlock { cfg.group_size } else { 1 },
            span: Span::default(),
        });
        let pos = out.program.kernels.iter().position(|k| k.name == child.name).expect("child exists");
        out.program.kernels.insert(pos + 1, make_agg_child(&child));
        parents.push(site.owner.clone());
        children.push(child.name.clone());
        out.manifest.push(ManifestEntry::new(key, PassKind::Aggregate, Action::Transformed));
    }
    for h in host_sites(prog) {
        out.manifest.push(ManifestEntry::skipped(h, PassKind::Aggregate, "host-launch"));
    }
    if !parents.is_empty() {
        match gran {
            Granularity::MultiBlock => out.program.set_define(GROUP_SIZE_DEFINE, cfg.group_size as i64),
            Granularity::Block if cfg.agg_threshold > 0 => {
                out.program.set_define(THRESHOLD_DEFINE, cfg.agg_threshold as i64)
            }
            _ => {}
        }
    }
    out.program.refresh_flags();
    Ok(out)
}

/// Test-only mutation: drop every `fence` statement.
pub fn strip_fences(prog: &mut Program) {
    fn go(body: &mut Vec<Stmt>) {
        body.retain(|s| !matches!(s.kind, StmtKind::Fence));
        for s in body.iter_mut() {
            match &mut s.kind {
                StmtKind::If {
                    then_body, else_body, ..
                } => {
                    go(then_body);
                    if let Some(e) = else_body {
                        go(e);
                    }
                }
                StmtKind::While { body, .. }
                | StmtKind::For { body, .. }
                | StmtKind::Block(body)
                | StmtKind::Region { body, .. } => go(body),
                _ => {}
            }
        }
    }
    for k in &mut prog.kernels {
        go(&mut k.body);
    }
}
