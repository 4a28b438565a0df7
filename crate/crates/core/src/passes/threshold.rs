//! Thresholding: launch the child only when it has enough threads, and run
//! a serial loop nest in the parent thread otherwise.

use std::collections::HashMap;

use super::*;
use crate::analysis::{self, FallbackPolicy, LaunchSite};

pub const THRESHOLD_DEFINE: &str = "_THRESHOLD";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Value(u32),
    /// Always serialize.
    Infinite,
}

impl Threshold {
    pub fn define_value(self) -> i64 {
        match self {
            Threshold::Value(v) => v.min(i32::MAX as u32) as i64,
            Threshold::Infinite => i32::MAX as i64,
        }
    }

    pub fn parse(s: &str) -> Option<Threshold> {
        match s {
            "inf" | "infinite" | "∞" => Some(Threshold::Infinite),
            _ => s.parse().ok().map(Threshold::Value),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Value(v) => write!(f, "{v}"),
            Threshold::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdConfig {
    pub threshold: Threshold,
    pub fallback: FallbackPolicy,
}

impl ThresholdConfig {
    pub fn new(threshold: Threshold) -> Self {
        ThresholdConfig {
            threshold,
            fallback: FallbackPolicy::Skip,
        }
    }
}

pub fn serial_name(child: &str) -> String {
    format!("{child}_serial")
}

/// Device function running every thread of every block of a `child` grid in
/// sequence. Its two extra trailing parameters are the grid and block size.
pub fn make_serial_version(child: &KernelDef) -> Result<KernelDef, PassError> {
    let refuse = |reason: &str| PassError::Refused {
        kernel: child.name.clone(),
        reason: reason.to_string(),
    };
    if child.kind != KernelKind::Entry {
        return Err(refuse("not a kernel"));
    }
    let f = visit::scan_flags(&child.body);
    if f.uses_barrier || f.uses_shared_mem || f.uses_warp_primitive {
        return Err(refuse("not transformable"));
    }
    if visit::uses_multi_dim_builtins(&child.body) {
        return Err(refuse("multi-dimensional"));
    }
    if visit::return_inside_loop(&child.body) {
        return Err(refuse("return inside loop"));
    }
    let mut taken = bound_names(child);
    let g = fresh("_gDim", &mut taken);
    let b = fresh("_bDim", &mut taken);
    let bi = fresh("_bIdx", &mut taken);
    let ti = fresh("_tIdx", &mut taken);

    let mut body = child.body.clone();
    substitute(
        &mut body,
        &[
            (BuiltinVar::BlockIdx, &bi),
            (BuiltinVar::ThreadIdx, &ti),
            (BuiltinVar::GridDim, &g),
            (BuiltinVar::BlockDim, &b),
        ],
    );
    visit::returns_to_continue(&mut body);
    let inner = counted_loop(&ti, Expr::int(0), Expr::bin(BinOp::Lt, Expr::var(&ti), Expr::var(&b)), body);
    let outer = counted_loop(&bi, Expr::int(0), Expr::bin(BinOp::Lt, Expr::var(&bi), Expr::var(&g)), vec![inner]);

    let mut params = child.params.clone();
    params.push(Param::new(g, Type::INT));
    params.push(Param::new(b, Type::INT));
    let mut k = KernelDef::new(serial_name(&child.name), KernelKind::Device, params, vec![outer]);
    k.span = child.span;
    Ok(k)
}

fn skip_reason(prog: &Program, site: &LaunchSite, cfg: &ThresholdConfig) -> Option<String> {
    if !site.transformable {
        let r: Vec<String> = site.reasons.iter().map(|r| r.replace(' ', "-")).collect();
        return Some(format!("not-transformable({})", r.join(",")));
    }
    if site.multi_dim {
        return Some("multi-dimensional".into());
    }
    let callee = prog.kernel(site.callee())?;
    if callee.kind != KernelKind::Entry {
        return Some("callee-not-a-kernel".into());
    }
    if visit::return_inside_loop(&callee.body) {
        return Some("return-inside-loop".into());
    }
    if helpers_read_builtins(prog, callee) {
        return Some("helper-reads-builtins".into());
    }
    if site.child_count.is_none() && cfg.fallback == FallbackPolicy::Skip {
        return Some("no-child-count-match".into());
    }
    None
}

/// The guarded replacement for one launch statement.
fn guarded_launch(site: &LaunchSite, callee: &KernelDef, owner_names: &HashSet<String>) -> Stmt {
    let mut taken = owner_names.clone();
    let threads = fresh("_threads", &mut taken);
    let tg = fresh("_tgDim", &mut taken);
    let tb = fresh("_tbDim", &mut taken);
    let l = &site.launch;
    let mut out = Vec::new();
    match &site.child_count {
        Some(cc) => {
            out.push(decl(Type::INT, &threads, cc.expr.clone()));
            let grid = if cc.in_grid {
                visit::replace_subexpr(&l.grid, &cc.expr, &Expr::var(&threads))
            } else {
                l.grid.clone()
            };
            out.push(decl(Type::INT, &tg, grid));
            out.push(decl(Type::INT, &tb, l.block.clone()));
        }
        None => {
            out.push(decl(Type::INT, &tg, l.grid.clone()));
            out.push(decl(Type::INT, &tb, l.block.clone()));
            out.push(decl(Type::INT, &threads, Expr::bin(BinOp::Mul, Expr::var(&tg), Expr::var(&tb))));
        }
    }
    let mut args = Vec::new();
    for (i, (a, p)) in l.args.iter().zip(&callee.params).enumerate() {
        let name = fresh(&format!("_targ{i}"), &mut taken);
        out.push(decl(p.ty, &name, a.clone()));
        args.push(Expr::var(name));
    }
    let direct = launch(&l.callee, Expr::var(&tg), Expr::var(&tb), args.clone(), site.span);
    let mut serial_args = args;
    serial_args.push(Expr::var(&tg));
    serial_args.push(Expr::var(&tb));
    let serial = Stmt::at(
        StmtKind::Call {
            callee: serial_name(&l.callee),
            args: serial_args,
        },
        site.span,
    );
    out.push(Stmt::at(
        StmtKind::If {
            cond: Expr::bin(BinOp::Ge, Expr::var(&threads), Expr::var(THRESHOLD_DEFINE)),
            then_body: vec![direct],
            else_body: Some(vec![serial]),
        },
        site.span,
    ));
    Stmt::at(StmtKind::Block(out), site.span)
}

pub fn apply_threshold(prog: &Program, cfg: &ThresholdConfig) -> PassOutput {
    let mut out = PassOutput {
        program: prog.clone(),
        ..Default::default()
    };
    let sites = analysis::find_sites(prog);
    let mut rewrites: HashMap<String, Vec<(StmtPath, Stmt)>> = HashMap::new();
    let mut serial_needed: Vec<String> = Vec::new();

    for site in &sites {
        let key = site.key();
        if let Some(reason) = skip_reason(prog, site, cfg) {
            out.diagnostics
                .push(info(site.span, format!("threshold: site {key} left unchanged: {reason}")));
            out.manifest.push(ManifestEntry::skipped(key, PassKind::Threshold, reason));
            continue;
        }
        let owner = prog.kernel(&site.owner).expect("site owner exists");
        let callee = prog.kernel(site.callee()).expect("checked in skip_reason");
        let stmt = guarded_launch(site, callee, &bound_names(owner));
        rewrites.entry(site.owner.clone()).or_default().push((site.path.clone(), stmt));
        if !serial_needed.contains(&callee.name) {
            serial_needed.push(callee.name.clone());
        }
        out.manifest.push(ManifestEntry::new(key, PassKind::Threshold, Action::Transformed));
    }
    for h in host_sites(prog) {
        out.manifest.push(ManifestEntry::skipped(h, PassKind::Threshold, "host-launch"));
    }

    for (owner, edits) in rewrites {
        let k = out.program.kernel_mut(&owner).expect("owner exists");
        for (path, stmt) in edits {
            replace_at(&mut k.body, &path, stmt);
        }
    }
    for child in serial_needed {
        let name = serial_name(&child);
        if out.program.kernel(&name).is_some() {
            continue;
        }
        let def = make_serial_version(prog.kernel(&child).expect("child exists")).expect("filtered by skip_reason");
        let pos = out.program.kernels.iter().position(|k| k.name == child).expect("child exists");
        out.program.kernels.insert(pos + 1, def);
    }
    out.program.set_define(THRESHOLD_DEFINE, cfg.threshold.define_value());
    out.program.refresh_flags();
    out
}
