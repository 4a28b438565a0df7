//! Coarsening: each child block runs a contiguous chunk of `_CFACTOR`
//! original blocks, and launch sites ceiling-divide their grid.

use std::collections::HashMap;

use super::*;
use crate::lang::validate::is_multi_dim_config;

pub const CFACTOR_DEFINE: &str = "_CFACTOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarsenConfig {
    pub factor: u32,
}

impl CoarsenConfig {
    pub fn new(factor: u32) -> Result<Self, PassError> {
        if factor == 0 {
            return Err(PassError::Config("coarsening factor must be at least 1".into()));
        }
        Ok(CoarsenConfig { factor })
    }
}

/// Append `_gDim` and wrap the body in the chunk loop.
pub fn coarsen_kernel(child: &KernelDef) -> Result<KernelDef, PassError> {
    let refuse = |reason: &str| PassError::Refused {
        kernel: child.name.clone(),
        reason: reason.to_string(),
    };
    if child.kind != KernelKind::Entry {
        return Err(refuse("not a kernel"));
    }
    if visit::uses_multi_dim_builtins(&child.body) {
        return Err(refuse("multi-dimensional"));
    }
    if visit::return_inside_loop(&child.body) {
        return Err(refuse("return inside loop"));
    }
    let mut taken = bound_names(child);
    let g = fresh("_gDim", &mut taken);
    let b = fresh("_b", &mut taken);
    let mut body = child.body.clone();
    substitute(&mut body, &[(BuiltinVar::BlockIdx, &b), (BuiltinVar::GridDim, &g)]);
    visit::returns_to_continue(&mut body);

    let bidx = || Expr::builtin(BuiltinVar::BlockIdx);
    let cf = || Expr::var(CFACTOR_DEFINE);
    let start = Expr::bin(BinOp::Mul, bidx(), cf());
    let end = Expr::Min(
        Box::new(Expr::bin(BinOp::Mul, Expr::bin(BinOp::Add, bidx(), Expr::int(1)), cf())),
        Box::new(Expr::var(&g)),
    );
    let chunk = counted_loop(&b, start, Expr::bin(BinOp::Lt, Expr::var(&b), end), body);

    let mut k = child.clone();
    k.params.push(Param::new(g, Type::INT));
    k.body = vec![chunk];
    k.refresh_flags();
    Ok(k)
}

fn site_rewrite(l: &LaunchStmt, span: Span, owner_names: &HashSet<String>) -> Stmt {
    let mut taken = owner_names.clone();
    let g = fresh("_gDim", &mut taken);
    let cg = fresh("_cgDim", &mut taken);
    let cf = Expr::var(CFACTOR_DEFINE);
    let rounded = Expr::bin(
        BinOp::Div,
        Expr::bin(BinOp::Sub, Expr::bin(BinOp::Add, Expr::var(&g), cf.clone()), Expr::int(1)),
        cf,
    );
    let mut args = l.args.clone();
    args.push(Expr::var(&g));
    Stmt::at(
        StmtKind::Block(vec![
            decl(Type::INT, &g, l.grid.clone()),
            decl(Type::INT, &cg, rounded),
            launch(&l.callee, Expr::var(&cg), l.block.clone(), args, span),
        ]),
        span,
    )
}

struct Site {
    owner: String,
    key: String,
    path: StmtPath,
    span: Span,
    launch: LaunchStmt,
    device: bool,
}

fn all_sites(prog: &Program) -> Vec<Site> {
    let mut v = Vec::new();
    for k in &prog.kernels {
        visit::walk_with_paths(&k.body, &mut |s, path| {
            if let StmtKind::Launch(l) = &s.kind {
                v.push(Site {
                    owner: k.name.clone(),
                    key: site_key(&k.name, s.span),
                    path: path.clone(),
                    span: s.span,
                    launch: l.clone(),
                    device: k.kind != KernelKind::Host,
                });
            }
        });
    }
    v
}

/// Why `child` cannot be coarsened, given all sites that launch it.
fn child_veto(prog: &Program, child: &str, sites: &[&Site]) -> Option<String> {
    let Some(k) = prog.kernel(child) else {
        return Some("undefined-callee".into());
    };
    if k.kind != KernelKind::Entry {
        return Some("callee-not-a-kernel".into());
    }
    if prog.glue.iter().any(|g| g.agg_kernel() == child || g.child == child) {
        return Some("aggregated-child".into());
    }
    if visit::uses_multi_dim_builtins(&k.body)
        || sites
            .iter()
            .any(|s| is_multi_dim_config(&s.launch.grid) || is_multi_dim_config(&s.launch.block))
    {
        return Some("multi-dimensional".into());
    }
    if visit::return_inside_loop(&k.body) {
        return Some("return-inside-loop".into());
    }
    if helpers_read_builtins(prog, k) {
        return Some("helper-reads-builtins".into());
    }
    None
}

pub fn apply_coarsen(prog: &Program, cfg: &CoarsenConfig) -> PassOutput {
    let mut out = PassOutput {
        program: prog.clone(),
        ..Default::default()
    };
    let sites = all_sites(prog);
    let mut by_child: Vec<(String, Vec<&Site>)> = Vec::new();
    for s in &sites {
        match by_child.iter_mut().find(|(c, _)| *c == s.launch.callee) {
            Some((_, v)) => v.push(s),
            None => by_child.push((s.launch.callee.clone(), vec![s])),
        }
    }

    let mut rewrites: HashMap<&str, Vec<(&StmtPath, Stmt)>> = HashMap::new();
    let mut coarsened = Vec::new();
    let mut verdicts: HashMap<&str, Action> = HashMap::new();
    for (child, ss) in &by_child {
        let veto = if ss.iter().any(|s| s.device) {
            child_veto(prog, child, ss)
        } else {
            Some("no-device-launch".into())
        };
        if let Some(reason) = veto {
            for s in ss {
                let why = if s.device { reason.clone() } else { "host-launch".into() };
                if s.device {
                    out.diagnostics
                        .push(info(s.span, format!("coarsen: site {} left unchanged: {why}", s.key)));
                }
                verdicts.insert(&s.key, Action::Skipped(why));
            }
            continue;
        }
        for s in ss {
            let owner = prog.kernel(&s.owner).expect("owner exists");
            rewrites
                .entry(&s.owner)
                .or_default()
                .push((&s.path, site_rewrite(&s.launch, s.span, &bound_names(owner))));
            verdicts.insert(&s.key, Action::Transformed);
        }
        coarsened.push(child.clone());
    }
    for s in &sites {
        out.manifest
            .push(ManifestEntry::new(s.key.clone(), PassKind::Coarsen, verdicts[s.key.as_str()].clone()));
    }

    for (owner, edits) in rewrites {
        let k = out.program.kernel_mut(owner).expect("owner exists");
        for (path, stmt) in edits {
            replace_at(&mut k.body, path, stmt);
        }
    }
    for child in coarsened {
        let k = out.program.kernel_mut(&child).expect("child exists");
        *k = coarsen_kernel(k).expect("filtered by child_veto");
    }
    out.program.set_define(CFACTOR_DEFINE, cfg.factor as i64);
    out.program.refresh_flags();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimConfig};

    const SRC: &str = "
global int hits[64];

kernel child(int base) {
    atomicAdd(hits[base + blockIdx.x], 1);
}

kernel parent(int g) {
    launch child<<<g, 2>>>(0);
}

host main() {
    launch parent<<<1, 1>>>(10);
    sync;
}
";

    #[test]
    fn chunks_cover_every_block_once() {
        let p = parse(SRC).unwrap();
        for cf in [1, 3, 4, 10, 64] {
            let c = apply_coarsen(&p, &CoarsenConfig::new(cf).unwrap());
            let r = simulate(&c.program, None, &SimConfig::default()).unwrap();
            let hits = r.i32_buffer("hits").unwrap();
            assert!(hits[..10].iter().all(|&h| h == 2), "cf={cf}: {hits:?}");
            assert!(hits[10..].iter().all(|&h| h == 0));
            assert_eq!(r.blocks_scheduled, 1 + (10 + cf as u64 - 1) / cf as u64);
        }
    }

    #[test]
    fn zero_grid_schedules_nothing() {
        let p = parse(&SRC.replace("(10)", "(0)")).unwrap();
        let c = apply_coarsen(&p, &CoarsenConfig::new(4).unwrap());
        let r = simulate(&c.program, None, &SimConfig::default()).unwrap();
        assert_eq!(r.blocks_scheduled, 1);
        assert_eq!(r.num_launches, 0);
    }

    #[test]
    fn factor_zero_rejected() {
        assert!(CoarsenConfig::new(0).is_err());
    }

    #[test]
    fn kernel_gets_trailing_param_and_reparses() {
        let p = parse(SRC).unwrap();
        let c = apply_coarsen(&p, &CoarsenConfig::new(4).unwrap());
        let k = c.program.kernel("child").unwrap();
        assert_eq!(k.params.last().unwrap().name, "_gDim");
        assert_eq!(parse(&print(&c.program)).unwrap(), c.program);
        // Host-only children are left alone.
        assert_eq!(c.program.kernel("main"), p.kernel("main"));
        assert_eq!(c.program.kernel("parent").unwrap().params, p.kernel("parent").unwrap().params);
        assert!(matches!(&c.manifest[1].action, Action::Skipped(r) if r == "host-launch"));
    }
}
