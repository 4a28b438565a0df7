//! Deterministic pretty-printer. Output re-parses to a structurally equal
//! program; parentheses are emitted only where precedence requires them.

use std::fmt::Write;

use super::ast::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for d in &p.defines {
        let _ = writeln!(out, "#define {} {}", d.name, d.value);
    }
    if !p.defines.is_empty() {
        out.push('\n');
    }
    for g in &p.globals {
        let _ = writeln!(out, "global {} {}[{}];", g.elem, g.name, g.extent);
    }
    if !p.globals.is_empty() {
        out.push('\n');
    }
    for g in &p.glue {
        let _ = writeln!(
            out,
            "glue aggregate({}, {}, {}, {});",
            g.parent,
            g.child,
            g.granularity.keyword(),
            g.group_size
        );
    }
    if !p.glue.is_empty() {
        out.push('\n');
    }
    for (i, k) in p.kernels.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_kernel(&mut out, k);
    }
    out
}

fn print_kernel(out: &mut String, k: &KernelDef) {
    let params: Vec<String> = k.params.iter().map(|p| format!("{} {}", p.ty, p.name)).collect();
    let _ = write!(out, "{} {}({}) ", k.kind.keyword(), k.name, params.join(", "));
    print_block(out, &k.body, 0);
    out.push('\n');
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn print_block(out: &mut String, body: &[Stmt], level: usize) {
    if body.is_empty() {
        out.push_str("{}");
        return;
    }
    out.push_str("{\n");
    for s in body {
        indent(out, level + 1);
        print_stmt(out, s, level + 1);
        out.push('\n');
    }
    indent(out, level);
    out.push('}');
}

pub fn print_stmt_to_string(s: &Stmt) -> String {
    let mut out = String::new();
    print_stmt(&mut out, s, 0);
    out
}

fn print_stmt(out: &mut String, s: &Stmt, level: usize) {
    match &s.kind {
        StmtKind::Decl { ty, name, init } => match init {
            Some(e) => {
                let _ = write!(out, "{ty} {name} = {};", expr_to_string(e));
            }
            None => {
                let _ = write!(out, "{ty} {name};");
            }
        },
        StmtKind::Shared { elem, name, extent } => {
            let _ = write!(out, "shared {} {name}[{extent}];", elem.keyword());
        }
        StmtKind::Assign { target, value } => {
            print_lvalue(out, target);
            let _ = write!(out, " = {};", expr_to_string(value));
        }
        StmtKind::Atomic {
            dest,
            op,
            buf,
            index,
            operands,
        } => {
            if let Some(d) = dest {
                match d.declare {
                    Some(ty) => {
                        let _ = write!(out, "{ty} {} = ", d.name);
                    }
                    None => {
                        let _ = write!(out, "{} = ", d.name);
                    }
                }
            }
            let _ = write!(out, "{}({buf}[{}]", op.keyword(), expr_to_string(index));
            for o in operands {
                let _ = write!(out, ", {}", expr_to_string(o));
            }
            out.push_str(");");
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            let _ = write!(out, "if ({}) ", expr_to_string(cond));
            print_block(out, then_body, level);
            if let Some(e) = else_body {
                out.push_str(" else ");
                if let [only] = e.as_slice() {
                    if matches!(only.kind, StmtKind::If { .. }) {
                        print_stmt(out, only, level);
                        return;
                    }
                }
                print_block(out, e, level);
            }
        }
        StmtKind::While { cond, body } => {
            let _ = write!(out, "while ({}) ", expr_to_string(cond));
            print_block(out, body, level);
        }
        StmtKind::For {
            var,
            init,
            cond,
            step,
            body,
        } => {
            let _ = write!(out, "for (int {var} = {}; {}; ", expr_to_string(init), expr_to_string(cond));
            match &step.kind {
                StmtKind::Assign { target, value } => {
                    print_lvalue(out, target);
                    let _ = write!(out, " = {}", expr_to_string(value));
                }
                other => {
                    let _ = write!(out, "/* bad step {other:?} */");
                }
            }
            out.push_str(") ");
            print_block(out, body, level);
        }
        StmtKind::Block(body) => print_block(out, body, level),
        StmtKind::Region { phase, body } => {
            let _ = write!(out, "region {} ", phase.keyword());
            print_block(out, body, level);
        }
        StmtKind::Barrier => out.push_str("barrier;"),
        StmtKind::Fence => out.push_str("fence;"),
        StmtKind::Sync => out.push_str("sync;"),
        StmtKind::Return => out.push_str("return;"),
        StmtKind::Continue => out.push_str("continue;"),
        StmtKind::Launch(l) => {
            let _ = write!(
                out,
                "launch {}<<<{}, {}>>>({});",
                l.callee,
                expr_to_string(&l.grid),
                expr_to_string(&l.block),
                join_exprs(&l.args)
            );
        }
        StmtKind::Call { callee, args } => {
            let _ = write!(out, "{callee}({});", join_exprs(args));
        }
    }
}

fn print_lvalue(out: &mut String, lv: &LValue) {
    match lv {
        LValue::Var(n) => out.push_str(n),
        LValue::Index { buf, index } => {
            let _ = write!(out, "{buf}[{}]", expr_to_string(index));
        }
    }
}

fn join_exprs(es: &[Expr]) -> String {
    es.iter().map(expr_to_string).collect::<Vec<_>>().join(", ")
}

const UNARY_PREC: u8 = 50;
const ATOM_PREC: u8 = 100;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { .. } | Expr::Cast { .. } => UNARY_PREC,
        // A negative literal prints with a leading `-`, which behaves like a
        // unary operator.
        Expr::Int(v) if *v < 0 => UNARY_PREC,
        Expr::Long(v) if *v < 0 => UNARY_PREC,
        Expr::Float(v) if v.is_sign_negative() => UNARY_PREC,
        _ => ATOM_PREC,
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_wrapped(out: &mut String, e: &Expr, wrap: bool) {
    if wrap {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Long(v) => {
            let _ = write!(out, "{v}L");
        }
        Expr::Float(v) => {
            let _ = write!(out, "{v:?}");
        }
        Expr::Var(n) => out.push_str(n),
        Expr::Index { buf, index } => {
            let _ = write!(out, "{buf}[");
            write_expr(out, index);
            out.push(']');
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            write_wrapped(out, lhs, prec(lhs) < p);
            let _ = write!(out, " {} ", op.symbol());
            write_wrapped(out, rhs, prec(rhs) <= p);
        }
        Expr::Unary { op, operand } => {
            out.push(match op {
                UnOp::Neg => '-',
                UnOp::Not => '!',
            });
            // `- -5` would otherwise read as `--5`; wrap non-atoms.
            write_wrapped(out, operand, prec(operand) <= UNARY_PREC);
        }
        Expr::Cast { ty, operand } => {
            let _ = write!(out, "({})", ty.keyword());
            write_wrapped(out, operand, prec(operand) < UNARY_PREC);
        }
        Expr::Ceil(a) => {
            out.push_str("ceil(");
            write_expr(out, a);
            out.push(')');
        }
        Expr::Ballot(a) => {
            out.push_str("ballot(");
            write_expr(out, a);
            out.push(')');
        }
        Expr::Min(a, b) | Expr::Max(a, b) | Expr::Shfl(a, b) => {
            let name = match e {
                Expr::Min(..) => "min",
                Expr::Max(..) => "max",
                _ => "shfl",
            };
            let _ = write!(out, "{name}({}, {})", expr_to_string(a), expr_to_string(b));
        }
        Expr::Builtin(b, d) => {
            let _ = write!(out, "{}.{}", b.keyword(), d.letter());
        }
        Expr::Dim3(cs) => {
            let _ = write!(out, "dim3({})", join_exprs(cs));
        }
    }
}
