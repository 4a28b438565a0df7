//! Recursive-descent parser for `.mk` sources.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.program()
}

/// Parse a standalone expression (used by tests and the CLI).
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::new(self.span(), msg))
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) | Tok::Long(v) => format!("`{v}`"),
            Tok::Float(v) => format!("`{v}`"),
            Tok::Hash => "`#`".into(),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", Self::describe(self.peek())))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {}", Self::describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", Self::describe(&t))),
        }
    }

    fn int_literal(&mut self) -> PResult<i64> {
        let neg = self.eat_punct("-");
        match self.bump() {
            Tok::Int(v) | Tok::Long(v) => Ok(if neg { -v } else { v }),
            t => {
                self.pos -= 1;
                self.err(format!("expected integer, found {}", Self::describe(&t)))
            }
        }
    }

    fn expect_eof(&self) -> PResult<()> {
        match self.peek() {
            Tok::Eof => Ok(()),
            t => self.err(format!("unexpected {}", Self::describe(t))),
        }
    }

    fn scalar_kw(&self) -> Option<ScalarType> {
        match self.peek() {
            Tok::Ident(s) => match s.as_str() {
                "int" => Some(ScalarType::Int),
                "long" => Some(ScalarType::Long),
                "float" => Some(ScalarType::Float),
                _ => None,
            },
            _ => None,
        }
    }

    fn ty(&mut self) -> PResult<Type> {
        match self.scalar_kw() {
            Some(s) => {
                self.bump();
                Ok(if self.eat_punct("*") { Type::Ptr(s) } else { Type::Scalar(s) })
            }
            None => self.err(format!("expected type, found {}", Self::describe(self.peek()))),
        }
    }

    // ---- items ----

    fn program(&mut self) -> PResult<Program> {
        let mut prog = Program::default();
        loop {
            let span = self.span();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Hash => {
                    self.bump();
                    self.expect_kw("define")?;
                    let name = self.ident()?;
                    let value = self.int_literal()?;
                    prog.defines.push(Define { name, value, span });
                }
                Tok::Ident(kw) => match kw.as_str() {
                    "global" => {
                        self.bump();
                        let elem = self.ty()?;
                        let name = self.ident()?;
                        self.expect_punct("[")?;
                        let extent = self.int_literal()?;
                        if extent < 0 {
                            return self.err("negative buffer extent");
                        }
                        self.expect_punct("]")?;
                        self.expect_punct(";")?;
                        prog.globals.push(GlobalDecl {
                            name,
                            elem,
                            extent: extent as usize,
                            span,
                        });
                    }
                    "glue" => {
                        self.bump();
                        self.expect_kw("aggregate")?;
                        self.expect_punct("(")?;
                        let parent = self.ident()?;
                        self.expect_punct(",")?;
                        let child = self.ident()?;
                        self.expect_punct(",")?;
                        let gspan = self.span();
                        let g = self.ident()?;
                        let granularity = Granularity::from_keyword(&g)
                            .ok_or_else(|| ParseError::new(gspan, format!("unknown granularity `{g}`")))?;
                        self.expect_punct(",")?;
                        let group_size = self.int_literal()?;
                        self.expect_punct(")")?;
                        self.expect_punct(";")?;
                        prog.glue.push(GlueDecl {
                            parent,
                            child,
                            granularity,
                            group_size: group_size.max(0) as u32,
                            span,
                        });
                    }
                    "kernel" | "device" | "host" => {
                        let kind = match kw.as_str() {
                            "kernel" => KernelKind::Entry,
                            "device" => KernelKind::Device,
                            _ => KernelKind::Host,
                        };
                        self.bump();
                        let mut k = self.kernel(kind)?;
                        k.span = span;
                        prog.kernels.push(k);
                    }
                    _ => return self.err(format!("expected item, found `{kw}`")),
                },
                t => return self.err(format!("expected item, found {}", Self::describe(&t))),
            }
        }
        Ok(prog)
    }

    fn kernel(&mut self, kind: KernelKind) -> PResult<KernelDef> {
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let ty = self.ty()?;
                let pname = self.ident()?;
                params.push(Param::new(pname, ty));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(KernelDef::new(name, kind, params, body))
    }

    // ---- statements ----

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.err("unterminated block");
            }
            out.push(self.stmt()?);
        }
        self.bump();
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = self.stmt_kind()?;
        Ok(Stmt::at(kind, span))
    }

    fn simple_kw(&mut self, kind: StmtKind) -> PResult<StmtKind> {
        self.bump();
        self.expect_punct(";")?;
        Ok(kind)
    }

    fn stmt_kind(&mut self) -> PResult<StmtKind> {
        if self.is_punct("{") {
            return Ok(StmtKind::Block(self.block()?));
        }
        if self.scalar_kw().is_some() {
            let ty = self.ty()?;
            let name = self.ident()?;
            if self.eat_punct(";") {
                return Ok(StmtKind::Decl { ty, name, init: None });
            }
            self.expect_punct("=")?;
            if let Some(op) = self.atomic_kw() {
                let dest = AtomicDest {
                    name,
                    declare: Some(ty),
                };
                return self.atomic(op, Some(dest));
            }
            let init = self.expr()?;
            self.expect_punct(";")?;
            return Ok(StmtKind::Decl {
                ty,
                name,
                init: Some(init),
            });
        }
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            t => return self.err(format!("expected statement, found {}", Self::describe(t))),
        };
        if let Some(op) = self.atomic_kw() {
            return self.atomic(op, None);
        }
        match kw.as_str() {
            "barrier" => return self.simple_kw(StmtKind::Barrier),
            "fence" => return self.simple_kw(StmtKind::Fence),
            "sync" => return self.simple_kw(StmtKind::Sync),
            "return" => return self.simple_kw(StmtKind::Return),
            "continue" => return self.simple_kw(StmtKind::Continue),
            "if" => return self.if_stmt(),
            "while" => {
                self.bump();
                self.expect_punct("(")?;
                let cond = self.expr()?;
                self.expect_punct(")")?;
                let body = self.block()?;
                return Ok(StmtKind::While { cond, body });
            }
            "for" => return self.for_stmt(),
            "shared" => {
                self.bump();
                let elem = match self.scalar_kw() {
                    Some(s) => {
                        self.bump();
                        s
                    }
                    None => return self.err("expected element type after `shared`"),
                };
                let name = self.ident()?;
                self.expect_punct("[")?;
                let extent = self.int_literal()?;
                self.expect_punct("]")?;
                self.expect_punct(";")?;
                if extent < 0 {
                    return self.err("negative shared extent");
                }
                return Ok(StmtKind::Shared {
                    elem,
                    name,
                    extent: extent as u32,
                });
            }
            "region" => {
                self.bump();
                let pspan = self.span();
                let p = self.ident()?;
                let phase =
                    Phase::from_keyword(&p).ok_or_else(|| ParseError::new(pspan, format!("unknown phase `{p}`")))?;
                let body = self.block()?;
                return Ok(StmtKind::Region { phase, body });
            }
            "launch" => {
                self.bump();
                let callee = self.ident()?;
                self.expect_punct("<<<")?;
                let grid = self.expr()?;
                self.expect_punct(",")?;
                let block = self.expr()?;
                self.expect_punct(">>>")?;
                let args = self.call_args()?;
                self.expect_punct(";")?;
                return Ok(StmtKind::Launch(LaunchStmt {
                    callee,
                    grid,
                    block,
                    args,
                }));
            }
            _ => {}
        }
        // identifier-led: assignment or serial call
        let name = self.ident()?;
        if self.is_punct("(") {
            let args = self.call_args()?;
            self.expect_punct(";")?;
            return Ok(StmtKind::Call { callee: name, args });
        }
        let target = if self.eat_punct("[") {
            let index = self.expr()?;
            self.expect_punct("]")?;
            LValue::Index { buf: name.clone(), index }
        } else {
            LValue::Var(name.clone())
        };
        let kind = self.assign_tail(target)?;
        self.expect_punct(";")?;
        Ok(kind)
    }

    /// After an lvalue: `= e`, `+= e`, `-= e`, `++`, or `= atomic(..)`.
    fn assign_tail(&mut self, target: LValue) -> PResult<StmtKind> {
        let current = || match &target {
            LValue::Var(n) => Expr::Var(n.clone()),
            LValue::Index { buf, index } => Expr::index(buf.clone(), index.clone()),
        };
        let value = if self.eat_punct("++") {
            Expr::bin(BinOp::Add, current(), Expr::Int(1))
        } else if self.eat_punct("+=") {
            Expr::bin(BinOp::Add, current(), self.expr()?)
        } else if self.eat_punct("-=") {
            Expr::bin(BinOp::Sub, current(), self.expr()?)
        } else {
            self.expect_punct("=")?;
            if let (Some(op), LValue::Var(n)) = (self.atomic_kw(), &target) {
                let dest = AtomicDest {
                    name: n.clone(),
                    declare: None,
                };
                // atomic() consumes the trailing `;`; put it back for the caller.
                let k = self.atomic(op, Some(dest))?;
                self.pos -= 1;
                return Ok(k);
            }
            self.expr()?
        };
        Ok(StmtKind::Assign { target, value })
    }

    fn atomic_kw(&self) -> Option<AtomicOp> {
        match self.peek() {
            Tok::Ident(s) if matches!(self.peek_at(1), Tok::Punct("(")) => AtomicOp::from_keyword(s),
            _ => None,
        }
    }

    fn atomic(&mut self, op: AtomicOp, dest: Option<AtomicDest>) -> PResult<StmtKind> {
        self.bump();
        self.expect_punct("(")?;
        let buf = self.ident()?;
        self.expect_punct("[")?;
        let index = self.expr()?;
        self.expect_punct("]")?;
        let mut operands = Vec::new();
        while self.eat_punct(",") {
            operands.push(self.expr()?);
        }
        self.expect_punct(")")?;
        if operands.len() != op.operand_count() {
            return self.err(format!(
                "`{}` takes {} operand(s) after the target, found {}",
                op.keyword(),
                op.operand_count(),
                operands.len()
            ));
        }
        self.expect_punct(";")?;
        Ok(StmtKind::Atomic {
            dest,
            op,
            buf,
            index,
            operands,
        })
    }

    fn if_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("if")?;
        self.expect_punct("(")?;
        let cond = self.expr()?;
        self.expect_punct(")")?;
        let then_body = self.block()?;
        let else_body = if self.eat_kw("else") {
            if self.is_kw("if") {
                let span = self.span();
                let k = self.if_stmt()?;
                Some(vec![Stmt::at(k, span)])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If {
            cond,
            then_body,
            else_body,
        })
    }

    fn for_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("for")?;
        self.expect_punct("(")?;
        self.expect_kw("int")?;
        let var = self.ident()?;
        self.expect_punct("=")?;
        let init = self.expr()?;
        self.expect_punct(";")?;
        let cond = self.expr()?;
        self.expect_punct(";")?;
        let sspan = self.span();
        let sv = self.ident()?;
        let step = self.assign_tail(LValue::Var(sv))?;
        if matches!(step, StmtKind::Atomic { .. }) {
            return Err(ParseError::new(sspan, "atomic not allowed as loop step"));
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(StmtKind::For {
            var,
            init,
            cond,
            step: Box::new(Stmt::at(step, sspan)),
            body,
        })
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    // ---- expressions ----

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binop(&self) -> Option<BinOp> {
        let p = match self.peek() {
            Tok::Punct(p) => *p,
            _ => return None,
        };
        Some(match p {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<<" => BinOp::Shl,
            ">>" => BinOp::Shr,
            "&" => BinOp::BitAnd,
            "|" => BinOp::BitOr,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_punct("-") {
            // Negative literals fold so that printed `-5` re-parses identically.
            return Ok(match self.peek().clone() {
                Tok::Int(v) => {
                    self.bump();
                    Expr::Int(i32::try_from(-v).map_err(|_| ParseError::new(self.span(), "literal out of range"))?)
                }
                Tok::Long(v) => {
                    self.bump();
                    Expr::Long(-v)
                }
                Tok::Float(v) => {
                    self.bump();
                    Expr::Float(-v)
                }
                _ => Expr::Unary {
                    op: UnOp::Neg,
                    operand: Box::new(self.unary()?),
                },
            });
        }
        if self.eat_punct("!") {
            return Ok(Expr::Unary {
                op: UnOp::Not,
                operand: Box::new(self.unary()?),
            });
        }
        if self.is_punct("(") {
            if let Tok::Ident(s) = self.peek_at(1) {
                let ty = match s.as_str() {
                    "int" => Some(ScalarType::Int),
                    "long" => Some(ScalarType::Long),
                    "float" => Some(ScalarType::Float),
                    _ => None,
                };
                if let (Some(ty), Tok::Punct(")")) = (ty, self.peek_at(2)) {
                    self.pos += 3;
                    return Ok(Expr::cast(ty, self.unary()?));
                }
            }
        }
        self.primary()
    }

    fn paren_args(&mut self, n: usize, what: &str) -> PResult<Vec<Expr>> {
        let span = self.span();
        let args = self.call_args()?;
        if args.len() != n {
            return Err(ParseError::new(span, format!("`{what}` takes {n} argument(s)")));
        }
        Ok(args)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.bump() {
            Tok::Int(v) => Ok(Expr::Int(
                i32::try_from(v).map_err(|_| ParseError::new(span, "int literal out of range (use L suffix)"))?,
            )),
            Tok::Long(v) => Ok(Expr::Long(v)),
            Tok::Float(v) => Ok(Expr::Float(v)),
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(b) = BuiltinVar::from_keyword(&name) {
                    self.expect_punct(".")?;
                    let dspan = self.span();
                    let d = self.ident()?;
                    let dim = match d.as_str() {
                        "x" => Dim::X,
                        "y" => Dim::Y,
                        "z" => Dim::Z,
                        _ => return Err(ParseError::new(dspan, format!("unknown component `{d}`"))),
                    };
                    return Ok(Expr::Builtin(b, dim));
                }
                if self.is_punct("(") {
                    let bx = Box::new;
                    return match name.as_str() {
                        "ceil" => Ok(Expr::Ceil(bx(self.paren_args(1, "ceil")?.remove(0)))),
                        "ballot" => Ok(Expr::Ballot(bx(self.paren_args(1, "ballot")?.remove(0)))),
                        "min" | "max" | "shfl" => {
                            let mut a = self.paren_args(2, &name)?;
                            let (x, y) = (bx(a.remove(0)), bx(a.remove(0)));
                            Ok(match name.as_str() {
                                "min" => Expr::Min(x, y),
                                "max" => Expr::Max(x, y),
                                _ => Expr::Shfl(x, y),
                            })
                        }
                        "dim3" => {
                            let a = self.call_args()?;
                            if a.is_empty() || a.len() > 3 {
                                return Err(ParseError::new(span, "`dim3` takes 1 to 3 components"));
                            }
                            Ok(Expr::Dim3(a))
                        }
                        _ => Err(ParseError::new(span, format!("`{name}` is not an expression function"))),
                    };
                }
                if self.eat_punct("[") {
                    let index = self.expr()?;
                    self.expect_punct("]")?;
                    return Ok(Expr::index(name, index));
                }
                Ok(Expr::Var(name))
            }
            t => Err(ParseError::new(span, format!("expected expression, found {}", Self::describe(&t)))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_launch_with_chevrons() {
        let p = parse_program(
            "kernel c(int n) {}\nkernel p(int n) { launch c<<<(n + 31) / 32, 32>>>(n); }",
        )
        .unwrap();
        let k = p.kernel("p").unwrap();
        assert!(k.flags.contains_launch);
        match &k.body[0].kind {
            StmtKind::Launch(l) => {
                assert_eq!(l.callee, "c");
                assert_eq!(l.block, Expr::Int(32));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(k.body[0].span.line, 2);
    }

    #[test]
    fn precedence_and_casts() {
        let e = parse_expr("ceil(n / (float)b) + 1 * 2").unwrap();
        let expect = Expr::bin(
            BinOp::Add,
            Expr::Ceil(Box::new(Expr::bin(
                BinOp::Div,
                Expr::var("n"),
                Expr::cast(ScalarType::Float, Expr::var("b")),
            ))),
            Expr::bin(BinOp::Mul, Expr::Int(1), Expr::Int(2)),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn atomics_with_destinations() {
        let p = parse_program(
            "global long c[1];\nkernel k() { long o = atomicAdd64(c[0], 4294967296L + 3L); o = atomicAdd64(c[0], 1L); atomicAdd64(c[0], 2L); }",
        )
        .unwrap();
        let body = &p.kernels[0].body;
        assert!(matches!(&body[0].kind, StmtKind::Atomic { dest: Some(d), .. } if d.declare == Some(Type::LONG)));
        assert!(matches!(&body[1].kind, StmtKind::Atomic { dest: Some(d), .. } if d.declare.is_none()));
        assert!(matches!(&body[2].kind, StmtKind::Atomic { dest: None, .. }));
    }

    #[test]
    fn syntax_error_reports_position() {
        let e = parse_program("kernel k() {\n  int x = ;\n}").unwrap_err();
        assert_eq!((e.span.line, e.span.col), (2, 11));
    }

    #[test]
    fn increments_desugar() {
        let p = parse_program("kernel k() { int i = 0; i++; i += 2; for (int j = 0; j < 4; j++) { } }").unwrap();
        assert_eq!(
            p.kernels[0].body[1].kind,
            StmtKind::Assign {
                target: LValue::Var("i".into()),
                value: Expr::bin(BinOp::Add, Expr::var("i"), Expr::Int(1)),
            }
        );
    }
}
