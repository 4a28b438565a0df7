//! Abstract syntax of the kernel language.
//!
//! Every pass consumes and produces these values. Structural equality
//! ignores source positions so that re-parsed output compares equal to the
//! tree it was printed from.

use std::fmt;

/// Source position of a statement or item (1-based).
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

// Positions never participate in structural comparison.
impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    Int,
    Long,
    Float,
}

impl ScalarType {
    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::Int => "int",
            ScalarType::Long => "long",
            ScalarType::Float => "float",
        }
    }
}

/// A local, parameter or buffer element type. `Ptr` is a buffer handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    Scalar(ScalarType),
    Ptr(ScalarType),
}

impl Type {
    pub const INT: Type = Type::Scalar(ScalarType::Int);
    pub const LONG: Type = Type::Scalar(ScalarType::Long);
    pub const FLOAT: Type = Type::Scalar(ScalarType::Float);

    pub fn is_ptr(self) -> bool {
        matches!(self, Type::Ptr(_))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar(s) => f.write_str(s.keyword()),
            Type::Ptr(s) => write!(f, "{}*", s.keyword()),
        }
    }
}

/// `#define NAME value`: compile-time integer constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Define {
    pub name: String,
    pub value: i64,
    pub span: Span,
}

/// `global T name[extent];`: a device buffer. Datasets may resize it.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDecl {
    pub name: String,
    pub elem: Type,
    pub extent: usize,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Block,
    MultiBlock,
    Grid,
}

impl Granularity {
    pub fn keyword(self) -> &'static str {
        match self {
            Granularity::Block => "block",
            Granularity::MultiBlock => "multiblock",
            Granularity::Grid => "grid",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "block" => Some(Granularity::Block),
            "multiblock" => Some(Granularity::MultiBlock),
            "grid" => Some(Granularity::Grid),
            _ => None,
        }
    }
}

/// Host-side setup registered by the aggregation pass:
/// `glue aggregate(parent, child, granularity, group_size);`
///
/// The runtime sizes and zeroes the `_agg_<child>_*` buffer family whenever
/// a `parent` grid is launched and, for grid granularity, launches
/// `<child>_agg` from the host once the parent grid completes.
#[derive(Debug, Clone, PartialEq)]
pub struct GlueDecl {
    pub parent: String,
    pub child: String,
    pub granularity: Granularity,
    pub group_size: u32,
    pub span: Span,
}

impl GlueDecl {
    pub fn family(&self) -> String {
        agg_family(&self.child)
    }

    pub fn agg_kernel(&self) -> String {
        format!("{}_agg", self.child)
    }
}

pub fn agg_family(child: &str) -> String {
    format!("_agg_{child}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// `kernel`: launchable grid entry point.
    Entry,
    /// `device`: callable serially from a thread.
    Device,
    /// `host`: host driver; its launches are host launches.
    Host,
}

impl KernelKind {
    pub fn keyword(self) -> &'static str {
        match self {
            KernelKind::Entry => "kernel",
            KernelKind::Device => "device",
            KernelKind::Host => "host",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

impl Param {
    pub fn new(name: impl Into<String>, ty: Type) -> Self {
        Param {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelFlags {
    pub uses_barrier: bool,
    pub uses_shared_mem: bool,
    pub uses_warp_primitive: bool,
    pub contains_launch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelDef {
    pub name: String,
    pub kind: KernelKind,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub flags: KernelFlags,
    pub span: Span,
}

impl KernelDef {
    pub fn new(name: impl Into<String>, kind: KernelKind, params: Vec<Param>, body: Vec<Stmt>) -> Self {
        let mut k = KernelDef {
            name: name.into(),
            kind,
            params,
            body,
            flags: KernelFlags::default(),
            span: Span::default(),
        };
        k.refresh_flags();
        k
    }

    /// Recompute the feature flags from the body.
    pub fn refresh_flags(&mut self) {
        self.flags = super::visit::scan_flags(&self.body);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt {
            kind,
            span: Span::default(),
        }
    }

    pub fn at(kind: StmtKind, span: Span) -> Self {
        Stmt { kind, span }
    }
}

/// The grid phase a region of generated code is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Parent,
    Launch,
    Agg,
    Disagg,
    Child,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Parent, Phase::Launch, Phase::Agg, Phase::Disagg, Phase::Child];

    pub fn keyword(self) -> &'static str {
        match self {
            Phase::Parent => "parent",
            Phase::Launch => "launch",
            Phase::Agg => "agg",
            Phase::Disagg => "disagg",
            Phase::Child => "child",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Phase::ALL.into_iter().find(|p| p.keyword() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomicOp {
    Add,
    Add64,
    Max,
    Cas,
}

impl AtomicOp {
    pub fn keyword(self) -> &'static str {
        match self {
            AtomicOp::Add => "atomicAdd",
            AtomicOp::Add64 => "atomicAdd64",
            AtomicOp::Max => "atomicMax",
            AtomicOp::Cas => "atomicCAS",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "atomicAdd" => Some(AtomicOp::Add),
            "atomicAdd64" => Some(AtomicOp::Add64),
            "atomicMax" => Some(AtomicOp::Max),
            "atomicCAS" => Some(AtomicOp::Cas),
            _ => None,
        }
    }

    /// Number of value operands after the target cell.
    pub fn operand_count(self) -> usize {
        match self {
            AtomicOp::Cas => 2,
            _ => 1,
        }
    }
}

/// Where an atomic's old value goes: `int x = atomicAdd(..)` or `x = atomicAdd(..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDest {
    pub name: String,
    pub declare: Option<Type>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(String),
    Index { buf: String, index: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchStmt {
    pub callee: String,
    pub grid: Expr,
    pub block: Expr,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Decl {
        ty: Type,
        name: String,
        init: Option<Expr>,
    },
    Shared {
        elem: ScalarType,
        name: String,
        extent: u32,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    Atomic {
        dest: Option<AtomicDest>,
        op: AtomicOp,
        buf: String,
        index: Expr,
        operands: Vec<Expr>,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Option<Vec<Stmt>>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    /// `for (int var = init; cond; step) { body }`
    For {
        var: String,
        init: Expr,
        cond: Expr,
        step: Box<Stmt>,
        body: Vec<Stmt>,
    },
    /// `{ ... }`: nested scope.
    Block(Vec<Stmt>),
    /// `region phase { ... }`: attributes cost to a phase; opens no scope.
    Region {
        phase: Phase,
        body: Vec<Stmt>,
    },
    Barrier,
    Fence,
    /// Host only: wait until the device is idle.
    Sync,
    Return,
    Continue,
    Launch(LaunchStmt),
    Call {
        callee: String,
        args: Vec<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    BitAnd,
    BitOr,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; higher binds tighter. All binary operators are
    /// left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::BitOr => 3,
            BinOp::BitAnd => 4,
            BinOp::Eq | BinOp::Ne => 5,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 6,
            BinOp::Shl | BinOp::Shr => 7,
            BinOp::Add | BinOp::Sub => 8,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinVar {
    BlockIdx,
    ThreadIdx,
    GridDim,
    BlockDim,
}

impl BuiltinVar {
    pub fn keyword(self) -> &'static str {
        match self {
            BuiltinVar::BlockIdx => "blockIdx",
            BuiltinVar::ThreadIdx => "threadIdx",
            BuiltinVar::GridDim => "gridDim",
            BuiltinVar::BlockDim => "blockDim",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "blockIdx" => Some(BuiltinVar::BlockIdx),
            "threadIdx" => Some(BuiltinVar::ThreadIdx),
            "gridDim" => Some(BuiltinVar::GridDim),
            "blockDim" => Some(BuiltinVar::BlockDim),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    X,
    Y,
    Z,
}

impl Dim {
    pub fn index(self) -> usize {
        match self {
            Dim::X => 0,
            Dim::Y => 1,
            Dim::Z => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Dim::X => 'x',
            Dim::Y => 'y',
            Dim::Z => 'z',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i32),
    Long(i64),
    Float(f32),
    Var(String),
    Index { buf: String, index: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Unary { op: UnOp, operand: Box<Expr> },
    Cast { ty: ScalarType, operand: Box<Expr> },
    Ceil(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Builtin(BuiltinVar, Dim),
    Dim3(Vec<Expr>),
    Ballot(Box<Expr>),
    Shfl(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn int(v: i32) -> Expr {
        Expr::Int(v)
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn index(buf: impl Into<String>, index: Expr) -> Expr {
        Expr::Index {
            buf: buf.into(),
            index: Box::new(index),
        }
    }

    pub fn cast(ty: ScalarType, operand: Expr) -> Expr {
        Expr::Cast {
            ty,
            operand: Box::new(operand),
        }
    }

    pub fn builtin(b: BuiltinVar) -> Expr {
        Expr::Builtin(b, Dim::X)
    }

    pub fn is_int_literal(&self) -> bool {
        matches!(self, Expr::Int(_) | Expr::Long(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub defines: Vec<Define>,
    pub globals: Vec<GlobalDecl>,
    pub glue: Vec<GlueDecl>,
    pub kernels: Vec<KernelDef>,
}

impl Program {
    pub fn kernel(&self, name: &str) -> Option<&KernelDef> {
        self.kernels.iter().find(|k| k.name == name)
    }

    pub fn kernel_mut(&mut self, name: &str) -> Option<&mut KernelDef> {
        self.kernels.iter_mut().find(|k| k.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDecl> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn define(&self, name: &str) -> Option<i64> {
        self.defines.iter().find(|d| d.name == name).map(|d| d.value)
    }

    /// Insert or overwrite a `#define`.
    pub fn set_define(&mut self, name: &str, value: i64) {
        match self.defines.iter_mut().find(|d| d.name == name) {
            Some(d) => d.value = value,
            None => self.defines.push(Define {
                name: name.to_string(),
                value,
                span: Span::default(),
            }),
        }
    }

    /// Declare a global unless one with that name exists.
    pub fn ensure_global(&mut self, name: &str, elem: Type, extent: usize) {
        if self.global(name).is_none() {
            self.globals.push(GlobalDecl {
                name: name.to_string(),
                elem,
                extent,
                span: Span::default(),
            });
        }
    }

    pub fn refresh_flags(&mut self) {
        for k in &mut self.kernels {
            k.refresh_flags();
        }
    }
}
