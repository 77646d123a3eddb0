//! Surface syntax tree, as produced by the parser.
//!
//! Contexts, contracts and types are shared with the core form. Every node
//! carries a [`Span`]; equality on nodes ignores spans so that trees parsed
//! from differently formatted text compare equal.

use std::fmt;

use num_bigint::BigInt;

use crate::diag::Span;

/// An ownership context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Context {
    /// A formal context parameter of the enclosing class.
    Param(String),
    This,
    Top,
    Bot,
    /// `*`, only legal inside type arguments.
    Any,
    /// `?`, produced by lookups through a receiver other than `this`.
    Existential,
}

impl Context {
    pub fn is_param(&self) -> bool {
        matches!(self, Context::Param(_))
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::Param(p) => f.write_str(p),
            Context::This => f.write_str("this"),
            Context::Top => f.write_str("top"),
            Context::Bot => f.write_str("bot"),
            Context::Any => f.write_str("*"),
            Context::Existential => f.write_str("?"),
        }
    }
}

/// A validity contract `<V,I>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Contract {
    pub validity: Context,
    pub invalidity: Context,
}

impl Contract {
    pub fn new(validity: Context, invalidity: Context) -> Self {
        Contract {
            validity,
            invalidity,
        }
    }

    /// The implicit contract of every constructor.
    pub fn constructor() -> Self {
        Contract::new(Context::Bot, Context::This)
    }

    pub fn top_top() -> Self {
        Contract::new(Context::Top, Context::Top)
    }

    pub fn map(&self, mut f: impl FnMut(&Context) -> Context) -> Contract {
        Contract::new(f(&self.validity), f(&self.invalidity))
    }
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.validity, self.invalidity)
    }
}

/// The surface spelling of the integer type. All spellings denote the same
/// arbitrary-precision integer type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntSpelling {
    Int,
    Uint,
    Uint256,
}

impl IntSpelling {
    pub fn as_str(self) -> &'static str {
        match self {
            IntSpelling::Int => "int",
            IntSpelling::Uint => "uint",
            IntSpelling::Uint256 => "uint256",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeExpr {
    Class { name: String, args: Vec<Context> },
    Int(IntSpelling),
    Bool,
    Void,
}

impl TypeExpr {
    pub fn class(name: impl Into<String>, args: Vec<Context>) -> Self {
        TypeExpr::Class {
            name: name.into(),
            args,
        }
    }

    pub fn is_void(&self) -> bool {
        matches!(self, TypeExpr::Void)
    }

    pub fn as_class(&self) -> Option<(&str, &[Context])> {
        match self {
            TypeExpr::Class { name, args } => Some((name, args)),
            _ => None,
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Class { name, args } => {
                f.write_str(name)?;
                if !args.is_empty() {
                    f.write_str("<")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(",")?;
                        }
                        write!(f, "{a}")?;
                    }
                    f.write_str(">")?;
                }
                Ok(())
            }
            TypeExpr::Int(s) => f.write_str(s.as_str()),
            TypeExpr::Bool => f.write_str("bool"),
            TypeExpr::Void => f.write_str("void"),
        }
    }
}

/// An integer literal; the original spelling (`1e30`) is kept for printing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntLit {
    pub value: BigInt,
    pub text: String,
}

impl IntLit {
    pub fn from_i64(v: i64) -> Self {
        IntLit {
            value: BigInt::from(v),
            text: v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Lit {
    Int(IntLit),
    Bool(bool),
    Null,
    /// The value of statements and `void` calls.
    Unit,
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lit::Int(i) => f.write_str(&i.text),
            Lit::Bool(b) => write!(f, "{b}"),
            Lit::Null => f.write_str("null"),
            Lit::Unit => f.write_str("()"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
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
    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
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

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
}

impl UnOp {
    pub fn as_str(self) -> &'static str {
        match self {
            UnOp::Not => "!",
            UnOp::Neg => "-",
        }
    }
}

/// A `/** ... */` comment, kept line by line with leading whitespace removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Doc {
    pub lines: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomicBody {
    Expr(Box<Expr>),
    Block(Block),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Lit(Lit),
    /// A local, parameter, or unqualified field of `this`.
    Name(String),
    This,
    New(TypeExpr, Vec<Expr>),
    Assign(Box<Expr>, Box<Expr>),
    CompoundAssign(BinOp, Box<Expr>, Box<Expr>),
    Field(Box<Expr>, String),
    /// `recv.m(args)`; an absent receiver means `this`.
    Call(Option<Box<Expr>>, String, Vec<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Atomic(Option<Contract>, AtomicBody),
    Fork(AtomicBody),
    Valid(Box<Expr>),
    Require(Box<Expr>),
    Emit(String, Vec<Expr>),
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    /// `T x = e;`, `T x;`, or `var x = e;` (type `None`).
    Local {
        ty: Option<TypeExpr>,
        name: String,
        init: Option<Expr>,
    },
    Return(Option<Expr>),
    Throw,
    If(Expr, Block, Option<Block>),
    Block(Block),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    /// `<<`
    StrictInside,
    /// `<=`
    InsideOrEqual,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::StrictInside => "<<",
            Relation::InsideOrEqual => "<=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub lhs: Context,
    pub rel: Relation,
    pub rhs: Context,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Visibility {
    #[default]
    Default,
    Public,
    Private,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub ty: TypeExpr,
    pub name: String,
    pub span: Span,
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        self.ty == other.ty && self.name == other.name
    }
}

#[derive(Debug, Clone)]
pub struct FieldDecl {
    pub is_final: bool,
    pub ty: TypeExpr,
    pub name: String,
    pub init: Option<Expr>,
    pub doc: Option<Doc>,
    pub span: Span,
}

impl PartialEq for FieldDecl {
    fn eq(&self, o: &Self) -> bool {
        self.is_final == o.is_final && self.ty == o.ty && self.name == o.name && self.init == o.init
    }
}

#[derive(Debug, Clone)]
pub struct MethodDecl {
    pub visibility: Visibility,
    pub ret: TypeExpr,
    pub name: String,
    pub params: Vec<Param>,
    pub contract: Contract,
    pub contract_span: Span,
    pub body: Block,
    pub doc: Option<Doc>,
    pub span: Span,
}

impl PartialEq for MethodDecl {
    fn eq(&self, o: &Self) -> bool {
        self.ret == o.ret
            && self.name == o.name
            && self.params == o.params
            && self.contract == o.contract
            && self.body == o.body
    }
}

#[derive(Debug, Clone)]
pub struct CtorDecl {
    pub params: Vec<Param>,
    pub body: Block,
    pub doc: Option<Doc>,
    pub span: Span,
}

impl PartialEq for CtorDecl {
    fn eq(&self, o: &Self) -> bool {
        self.params == o.params && self.body == o.body
    }
}

#[derive(Debug, Clone)]
pub struct ClassDecl {
    pub name: String,
    pub params: Vec<String>,
    pub superclass: Option<TypeExpr>,
    pub constraints: Vec<Constraint>,
    pub invariant: Option<Expr>,
    pub fields: Vec<FieldDecl>,
    pub methods: Vec<MethodDecl>,
    pub ctors: Vec<CtorDecl>,
    pub doc: Option<Doc>,
    pub span: Span,
}

impl PartialEq for ClassDecl {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.params == o.params
            && self.superclass == o.superclass
            && self.constraints == o.constraints
            && self.invariant == o.invariant
            && self.fields == o.fields
            && self.methods == o.methods
            && self.ctors == o.ctors
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub classes: Vec<ClassDecl>,
    pub main: Option<Block>,
}

impl Program {
    pub fn class(&self, name: &str) -> Option<&ClassDecl> {
        self.classes.iter().find(|c| c.name == name)
    }
}
