//! Recursive-descent parser for the surface grammar.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use crate::diag::{Code, Diagnostic, Span};

/// Result of a successful parse: the program plus any warnings.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub program: Program,
    pub warnings: Vec<Diagnostic>,
}

pub fn parse_program(src: &str) -> Result<Parsed, Vec<Diagnostic>> {
    let toks = tokenize(src).map_err(|d| vec![d])?;
    let mut p = Parser::new(toks);
    match p.program() {
        Ok(program) => Ok(Parsed {
            program,
            warnings: p.warnings,
        }),
        Err(d) => Err(vec![d]),
    }
}

/// Parses a standalone `<ctx,ctx>` contract, normalizing `top` in the
/// invalidity position to `bot`.
pub fn parse_contract(src: &str) -> Result<Contract, Diagnostic> {
    let toks = tokenize(src)?;
    let mut p = Parser::new(toks);
    let (c, _) = p.contract()?;
    p.expect(Tok::Eof)?;
    Ok(c)
}

/// Parses a single expression; used by tests and tooling.
pub fn parse_expr(src: &str) -> Result<Expr, Diagnostic> {
    let toks = tokenize(src)?;
    let mut p = Parser::new(toks);
    let e = p.expr()?;
    p.expect(Tok::Eof)?;
    Ok(e)
}

const RESERVED: &[&str] = &[
    "class", "extends", "where", "inv", "final", "public", "private", "main", "return", "throw",
    "if", "else", "var", "new", "atomic", "fork", "valid", "require", "emit", "this", "true",
    "false", "null", "int", "uint", "uint256", "bool", "void",
];

type PResult<T> = Result<T, Diagnostic>;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    warnings: Vec<Diagnostic>,
    class_name: Option<String>,
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Parser {
            toks,
            pos: 0,
            warnings: Vec::new(),
            class_name: None,
        }
    }

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

    fn doc(&self) -> Option<Doc> {
        self.toks[self.pos].doc.clone()
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::new(Code::Parse, self.span(), msg))
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.err(format!(
                "expected {}, found {}",
                t.describe(),
                self.peek().describe()
            ))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {}", self.peek().describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {}", other.describe())),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut prog = Program::default();
        loop {
            if self.at_kw("class") {
                prog.classes.push(self.class_decl()?);
            } else if self.at_kw("main") {
                if prog.main.is_some() {
                    return self.err("duplicate `main` block");
                }
                self.bump();
                let body = self.block()?;
                check_returns(&body, true)?;
                prog.main = Some(body);
            } else if self.at(&Tok::Eof) {
                return Ok(prog);
            } else {
                return self.err(format!(
                    "expected `class` or `main`, found {}",
                    self.peek().describe()
                ));
            }
        }
    }

    fn class_decl(&mut self) -> PResult<ClassDecl> {
        let doc = self.doc();
        let span = self.span();
        self.expect_kw("class")?;
        let name = self.ident()?;
        self.expect(Tok::LBracket)?;
        let mut params = vec![self.ident()?];
        while self.eat(&Tok::Comma) {
            params.push(self.ident()?);
        }
        self.expect(Tok::RBracket)?;
        let superclass = if self.eat_kw("extends") {
            Some(self.type_expr()?)
        } else {
            None
        };
        let mut constraints = Vec::new();
        if self.eat_kw("where") {
            loop {
                constraints.push(self.constraint()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::LBrace)?;
        self.class_name = Some(name.clone());
        let mut class = ClassDecl {
            name,
            params,
            superclass,
            constraints,
            invariant: None,
            fields: Vec::new(),
            methods: Vec::new(),
            ctors: Vec::new(),
            doc,
            span,
        };
        while !self.at(&Tok::RBrace) {
            if self.at(&Tok::Eof) {
                return self.err("unterminated class body");
            }
            self.member(&mut class)?;
        }
        self.bump();
        self.class_name = None;
        Ok(class)
    }

    fn constraint(&mut self) -> PResult<Constraint> {
        let lhs = self.context()?;
        let rel = match self.bump() {
            Tok::Shl => Relation::StrictInside,
            Tok::Le => Relation::InsideOrEqual,
            other => {
                return Err(Diagnostic::new(
                    Code::Parse,
                    self.toks[self.pos.saturating_sub(1)].span,
                    format!("expected `<<` or `<=`, found {}", other.describe()),
                ))
            }
        };
        let rhs = self.context()?;
        Ok(Constraint { lhs, rel, rhs })
    }

    fn member(&mut self, class: &mut ClassDecl) -> PResult<()> {
        let doc = self.doc();
        let span = self.span();
        if self.eat_kw("inv") {
            let e = self.expr()?;
            self.expect(Tok::Semi)?;
            class.invariant = Some(match class.invariant.take() {
                None => e,
                Some(prev) => {
                    let sp = prev.span;
                    Expr::new(ExprKind::Binary(BinOp::And, Box::new(prev), Box::new(e)), sp)
                }
            });
            return Ok(());
        }
        let visibility = if self.eat_kw("public") {
            Visibility::Public
        } else if self.eat_kw("private") {
            Visibility::Private
        } else {
            Visibility::Default
        };
        let is_final = self.eat_kw("final");
        if !is_final
            && matches!(self.peek(), Tok::Ident(s) if Some(s) == self.class_name.as_ref())
            && self.peek_at(1) == &Tok::LParen
        {
            self.bump();
            let params = self.params()?;
            let body = self.block()?;
            check_returns(&body, true)?;
            class.ctors.push(CtorDecl {
                params,
                body,
                doc,
                span,
            });
            return Ok(());
        }
        let ty = self.type_expr()?;
        let name_span = self.span();
        let name = self.ident()?;
        if self.at(&Tok::LParen) {
            if is_final {
                return self.err("methods cannot be `final`");
            }
            let params = self.params()?;
            let contract_span = self.span();
            let (contract, _) = self.contract()?;
            let body = self.block()?;
            check_returns(&body, true)?;
            class.methods.push(MethodDecl {
                visibility,
                ret: ty,
                name,
                params,
                contract,
                contract_span,
                body,
                doc,
                span: name_span,
            });
        } else {
            let init = if self.eat(&Tok::Assign) {
                Some(self.expr()?)
            } else {
                None
            };
            self.expect(Tok::Semi)?;
            class.fields.push(FieldDecl {
                is_final,
                ty,
                name,
                init,
                doc,
                span: name_span,
            });
        }
        Ok(())
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let span = self.span();
                let ty = self.type_expr()?;
                let name = self.ident()?;
                out.push(Param { ty, name, span });
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(out)
    }

    /// `<V,I>`. Returns the contract and whether `top` was normalized.
    fn contract(&mut self) -> PResult<(Contract, bool)> {
        let start = self.span();
        self.expect(Tok::Lt)?;
        let v_span = self.span();
        let validity = self.context()?;
        self.expect(Tok::Comma)?;
        let i_span = self.span();
        let mut invalidity = self.context()?;
        self.expect(Tok::Gt)?;
        if validity == Context::Any {
            return Err(Diagnostic::new(
                Code::Parse,
                v_span,
                "`*` is not allowed in a contract",
            ));
        }
        if invalidity == Context::Any {
            return Err(Diagnostic::new(
                Code::Parse,
                i_span,
                "`*` is not allowed in a contract",
            ));
        }
        let mut normalized = false;
        if invalidity == Context::Top {
            invalidity = Context::Bot;
            normalized = true;
            self.warnings.push(Diagnostic::new(
                Code::TopInvalidity,
                start,
                "`top` in invalidity position is read as `bot`",
            ));
        }
        Ok((Contract::new(validity, invalidity), normalized))
    }

    fn context(&mut self) -> PResult<Context> {
        match self.peek().clone() {
            Tok::Star => {
                self.bump();
                Ok(Context::Any)
            }
            Tok::Ident(s) => {
                let c = match s.as_str() {
                    "this" => Context::This,
                    "top" => Context::Top,
                    "bot" => Context::Bot,
                    _ if RESERVED.contains(&s.as_str()) => {
                        return self.err(format!("expected context, found `{s}`"))
                    }
                    _ => Context::Param(s),
                };
                self.bump();
                Ok(c)
            }
            other => self.err(format!("expected context, found {}", other.describe())),
        }
    }

    fn type_expr(&mut self) -> PResult<TypeExpr> {
        let name = match self.peek().clone() {
            Tok::Ident(s) => s,
            other => return self.err(format!("expected type, found {}", other.describe())),
        };
        let ty = match name.as_str() {
            "int" => TypeExpr::Int(IntSpelling::Int),
            "uint" => TypeExpr::Int(IntSpelling::Uint),
            "uint256" => TypeExpr::Int(IntSpelling::Uint256),
            "bool" => TypeExpr::Bool,
            "void" => TypeExpr::Void,
            _ if RESERVED.contains(&name.as_str()) => {
                return self.err(format!("expected type, found `{name}`"))
            }
            _ => {
                self.bump();
                let mut args = Vec::new();
                if self.eat(&Tok::Lt) {
                    loop {
                        args.push(self.context()?);
                        if self.eat(&Tok::Gt) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                return Ok(TypeExpr::Class { name, args });
            }
        };
        self.bump();
        Ok(ty)
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect(Tok::LBrace)?;
        let mut stmts = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.at(&Tok::Eof) {
                return self.err("unterminated block");
            }
            stmts.push(self.stmt()?);
        }
        Ok(Block { stmts })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = if self.at(&Tok::LBrace) {
            StmtKind::Block(self.block()?)
        } else if self.eat_kw("return") {
            let e = if self.at(&Tok::Semi) {
                None
            } else {
                Some(self.expr()?)
            };
            self.expect(Tok::Semi)?;
            StmtKind::Return(e)
        } else if self.eat_kw("throw") {
            self.expect(Tok::Semi)?;
            StmtKind::Throw
        } else if self.eat_kw("if") {
            self.expect(Tok::LParen)?;
            let c = self.expr()?;
            self.expect(Tok::RParen)?;
            let then = self.branch()?;
            let els = if self.eat_kw("else") {
                Some(self.branch()?)
            } else {
                None
            };
            StmtKind::If(c, then, els)
        } else if self.eat_kw("var") {
            let name = self.ident()?;
            let init = if self.eat(&Tok::Assign) {
                Some(self.expr()?)
            } else {
                None
            };
            self.expect(Tok::Semi)?;
            StmtKind::Local {
                ty: None,
                name,
                init,
            }
        } else if let Some(local) = self.try_local()? {
            local
        } else {
            let e = self.expr()?;
            let block_bodied = matches!(
                &e.kind,
                ExprKind::Atomic(_, AtomicBody::Block(_)) | ExprKind::Fork(AtomicBody::Block(_))
            );
            if !(block_bodied && !self.at(&Tok::Semi)) {
                self.expect(Tok::Semi)?;
            }
            StmtKind::Expr(e)
        };
        Ok(Stmt { kind, span })
    }

    /// An `if` branch: either a block or a single statement.
    fn branch(&mut self) -> PResult<Block> {
        if self.at(&Tok::LBrace) {
            self.block()
        } else {
            Ok(Block {
                stmts: vec![self.stmt()?],
            })
        }
    }

    /// Attempts `T x (= e)? ;`, rewinding if the prefix is not a declaration.
    fn try_local(&mut self) -> PResult<Option<StmtKind>> {
        let looks_like_type = match self.peek() {
            Tok::Ident(s) => {
                matches!(s.as_str(), "int" | "uint" | "uint256" | "bool")
                    || (!RESERVED.contains(&s.as_str())
                        && matches!(self.peek_at(1), Tok::Ident(_) | Tok::Lt))
            }
            _ => false,
        };
        if !looks_like_type {
            return Ok(None);
        }
        let save = self.pos;
        let attempt = (|| -> PResult<(TypeExpr, String)> {
            let ty = self.type_expr()?;
            let name = self.ident()?;
            if !(self.at(&Tok::Assign) || self.at(&Tok::Semi)) {
                return self.err("not a declaration");
            }
            Ok((ty, name))
        })();
        match attempt {
            Ok((ty, name)) => {
                let init = if self.eat(&Tok::Assign) {
                    Some(self.expr()?)
                } else {
                    None
                };
                self.expect(Tok::Semi)?;
                Ok(Some(StmtKind::Local {
                    ty: Some(ty),
                    name,
                    init,
                }))
            }
            Err(_) => {
                self.pos = save;
                Ok(None)
            }
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let lhs = self.binary(1)?;
        let op = match self.peek() {
            Tok::Assign => None,
            Tok::PlusEq => Some(BinOp::Add),
            Tok::MinusEq => Some(BinOp::Sub),
            _ => return Ok(lhs),
        };
        let op_span = self.span();
        self.bump();
        if !matches!(lhs.kind, ExprKind::Name(_) | ExprKind::Field(..)) {
            return Err(Diagnostic::new(
                Code::Parse,
                op_span,
                "left side of assignment must be a variable or field",
            ));
        }
        let rhs = self.expr()?;
        let span = lhs.span;
        let kind = match op {
            None => ExprKind::Assign(Box::new(lhs), Box::new(rhs)),
            Some(op) => ExprKind::CompoundAssign(op, Box::new(lhs), Box::new(rhs)),
        };
        Ok(Expr::new(kind, span))
    }

    fn binop(&self) -> Option<BinOp> {
        Some(match self.peek() {
            Tok::OrOr => BinOp::Or,
            Tok::AndAnd => BinOp::And,
            Tok::EqEq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            Tok::Percent => BinOp::Mod,
            _ => return None,
        })
    }

    /// Precedence climbing; all binary operators are left-associative.
    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        if self.eat(&Tok::Bang) {
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Not, Box::new(e)), span));
        }
        if self.eat(&Tok::Minus) {
            let e = self.unary()?;
            if let ExprKind::Lit(Lit::Int(lit)) = &e.kind {
                let folded = IntLit {
                    value: -lit.value.clone(),
                    text: format!("-{}", lit.text),
                };
                return Ok(Expr::new(ExprKind::Lit(Lit::Int(folded)), span));
            }
            return Ok(Expr::new(ExprKind::Unary(UnOp::Neg, Box::new(e)), span));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.at(&Tok::Dot) {
            self.bump();
            let span = self.span();
            let name = self.ident()?;
            if self.at(&Tok::LParen) {
                let args = self.args()?;
                e = Expr::new(ExprKind::Call(Some(Box::new(e)), name, args), span);
            } else {
                e = Expr::new(ExprKind::Field(Box::new(e), name), span);
            }
        }
        Ok(e)
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                out.push(self.expr()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(out)
    }

    fn body(&mut self) -> PResult<AtomicBody> {
        if self.at(&Tok::LBrace) {
            Ok(AtomicBody::Block(self.block()?))
        } else {
            Ok(AtomicBody::Expr(Box::new(self.expr()?)))
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Int(lit) => {
                self.bump();
                ExprKind::Lit(Lit::Int(lit))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                return Ok(e);
            }
            Tok::Ident(s) => match s.as_str() {
                "true" | "false" => {
                    self.bump();
                    ExprKind::Lit(Lit::Bool(s == "true"))
                }
                "null" => {
                    self.bump();
                    ExprKind::Lit(Lit::Null)
                }
                "this" => {
                    self.bump();
                    ExprKind::This
                }
                "new" => {
                    self.bump();
                    let ty = self.type_expr()?;
                    let args = self.args()?;
                    ExprKind::New(ty, args)
                }
                "atomic" => {
                    self.bump();
                    let contract = if self.at(&Tok::Lt) {
                        Some(self.contract()?.0)
                    } else {
                        None
                    };
                    ExprKind::Atomic(contract, self.body()?)
                }
                "fork" => {
                    self.bump();
                    ExprKind::Fork(self.body()?)
                }
                "valid" => {
                    self.bump();
                    let e = self.postfix()?;
                    ExprKind::Valid(Box::new(e))
                }
                "require" => {
                    self.bump();
                    self.expect(Tok::LParen)?;
                    let e = self.expr()?;
                    self.expect(Tok::RParen)?;
                    ExprKind::Require(Box::new(e))
                }
                "emit" => {
                    self.bump();
                    let name = self.ident()?;
                    let args = self.args()?;
                    ExprKind::Emit(name, args)
                }
                _ => {
                    let name = self.ident()?;
                    if self.at(&Tok::LParen) {
                        let args = self.args()?;
                        ExprKind::Call(None, name, args)
                    } else {
                        ExprKind::Name(name)
                    }
                }
            },
            other => return self.err(format!("expected expression, found {}", other.describe())),
        };
        Ok(Expr::new(kind, span))
    }
}

/// `return` is only accepted in tail position of a body.
fn check_returns(b: &Block, tail: bool) -> PResult<()> {
    let n = b.stmts.len();
    for (i, s) in b.stmts.iter().enumerate() {
        let here = tail && i + 1 == n;
        match &s.kind {
            StmtKind::Return(_) if !here => {
                return Err(Diagnostic::new(
                    Code::Parse,
                    s.span,
                    "`return` is only allowed as the last statement of a body",
                ))
            }
            StmtKind::If(_, t, e) => {
                check_returns(t, here)?;
                if let Some(e) = e {
                    check_returns(e, here)?;
                }
            }
            StmtKind::Block(inner) => check_returns(inner, here)?,
            _ => {}
        }
    }
    Ok(())
}
