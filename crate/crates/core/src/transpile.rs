//! Solidity emission: validity contracts become function modifiers and the
//! class invariant becomes `isValid()`.

use std::fmt::Write as _;

use crate::diag::{Code, Diagnostic, Span};
use crate::syntax::{
    BinOp, Block, ClassDecl, Context, Contract, CtorDecl, Doc, Expr, ExprKind, FieldDecl, Lit, MethodDecl, Program,
    Stmt, StmtKind, TypeExpr, UnOp, Visibility,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Style {
    /// `thisThis()`-style modifiers from `OVValidity`.
    #[default]
    OvValidity,
    /// `preValid()` / `postValid()` pairs from `Validity`.
    PrePost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitterConfig {
    pub style: Style,
    pub pragma: String,
    pub import_prefix: String,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        EmitterConfig {
            style: Style::OvValidity,
            pragma: ">=0.5.16 <0.7.0".into(),
            import_prefix: "../".into(),
        }
    }
}

/// Which validity checks a contract implies: `(pre, post)`.
pub fn checks_for(d: &Contract) -> Result<(bool, bool), String> {
    for c in [&d.validity, &d.invalidity] {
        match c {
            Context::This | Context::Bot => {}
            other => return Err(format!("context `{other}` has no single-contract modifier")),
        }
    }
    let pre = d.validity != Context::Bot;
    let post = d.validity == Context::This && d.invalidity == Context::This;
    Ok((pre, post))
}

/// The `OVValidity` modifier for a normalized contract, if any check is needed.
pub fn modifier_for(d: &Contract) -> Result<Option<&'static str>, String> {
    Ok(match checks_for(d)? {
        (true, true) => Some("thisThis"),
        (true, false) => Some("thisTop"),
        (false, true) => Some("botThis"),
        (false, false) => None,
    })
}

pub fn file_name(class: &str, style: Style) -> String {
    match style {
        Style::OvValidity => format!("{class}.sol"),
        Style::PrePost => format!("{class}_OV.sol"),
    }
}

fn contract_name(class: &str, style: Style) -> String {
    match style {
        Style::OvValidity => class.to_string(),
        Style::PrePost => format!("{class}_OV"),
    }
}

struct Emitter {
    out: String,
    errors: Vec<Diagnostic>,
}

const IND: &str = "    ";

impl Emitter {
    fn err(&mut self, code: Code, span: Span, msg: impl Into<String>) {
        self.errors.push(Diagnostic::new(code, span, msg));
    }

    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str(IND);
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn doc(&mut self, depth: usize, doc: &Doc) {
        self.line(depth, "/**");
        for l in &doc.lines {
            if l.is_empty() {
                self.line(depth, "*");
            } else {
                self.line(depth, &format!("* {l}"));
            }
        }
        self.line(depth, "*/");
    }

    fn ty(&mut self, t: &TypeExpr, span: Span) -> String {
        match t {
            TypeExpr::Int(s) => s.as_str().to_string(),
            TypeExpr::Bool => "bool".into(),
            TypeExpr::Void => String::new(),
            TypeExpr::Class { name, args } => {
                if args.iter().any(|a| matches!(a, Context::Existential | Context::Any)) {
                    self.err(Code::TranspileCtx, span, format!("type `{t}` has an abstract owner"));
                }
                name.clone()
            }
        }
    }

    fn expr(&mut self, e: &Expr) -> String {
        let mut s = String::new();
        self.sol(&mut s, e, 0);
        s
    }

    fn sol(&mut self, out: &mut String, e: &Expr, min_prec: u8) {
        match &e.kind {
            ExprKind::Lit(Lit::Null) | ExprKind::Lit(Lit::Unit) => {
                self.err(Code::TranspileExpr, e.span, "`null` outside a comparison has no Solidity form");
                out.push_str("address(0)");
            }
            ExprKind::Lit(l) => {
                let _ = write!(out, "{l}");
            }
            ExprKind::Name(n) => out.push_str(n),
            ExprKind::This => out.push_str("this"),
            ExprKind::New(t, args) => {
                let name = self.ty(t, e.span);
                let _ = write!(out, "new {name}(");
                self.list(out, args);
                out.push(')');
            }
            ExprKind::Assign(l, r) | ExprKind::CompoundAssign(_, l, r) => {
                let op = match &e.kind {
                    ExprKind::CompoundAssign(BinOp::Add, ..) => "+=",
                    ExprKind::CompoundAssign(BinOp::Sub, ..) => "-=",
                    ExprKind::CompoundAssign(op, ..) => {
                        self.err(Code::TranspileExpr, e.span, format!("compound `{}=`", op.as_str()));
                        "="
                    }
                    _ => "=",
                };
                let wrap = min_prec > 0;
                if wrap {
                    out.push('(');
                }
                self.sol(out, l, 7);
                let _ = write!(out, " {op} ");
                self.sol(out, r, 0);
                if wrap {
                    out.push(')');
                }
            }
            ExprKind::Field(r, f) => {
                self.sol(out, r, 7);
                let _ = write!(out, ".{f}");
            }
            ExprKind::Call(r, m, args) => {
                if let Some(r) = r {
                    self.sol(out, r, 7);
                    out.push('.');
                }
                let _ = write!(out, "{m}(");
                self.list(out, args);
                out.push(')');
            }
            ExprKind::Binary(op @ (BinOp::Eq | BinOp::Ne), a, b)
                if matches!(a.kind, ExprKind::Lit(Lit::Null)) || matches!(b.kind, ExprKind::Lit(Lit::Null)) =>
            {
                let p = op.precedence();
                let wrap = p < min_prec;
                if wrap {
                    out.push('(');
                }
                for (k, side) in [a, b].into_iter().enumerate() {
                    if k == 1 {
                        let _ = write!(out, " {} ", op.as_str());
                    }
                    if matches!(side.kind, ExprKind::Lit(Lit::Null)) {
                        out.push_str("address(0)");
                    } else {
                        out.push_str("address(");
                        self.sol(out, side, 0);
                        out.push(')');
                    }
                }
                if wrap {
                    out.push(')');
                }
            }
            ExprKind::Binary(op, a, b) => {
                let p = op.precedence();
                let wrap = p < min_prec;
                if wrap {
                    out.push('(');
                }
                self.sol(out, a, p);
                let _ = write!(out, " {} ", op.as_str());
                self.sol(out, b, p + 1);
                if wrap {
                    out.push(')');
                }
            }
            ExprKind::Unary(op, a) => {
                out.push_str(match op {
                    UnOp::Not => "!",
                    UnOp::Neg => "-",
                });
                let simple = matches!(
                    a.kind,
                    ExprKind::Lit(Lit::Bool(_)) | ExprKind::Name(_) | ExprKind::This | ExprKind::Field(..) | ExprKind::Call(..)
                );
                if simple {
                    self.sol(out, a, 7);
                } else {
                    out.push('(');
                    self.sol(out, a, 0);
                    out.push(')');
                }
            }
            ExprKind::Valid(r) => {
                self.sol(out, r, 7);
                out.push_str(".isValid()");
            }
            ExprKind::Require(c) => {
                out.push_str("require(");
                self.sol(out, c, 0);
                out.push(')');
            }
            ExprKind::Emit(n, args) => {
                let _ = write!(out, "emit {n}(");
                self.list(out, args);
                out.push(')');
            }
            ExprKind::Atomic(..) | ExprKind::Fork(_) => {
                self.err(
                    Code::TranspileExpr,
                    e.span,
                    "nested transactions and forks have no Solidity form",
                );
                out.push_str("/* transaction */");
            }
        }
    }

    fn list(&mut self, out: &mut String, args: &[Expr]) {
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            self.sol(out, a, 0);
        }
    }

    fn block(&mut self, depth: usize, b: &Block) {
        for s in &b.stmts {
            self.stmt(depth, s);
        }
    }

    fn stmt(&mut self, depth: usize, s: &Stmt) {
        match &s.kind {
            StmtKind::Expr(e) => {
                let t = self.expr(e);
                self.line(depth, &format!("{t};"));
            }
            StmtKind::Local { ty: None, name, .. } => {
                self.err(Code::TranspileExpr, s.span, format!("`var {name}` needs a declared type"));
            }
            StmtKind::Local {
                ty: Some(t),
                name,
                init,
            } => {
                let t = self.ty(t, s.span);
                match init {
                    Some(e) => {
                        let e = self.expr(e);
                        self.line(depth, &format!("{t} {name} = {e};"));
                    }
                    None => self.line(depth, &format!("{t} {name};")),
                }
            }
            StmtKind::Return(None) => self.line(depth, "return;"),
            StmtKind::Return(Some(e)) => {
                let e = self.expr(e);
                self.line(depth, &format!("return {e};"));
            }
            StmtKind::Throw => self.line(depth, "revert();"),
            StmtKind::If(c, t, f) => {
                let c = self.expr(c);
                self.line(depth, &format!("if ({c}) {{"));
                self.block(depth + 1, t);
                match f {
                    Some(f) => {
                        self.line(depth, "} else {");
                        self.block(depth + 1, f);
                        self.line(depth, "}");
                    }
                    None => self.line(depth, "}"),
                }
            }
            StmtKind::Block(b) => {
                self.line(depth, "{");
                self.block(depth + 1, b);
                self.line(depth, "}");
            }
        }
    }

    fn params(&mut self, ps: &[crate::syntax::Param]) -> String {
        let mut v = Vec::new();
        for p in ps {
            let t = self.ty(&p.ty, p.span);
            v.push(format!("{t} {}", p.name));
        }
        v.join(", ")
    }

    fn field(&mut self, f: &FieldDecl) {
        if let Some(d) = &f.doc {
            self.doc(1, d);
        }
        let t = self.ty(&f.ty, f.span);
        match &f.init {
            Some(e) => {
                let e = self.expr(e);
                self.line(1, &format!("{t} {} = {e};", f.name));
            }
            None => self.line(1, &format!("{t} {};", f.name)),
        }
    }

    fn ctor(&mut self, c: &CtorDecl) {
        self.out.push('\n');
        if let Some(d) = &c.doc {
            self.doc(1, d);
        }
        let ps = self.params(&c.params);
        self.line(1, &format!("constructor({ps}) public {{"));
        self.block(2, &c.body);
        self.line(2, "require(this.isValid(), \"Validity fails post-check\");");
        self.line(1, "}");
    }

    fn method(&mut self, m: &MethodDecl, style: Style) {
        self.out.push('\n');
        if let Some(d) = &m.doc {
            self.doc(1, d);
        }
        let ps = self.params(&m.params);
        let mut head = format!("function {}({ps})", m.name);
        match checks_for(&m.contract) {
            Ok((pre, post)) => match style {
                Style::OvValidity => {
                    if let Ok(Some(name)) = modifier_for(&m.contract) {
                        let _ = write!(head, " {name}()");
                    }
                }
                Style::PrePost => {
                    if pre {
                        head.push_str(" preValid()");
                    }
                    if post {
                        head.push_str(" postValid()");
                    }
                }
            },
            Err(msg) => self.err(Code::TranspileCtx, m.contract_span, format!("method `{}`: {msg}", m.name)),
        }
        head.push_str(match m.visibility {
            Visibility::Private => " private",
            _ => " public",
        });
        if m.contract.invalidity == Context::Bot {
            head.push_str(" view");
        }
        if m.ret != TypeExpr::Void {
            let r = self.ty(&m.ret, m.span);
            let _ = write!(head, " returns ({r})");
        }
        head.push_str(" {");
        self.line(1, &head);
        self.block(2, &m.body);
        self.line(1, "}");
    }

    fn is_valid(&mut self, c: &ClassDecl, style: Style) {
        self.out.push('\n');
        let mut lines = Vec::new();
        if style == Style::OvValidity {
            lines.push("The invariant".to_string());
        }
        lines.push("@dev Return bool".into());
        lines.push("@return true if the invariant holds; false otherwise".into());
        self.doc(1, &Doc { lines });
        self.line(1, "function isValid() external view returns (bool) {");
        let body = match &c.invariant {
            Some(e) => self.expr(e),
            None => "true".into(),
        };
        self.line(2, &format!("return {body};"));
        self.line(1, "}");
    }
}

/// The `isValid()` function text for `c`, indented one level.
pub fn emit_is_valid(c: &ClassDecl, style: Style) -> Result<String, Vec<Diagnostic>> {
    let mut e = Emitter {
        out: String::new(),
        errors: Vec::new(),
    };
    e.is_valid(c, style);
    if e.errors.is_empty() {
        Ok(e.out.trim_start_matches('\n').to_string())
    } else {
        Err(e.errors)
    }
}

pub fn transpile_class(c: &ClassDecl, cfg: &EmitterConfig) -> Result<String, Vec<Diagnostic>> {
    let mut e = Emitter {
        out: String::new(),
        errors: Vec::new(),
    };
    if c.params.len() > 1 {
        e.err(
            Code::TranspileCtx,
            c.span,
            format!("class `{}` has context parameters beyond its owner", c.name),
        );
    }
    let name = contract_name(&c.name, cfg.style);
    if cfg.style == Style::PrePost {
        e.line(0, &format!("// file: {}_ov.sol", c.name.to_lowercase()));
    }
    e.line(0, &format!("pragma solidity {};", cfg.pragma));
    e.out.push('\n');
    let api = match cfg.style {
        Style::OvValidity => "OVValidity",
        Style::PrePost => "Validity",
    };
    e.line(0, &format!("import '{}Ownable.sol';", cfg.import_prefix));
    e.line(0, &format!("import '{}{api}.sol';", cfg.import_prefix));
    e.out.push('\n');
    if let Some(d) = &c.doc {
        e.doc(0, d);
    }
    let bases = match &c.superclass {
        Some(TypeExpr::Class { name, .. }) => contract_name(name, cfg.style),
        _ => format!("Ownable, {api}"),
    };
    e.line(0, &format!("contract {name} is {bases} {{"));
    for f in &c.fields {
        e.field(f);
    }
    if cfg.style == Style::OvValidity {
        if let Some(inv) = &c.invariant {
            let text = crate::syntax::expr_to_string(inv);
            e.line(1, &format!("// invariant: {text}"));
        }
    }
    for k in &c.ctors {
        e.ctor(k);
    }
    for m in &c.methods {
        e.method(m, cfg.style);
    }
    e.is_valid(c, cfg.style);
    e.line(0, "}");
    if e.errors.is_empty() {
        Ok(e.out)
    } else {
        Err(e.errors)
    }
}

/// One `(file name, text)` per class, in declaration order.
pub fn transpile_program(p: &Program, cfg: &EmitterConfig) -> Result<Vec<(String, String)>, Vec<Diagnostic>> {
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for c in &p.classes {
        match transpile_class(c, cfg) {
            Ok(text) => files.push((file_name(&c.name, cfg.style), text)),
            Err(e) => errors.extend(e),
        }
    }
    if errors.is_empty() {
        Ok(files)
    } else {
        Err(errors)
    }
}

const OWNABLE: &str = r#"// file: ownable.sol
pragma solidity PRAGMA;

/**
* @title Ownable
* @dev Set and get owner
*/
contract Ownable {
    // modifier to check if caller is owner
    modifier isOwner() {
        require(msg.sender == owner, "Caller is not owner");
        _;
    }

    // modifier to check if caller is owner
    modifier isCalledBy(address addr) {
        require(msg.sender == addr, "Caller is not the specified address");
        _;
    }

    // @dev Set contract deployer as owner
    constructor() public {
        owner = msg.sender; // 'msg.sender' is sender of current call
    }

    /**
    * @dev Return owner address
    * @return address of owner
    */
    function getOwner() external view returns (address) {
        return owner;
    }

    address private owner;
}
"#;

const VALIDITY: &str = r#"// file: validity.sol
pragma solidity PRAGMA;

/**
* @title Validity
* @dev define validity of an object
*/
interface Validity {
    /**
    * The invariant condition of an object.
    * Subclass must implement this method speciyfing its invariant.
    */
    function isValid() external view returns (bool);

    // modifier to check object's validity prior a function call
    modifier preValid() {
        require(this.isValid(), "Validity fails pre-check");
        _;
    }

    // modifier to check object's validity immediately after a function call
    modifier postValid() {
        _;
        require(this.isValid(), "Validity fails post-check");
    }
}
"#;

const OVVALIDITY: &str = r#"// file: ovvalidity.sol
pragma solidity PRAGMA;

/**
* @title OVValidity
* @dev define validity of an object
*/
interface OVValidity {
    /**
    * The invariant condition of an object.
    * Subclass must implement this method speciyfing its invariant.
    */
    function isValid() external view returns (bool);

    // modifier to check object's validity prior a function call
    modifier preValid() {
        require(this.isValid(), "Validity fails pre-check");
        _;
    }

    // modifier to  object's validity immediately after a function call
    modifier postValid() {
        _;
        require(this.isValid(), "Validity fails post-check");
    }

    // The following modifiers are short-hand for OV language

    // modifier to check object's validity before and after a function call
    modifier thisThis() {
        require(this.isValid(), "Validity fails pre-check");
        _;
        require(this.isValid(), "Validity fails post-check");
    }

    // modifier to check object's validity after a function call
    modifier botThis() {
        _;
        require(this.isValid(), "Validity fails post-check");
    }

    // modifier to check object's validity before a function call
    modifier thisTop() {
        require(this.isValid(), "Validity fails pre-check");
        _;
    }

    // modifier that is simply not checking object's validity at all
    modifier botTop() {
        _;
    }
}
"#;

/// `Ownable.sol`, `Validity.sol` and `OVValidity.sol`.
pub fn bundle_api(cfg: &EmitterConfig) -> [(String, String); 3] {
    let fill = |t: &str| t.replace("PRAGMA", &cfg.pragma);
    [
        ("Ownable.sol".into(), fill(OWNABLE)),
        ("Validity.sol".into(), fill(VALIDITY)),
        ("OVValidity.sol".into(), fill(OVVALIDITY)),
    ]
}

/// A lightweight structural check of emitted Solidity: LF-only lines with
/// space indentation, a pragma before any declaration, balanced delimiters
/// outside strings and comments, and every statement line terminated.
pub fn well_formed(src: &str) -> Result<(), String> {
    if src.contains('\r') || src.contains('\t') {
        return Err("carriage return or tab".into());
    }
    if !src.ends_with('\n') {
        return Err("missing final newline".into());
    }
    let mut stack = Vec::new();
    let mut seen_pragma = false;
    let mut in_block_comment = false;
    for (n, raw) in src.lines().enumerate() {
        let n = n + 1;
        if raw.ends_with(' ') {
            return Err(format!("line {n}: trailing space"));
        }
        let indent = raw.len() - raw.trim_start().len();
        if indent % 4 != 0 {
            return Err(format!("line {n}: indentation is not a multiple of four"));
        }
        let line = raw.trim();
        if in_block_comment {
            if line.contains("*/") {
                in_block_comment = false;
            }
            continue;
        }
        if line.starts_with("/**") || line.starts_with("/*") {
            in_block_comment = !line.contains("*/");
            continue;
        }
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let code = strip_line(line).map_err(|e| format!("line {n}: {e}"))?;
        if code.starts_with("pragma solidity ") {
            seen_pragma = true;
        } else if !seen_pragma {
            return Err(format!("line {n}: declaration before pragma"));
        }
        for ch in code.chars() {
            match ch {
                '(' | '{' | '[' => stack.push(ch),
                ')' | '}' | ']' => {
                    let open = match ch {
                        ')' => '(',
                        '}' => '{',
                        _ => '[',
                    };
                    if stack.pop() != Some(open) {
                        return Err(format!("line {n}: unbalanced `{ch}`"));
                    }
                }
                _ => {}
            }
        }
        let last = code.trim_end().chars().last().unwrap_or(';');
        if !matches!(last, ';' | '{' | '}') {
            return Err(format!("line {n}: unterminated statement"));
        }
    }
    if in_block_comment {
        return Err("unterminated comment".into());
    }
    if let Some(c) = stack.pop() {
        return Err(format!("unclosed `{c}`"));
    }
    if !seen_pragma {
        return Err("missing pragma".into());
    }
    Ok(())
}

/// Removes string literals and a trailing `//` comment.
fn strip_line(line: &str) -> Result<String, &'static str> {
    let mut out = String::new();
    let mut quote = None;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '/' && chars.peek() == Some(&'/') => break,
            None => out.push(c),
        }
    }
    if quote.is_some() {
        return Err("unterminated string");
    }
    Ok(out)
}
