//! Coded, span-carrying diagnostics shared by every stage of the pipeline.

use std::fmt;

use serde::Serialize;

/// A 1-based source position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub const fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// The fixed diagnostic code registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Code {
    Parse,
    CtxWf,
    CtxArity,
    NotClass,
    Dangling,
    Subcontract,
    Effect,
    OwnerCall,
    ForkInAtomic,
    BindExist,
    Type,
    NeedContract,
    InvImpure,
    InvEscape,
    Target,
    BgMismatch,
    TranspileCtx,
    TranspileExpr,
    Stuck,
    Fuel,
    TopInvalidity,
}

impl Code {
    pub const ALL: [Code; 21] = [
        Code::Parse,
        Code::CtxWf,
        Code::CtxArity,
        Code::NotClass,
        Code::Dangling,
        Code::Subcontract,
        Code::Effect,
        Code::OwnerCall,
        Code::ForkInAtomic,
        Code::BindExist,
        Code::Type,
        Code::NeedContract,
        Code::InvImpure,
        Code::InvEscape,
        Code::Target,
        Code::BgMismatch,
        Code::TranspileCtx,
        Code::TranspileExpr,
        Code::Stuck,
        Code::Fuel,
        Code::TopInvalidity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Code::Parse => "E-PARSE",
            Code::CtxWf => "E-CTX-WF",
            Code::CtxArity => "E-CTX-ARITY",
            Code::NotClass => "E-NOT-CLASS",
            Code::Dangling => "E-DANGLING",
            Code::Subcontract => "E-SUBCONTRACT",
            Code::Effect => "E-EFFECT",
            Code::OwnerCall => "E-OWNER-CALL",
            Code::ForkInAtomic => "E-FORK-IN-ATOMIC",
            Code::BindExist => "E-BIND-EXIST",
            Code::Type => "E-TYPE",
            Code::NeedContract => "E-NEED-CONTRACT",
            Code::InvImpure => "E-INV-IMPURE",
            Code::InvEscape => "E-INV-ESCAPE",
            Code::Target => "E-TARGET",
            Code::BgMismatch => "E-BG-MISMATCH",
            Code::TranspileCtx => "E-TRANSPILE-CTX",
            Code::TranspileExpr => "E-TRANSPILE-EXPR",
            Code::Stuck => "E-STUCK",
            Code::Fuel => "E-FUEL",
            Code::TopInvalidity => "W-TOP-INVALIDITY",
        }
    }

    pub fn parse(s: &str) -> Option<Code> {
        Code::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn default_severity(self) -> Severity {
        match self {
            Code::TopInvalidity => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Code {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: Code,
    pub severity: Severity,
    pub message: String,
    pub span: Span,
    pub related: Option<Span>,
}

impl Diagnostic {
    pub fn new(code: Code, span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            code,
            severity: code.default_severity(),
            message: message.into(),
            span,
            related: None,
        }
    }

    pub fn with_related(mut self, span: Span) -> Self {
        self.related = Some(span);
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// One JSON object per line: `{"code":..,"severity":..,"line":..,"col":..,"msg":..}`.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            code: Code,
            severity: Severity,
            line: u32,
            col: u32,
            msg: &'a str,
        }
        serde_json::to_string(&Line {
            code: self.code,
            severity: self.severity,
            line: self.span.line,
            col: self.span.col,
            msg: &self.message,
        })
        .expect("diagnostic serialization is infallible")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {}[{}]: {}", self.span, sev, self.code, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip_through_strings() {
        for c in Code::ALL {
            assert_eq!(Code::parse(c.as_str()), Some(c));
        }
        assert_eq!(Code::parse("E-NOPE"), None);
    }

    #[test]
    fn json_line_shape() {
        let d = Diagnostic::new(Code::Effect, Span::new(3, 7), "write outside I");
        assert_eq!(
            d.to_json_line(),
            r#"{"code":"E-EFFECT","severity":"error","line":3,"col":7,"msg":"write outside I"}"#
        );
        let w = Diagnostic::new(Code::TopInvalidity, Span::new(1, 1), "x");
        assert!(!w.is_error());
    }
}
