//! Tokenizer for `.ov` source.

use num_bigint::BigInt;
use num_traits::{One, Zero};

use super::ast::{Doc, IntLit};
use crate::diag::{Code, Diagnostic, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(IntLit),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Le,
    Ge,
    Shl,
    EqEq,
    Ne,
    Assign,
    PlusEq,
    MinusEq,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Bang,
    AndAnd,
    OrOr,
    Comma,
    Semi,
    Dot,
    Question,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{}`", i.text),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Lt => "<",
            Tok::Gt => ">",
            Tok::Le => "<=",
            Tok::Ge => ">=",
            Tok::Shl => "<<",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Assign => "=",
            Tok::PlusEq => "+=",
            Tok::MinusEq => "-=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::Bang => "!",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Dot => ".",
            Tok::Question => "?",
            Tok::Ident(_) | Tok::Int(_) | Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
    /// A `/** */` comment immediately preceding this token.
    pub doc: Option<Doc>,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    Lexer::new(src).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    pending_doc: Option<Doc>,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            pending_doc: None,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn span(&self) -> Span {
        Span::new(self.line, self.col)
    }

    fn run(mut self) -> Result<Vec<Token>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            let span = self.span();
            let Some(c) = self.peek() else {
                out.push(Token {
                    tok: Tok::Eof,
                    span,
                    doc: self.pending_doc.take(),
                });
                return Ok(out);
            };
            let tok = if c.is_ascii_alphabetic() || c == '_' {
                self.ident()
            } else if c.is_ascii_digit() {
                self.number(span)?
            } else {
                self.punct(span)?
            };
            out.push(Token {
                tok,
                span,
                doc: self.pending_doc.take(),
            });
        }
    }

    fn skip_trivia(&mut self) -> Result<(), Diagnostic> {
        loop {
            match (self.peek(), self.peek2()) {
                (Some(c), _) if c.is_whitespace() => {
                    self.bump();
                }
                (Some('/'), Some('/')) => {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                (Some('/'), Some('*')) => {
                    let start = self.span();
                    self.bump();
                    self.bump();
                    let is_doc = self.peek() == Some('*') && self.peek2() != Some('/');
                    let mut body = String::new();
                    loop {
                        match (self.peek(), self.peek2()) {
                            (Some('*'), Some('/')) => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            (Some(c), _) => {
                                body.push(c);
                                self.bump();
                            }
                            (None, _) => {
                                return Err(Diagnostic::new(
                                    Code::Parse,
                                    start,
                                    "unterminated block comment",
                                ))
                            }
                        }
                    }
                    if is_doc {
                        self.pending_doc = Some(doc_from_comment(&body[1..]));
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn ident(&mut self) -> Tok {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        Tok::Ident(s)
    }

    fn number(&mut self, span: Span) -> Result<Tok, Diagnostic> {
        let mut text = String::new();
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            text.push(c);
            self.bump();
        }
        let mut value: BigInt = text.parse().expect("digits parse");
        if matches!(self.peek(), Some('e') | Some('E'))
            && self.peek2().is_some_and(|c| c.is_ascii_digit())
        {
            text.push(self.bump().unwrap());
            let mut exp = String::new();
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                exp.push(c);
                text.push(c);
                self.bump();
            }
            let e: u32 = exp.parse().map_err(|_| {
                Diagnostic::new(Code::Parse, span, format!("exponent too large in `{text}`"))
            })?;
            if e > 4096 {
                return Err(Diagnostic::new(
                    Code::Parse,
                    span,
                    format!("exponent too large in `{text}`"),
                ));
            }
            let mut scale = BigInt::one();
            for _ in 0..e {
                scale *= 10;
            }
            value *= scale;
        }
        if self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            return Err(Diagnostic::new(
                Code::Parse,
                span,
                format!("malformed number starting `{text}`"),
            ));
        }
        debug_assert!(value >= BigInt::zero());
        Ok(Tok::Int(IntLit { value, text }))
    }

    fn punct(&mut self, span: Span) -> Result<Tok, Diagnostic> {
        let c = self.bump().unwrap();
        let next = self.peek();
        let two = |lx: &mut Self, t: Tok| {
            lx.bump();
            t
        };
        Ok(match (c, next) {
            ('<', Some('=')) => two(self, Tok::Le),
            ('<', Some('<')) => two(self, Tok::Shl),
            ('>', Some('=')) => two(self, Tok::Ge),
            ('=', Some('=')) => two(self, Tok::EqEq),
            ('!', Some('=')) => two(self, Tok::Ne),
            ('+', Some('=')) => two(self, Tok::PlusEq),
            ('-', Some('=')) => two(self, Tok::MinusEq),
            ('&', Some('&')) => two(self, Tok::AndAnd),
            ('|', Some('|')) => two(self, Tok::OrOr),
            ('{', _) => Tok::LBrace,
            ('}', _) => Tok::RBrace,
            ('(', _) => Tok::LParen,
            (')', _) => Tok::RParen,
            ('[', _) => Tok::LBracket,
            (']', _) => Tok::RBracket,
            ('<', _) => Tok::Lt,
            ('>', _) => Tok::Gt,
            ('=', _) => Tok::Assign,
            ('+', _) => Tok::Plus,
            ('-', _) => Tok::Minus,
            ('*', _) => Tok::Star,
            ('/', _) => Tok::Slash,
            ('%', _) => Tok::Percent,
            ('!', _) => Tok::Bang,
            (',', _) => Tok::Comma,
            (';', _) => Tok::Semi,
            ('.', _) => Tok::Dot,
            ('?', _) => Tok::Question,
            (other, _) => {
                return Err(Diagnostic::new(
                    Code::Parse,
                    span,
                    format!("unexpected character `{other}`"),
                ))
            }
        })
    }
}

/// Splits the interior of a `/** ... */` comment into trimmed lines, dropping
/// the leading `*` gutter and blank lines at either end.
fn doc_from_comment(body: &str) -> Doc {
    let mut lines: Vec<String> = body
        .lines()
        .map(|l| {
            let t = l.trim();
            let t = t.strip_prefix('*').unwrap_or(t);
            t.strip_prefix(' ').unwrap_or(t).trim_end().to_string()
        })
        .collect();
    while lines.first().is_some_and(String::is_empty) {
        lines.remove(0);
    }
    while lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Doc { lines }
}
