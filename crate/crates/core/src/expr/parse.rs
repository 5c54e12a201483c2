//! Recursive-descent parser for the infix expression grammar.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative, binds tighter than '-'
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! ```

use thiserror::Error;

use super::{Expr, UnaryOp};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ParseError {
    /// `pos` is a 0-based character offset into the source.
    #[error("syntax error at column {}: {msg}", pos + 1)]
    Syntax { pos: usize, msg: String },
    #[error("undeclared symbol `{name}` at column {}", pos + 1)]
    UndeclaredSymbol { name: String, pos: usize },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. } | ParseError::UndeclaredSymbol { pos, .. } => *pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(n) => format!("number {n}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), start));
                continue;
            }
            other => {
                return Err(ParseError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, chars.len()));
    Ok(out)
}

struct Parser<'a, S> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    allowed: &'a [S],
}

impl<'a, S: AsRef<str>> Parser<'a, S> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                pos: self.pos(),
                msg: format!(
                    "expected {}, found {}",
                    describe(&want),
                    describe(self.peek())
                ),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            return Ok(Expr::pow(base, self.unary()?));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(n) => Ok(Expr::Const(n)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(op) = UnaryOp::from_function_name(&name) {
                    self.expect(Tok::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::unary(op, arg));
                }
                if self.allowed.iter().any(|s| s.as_ref() == name) {
                    Ok(Expr::Var(name))
                } else {
                    Err(ParseError::UndeclaredSymbol { name, pos })
                }
            }
            other => Err(ParseError::Syntax {
                pos,
                msg: format!("expected operand, found {}", describe(&other)),
            }),
        }
    }
}

/// Parses `source`, accepting only identifiers listed in `allowed`.
pub fn parse<S: AsRef<str>>(source: &str, allowed: &[S]) -> Result<Expr, ParseError> {
    let toks = tokenize(source)?;
    let mut parser = Parser {
        toks,
        at: 0,
        allowed,
    };
    if *parser.peek() == Tok::End {
        return Err(ParseError::Syntax {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let e = parser.expr()?;
    if *parser.peek() != Tok::End {
        return Err(ParseError::Syntax {
            pos: parser.pos(),
            msg: format!("unexpected {}", describe(parser.peek())),
        });
    }
    Ok(e)
}
