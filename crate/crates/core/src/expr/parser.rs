//! Recursive-descent parser for the infix expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | ident | func '(' expr ')' | '(' expr ')'
//! ```

use super::{Func, Node};
use crate::chart::ChartSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(usize, Tok)> {
        self.skip_ws();
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((start, Tok::End));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            return Ok((start, Tok::Ident(s)));
        }
        if b"+-*/^()".contains(&c) {
            self.pos += 1;
            return Ok((start, Tok::Op(c as char)));
        }
        Err(Error::Syntax { position: start, expected: "number, identifier, operator or parenthesis".into() })
    }

    fn number(&mut self, start: usize) -> Result<(usize, Tok)> {
        let s = self.src;
        let digits = |p: &mut usize| {
            let from = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p - from
        };
        let mut n = digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            n += digits(&mut self.pos);
        }
        if n == 0 {
            return Err(Error::Syntax { position: start, expected: "digit".into() });
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if digits(&mut p) == 0 {
                return Err(Error::Syntax { position: p, expected: "exponent digits".into() });
            }
            self.pos = p;
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        let v: f64 = text.parse().map_err(|_| Error::Syntax { position: start, expected: "number".into() })?;
        Ok((start, Tok::Num(v)))
    }
}

pub(super) struct Parser<'a> {
    lexer: Lexer<'a>,
    chart: &'a ChartSpec,
    tok: Tok,
    at: usize,
}

impl<'a> Parser<'a> {
    pub(super) fn new(source: &'a str, chart: &'a ChartSpec) -> Result<Self> {
        if let Some(p) = source.bytes().position(|b| !b.is_ascii()) {
            return Err(Error::Syntax { position: p, expected: "ASCII input".into() });
        }
        let mut lexer = Lexer { src: source.as_bytes(), pos: 0 };
        let (at, tok) = lexer.next()?;
        Ok(Parser { lexer, chart, tok, at })
    }

    fn bump(&mut self) -> Result<()> {
        let (at, tok) = self.lexer.next()?;
        self.at = at;
        self.tok = tok;
        Ok(())
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.tok == Tok::Op(c) {
            self.bump()
        } else {
            Err(Error::Syntax { position: self.at, expected: format!("`{c}`") })
        }
    }

    pub(super) fn parse_all(mut self) -> Result<Node> {
        let node = self.expr()?;
        if self.tok != Tok::End {
            return Err(Error::Syntax { position: self.at, expected: "operator or end of input".into() });
        }
        Ok(node)
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.bump()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.bump()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.tok == Tok::Op('^') {
            self.bump()?;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Node::Const(v))
            }
            Tok::Ident(name) => {
                self.bump()?;
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "log" => Some(Func::Log),
                    _ => None,
                };
                if let Some(f) = func {
                    if self.tok != Tok::Op('(') {
                        return Err(Error::Syntax { position: self.at, expected: format!("`(` after `{name}`") });
                    }
                    self.bump()?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                self.chart.index_of(&name).map(Node::Var).ok_or(Error::UnknownIdentifier(name))
            }
            Tok::Op('(') => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => Err(Error::Syntax { position: self.at, expected: "number, identifier or `(`".into() }),
        }
    }
}
