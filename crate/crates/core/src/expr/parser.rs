//! Recursive-descent expression parser.

use super::lexer::{tokenize, Tok, Token};
use super::{BinOp, Expr, Func, ParseError};

pub(crate) struct Cursor {
    toks: Vec<Token>,
    pos: usize,
    /// Parenthesis depth; newlines are insignificant while it is positive.
    depth: usize,
}

impl Cursor {
    pub fn new(toks: Vec<Token>) -> Self {
        Cursor { toks, pos: 0, depth: 0 }
    }

    pub fn enter(&mut self) {
        self.depth += 1;
    }

    pub fn leave(&mut self) {
        self.depth -= 1;
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn slice(&self, from: usize, to: usize) -> &[Token] {
        &self.toks[from..to]
    }

    fn skip_soft_newlines(&mut self) {
        if self.depth > 0 {
            while self.toks[self.pos].tok == Tok::Newline {
                self.pos += 1;
            }
        }
    }

    pub fn peek(&mut self) -> &Token {
        self.skip_soft_newlines();
        &self.toks[self.pos]
    }

    pub fn next(&mut self) -> Token {
        self.skip_soft_newlines();
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    pub fn skip_newlines(&mut self) {
        while self.toks[self.pos].tok == Tok::Newline {
            self.pos += 1;
        }
    }

    pub fn at_sym(&mut self, c: char) -> bool {
        self.peek().tok == Tok::Sym(c)
    }

    pub fn eat_sym(&mut self, c: char) -> bool {
        if self.at_sym(c) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn error_here(&mut self, msg: impl Into<String>) -> ParseError {
        let t = self.peek().clone();
        ParseError::syntax(t.line, t.col, msg)
    }

    pub fn expect_sym(&mut self, c: char) -> Result<Token, ParseError> {
        if self.at_sym(c) {
            Ok(self.next())
        } else {
            let found = describe(&self.peek().tok);
            Err(self.error_here(format!("expected '{c}', found {found}")))
        }
    }

    pub fn expect_ident(&mut self) -> Result<(String, Token), ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                Ok((s, t))
            }
            other => Err(ParseError::syntax(t.line, t.col, format!("expected identifier, found {}", describe(other)))),
        }
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.at_sym('+') {
                BinOp::Add
            } else if self.at_sym('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.next();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.at_sym('*') {
                BinOp::Mul
            } else if self.at_sym('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym('-') {
            // Only a bare literal folds into a negative constant, so `-(c)`
            // keeps its negation node.
            let literal = matches!(self.peek().tok, Tok::Num(_));
            let operand = self.unary()?;
            return Ok(match operand {
                Expr::Const(c) if literal => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.eat_sym('^') {
            return Ok(base);
        }
        let n = self.exponent()?;
        if self.at_sym('^') {
            return Err(self.error_here("chained exponents need parentheses"));
        }
        Ok(Expr::Pow(Box::new(base), n))
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.eat_sym('(');
        if paren {
            self.depth += 1;
        }
        let neg = self.eat_sym('-');
        let t = self.next();
        let n = match t.tok {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => v as i32,
            _ => {
                return Err(ParseError::syntax(t.line, t.col, "exponent must be an integer constant"));
            }
        };
        if paren {
            self.depth -= 1;
            self.expect_sym(')')?;
        }
        Ok(if neg { -n } else { n })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Ident(name) => {
                if self.at_sym('(') {
                    let f = Func::from_name(&name)
                        .ok_or_else(|| ParseError::syntax(t.line, t.col, format!("unknown function '{name}'")))?;
                    self.next();
                    self.depth += 1;
                    let arg = self.expr()?;
                    self.depth -= 1;
                    self.expect_sym(')')?;
                    Ok(Expr::Func(f, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Tok::Sym('(') => {
                self.depth += 1;
                let e = self.expr()?;
                self.depth -= 1;
                self.expect_sym(')')?;
                Ok(e)
            }
            other => Err(ParseError::syntax(t.line, t.col, format!("expected expression, found {}", describe(&other)))),
        }
    }
}

pub(crate) fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Num(v) => format!("number {v}"),
        Tok::Sym(c) => format!("'{c}'"),
        Tok::Arrow => "'->'".into(),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a standalone expression. Newlines are treated as whitespace.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks: Vec<Token> = tokenize(src)?.into_iter().filter(|t| t.tok != Tok::Newline).collect();
    let mut c = Cursor::new(toks);
    let e = c.expr()?;
    match c.peek().tok {
        Tok::Eof => Ok(e),
        ref other => {
            let msg = format!("unexpected {} after expression", describe(other));
            Err(c.error_here(msg))
        }
    }
}
