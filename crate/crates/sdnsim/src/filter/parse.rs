//! Recursive-descent parser. Precedence, tightest first: NOT, AND, OR.
//! AND/OR chains associate left.

use super::lex::{lex, Spanned, Tok};
use super::{CmpOp, Expr, FieldPath, ParseError};

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        len: text.len(),
    };
    let expr = p.or_expr()?;
    if let Some(sp) = p.peek() {
        return Err(ParseError {
            offset: sp.offset,
            expected: vec!["`AND`", "`OR`", "end of input"],
            found: Some(sp.tok.describe()),
        });
    }
    Ok(expr)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, expected: Vec<&'static str>) -> ParseError {
        match self.peek() {
            Some(sp) => ParseError {
                offset: sp.offset,
                expected,
                found: Some(sp.tok.describe()),
            },
            None => ParseError {
                offset: self.len,
                expected,
                found: None,
            },
        }
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.and_expr()?;
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::Or)) {
            self.next();
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.not_expr()?;
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::And)) {
            self.next();
            let right = self.not_expr()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().map(|s| &s.tok), Some(Tok::Not)) {
            self.next();
            let inner = self.not_expr()?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().map(|s| s.tok.clone()) {
            Some(Tok::LParen) => {
                self.next();
                let inner = self.or_expr()?;
                match self.peek().map(|s| &s.tok) {
                    Some(Tok::RParen) => {
                        self.next();
                        Ok(inner)
                    }
                    _ => Err(self.err_here(vec!["`)`", "`AND`", "`OR`"])),
                }
            }
            Some(Tok::Ident(_)) => self.comparison(),
            _ => Err(self.err_here(vec!["`(`", "field path", "`NOT`"])),
        }
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let field = self.field_path()?;
        let op = match self.peek().map(|s| s.tok.clone()) {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return Err(self.err_here(vec!["`=`", "`<>`", "`<`", "`<=`", "`>`", "`>=`"])),
        };
        self.next();
        match self.next() {
            Some(Spanned {
                tok: Tok::Literal(v),
                ..
            }) => Ok(Expr::Cmp {
                field,
                op,
                literal: v,
            }),
            other => {
                let (offset, found) = match other {
                    Some(sp) => (sp.offset, Some(sp.tok.describe())),
                    None => (self.len, None),
                };
                Err(ParseError {
                    offset,
                    expected: vec!["integer literal", "decimal literal", "string literal"],
                    found,
                })
            }
        }
    }

    fn field_path(&mut self) -> Result<FieldPath, ParseError> {
        let mut segments = Vec::new();
        match self.next() {
            Some(Spanned {
                tok: Tok::Ident(s), ..
            }) => segments.push(s),
            _ => unreachable!("comparison() is only entered on an identifier"),
        }
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::Dot)) {
            self.next();
            match self.peek().map(|s| s.tok.clone()) {
                Some(Tok::Ident(s)) => {
                    self.next();
                    segments.push(s);
                }
                _ => return Err(self.err_here(vec!["identifier"])),
            }
        }
        Ok(FieldPath::new(segments))
    }
}
