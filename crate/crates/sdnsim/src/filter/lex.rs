//! Tokenizer for filter expressions. Every token carries the byte offset it
//! started at so parse errors can point into the source text.

use super::{ParseError, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Literal(Value),
    And,
    Or,
    Not,
    LParen,
    RParen,
    Dot,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Literal(Value::Int(i)) => format!("integer `{i}`"),
            Tok::Literal(Value::Dec(d)) => format!("decimal `{d}`"),
            Tok::Literal(Value::Str(s)) => format!("string `'{s}'`"),
            Tok::And => "`AND`".into(),
            Tok::Or => "`OR`".into(),
            Tok::Not => "`NOT`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Ne => "`<>`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Spanned {
    pub tok: Tok,
    pub offset: usize,
}

pub fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
            }
            b'(' => {
                out.push(Spanned {
                    tok: Tok::LParen,
                    offset: start,
                });
                i += 1;
            }
            b')' => {
                out.push(Spanned {
                    tok: Tok::RParen,
                    offset: start,
                });
                i += 1;
            }
            b'.' => {
                out.push(Spanned {
                    tok: Tok::Dot,
                    offset: start,
                });
                i += 1;
            }
            b'=' => {
                out.push(Spanned {
                    tok: Tok::Eq,
                    offset: start,
                });
                i += 1;
            }
            b'<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'>' {
                    out.push(Spanned {
                        tok: Tok::Ne,
                        offset: start,
                    });
                    i += 2;
                } else if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    out.push(Spanned {
                        tok: Tok::Le,
                        offset: start,
                    });
                    i += 2;
                } else {
                    out.push(Spanned {
                        tok: Tok::Lt,
                        offset: start,
                    });
                    i += 1;
                }
            }
            b'>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    out.push(Spanned {
                        tok: Tok::Ge,
                        offset: start,
                    });
                    i += 2;
                } else {
                    out.push(Spanned {
                        tok: Tok::Gt,
                        offset: start,
                    });
                    i += 1;
                }
            }
            b'\'' => {
                // Single-quoted string, no escape sequences.
                let mut j = i + 1;
                while j < bytes.len() && bytes[j] != b'\'' {
                    j += 1;
                }
                if j == bytes.len() {
                    return Err(ParseError {
                        offset: start,
                        expected: vec!["closing `'`"],
                        found: None,
                    });
                }
                let s = text[i + 1..j].to_string();
                out.push(Spanned {
                    tok: Tok::Literal(Value::Str(s)),
                    offset: start,
                });
                i = j + 1;
            }
            b'0'..=b'9' | b'-' => {
                let mut j = i;
                if bytes[j] == b'-' {
                    j += 1;
                }
                let digits_start = j;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j == digits_start {
                    return Err(ParseError {
                        offset: start,
                        expected: vec!["digit"],
                        found: found_at(text, j),
                    });
                }
                let mut is_dec = false;
                if j < bytes.len()
                    && bytes[j] == b'.'
                    && j + 1 < bytes.len()
                    && bytes[j + 1].is_ascii_digit()
                {
                    is_dec = true;
                    j += 1;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                let lit = &text[i..j];
                let tok = if is_dec {
                    let d: f64 = lit.parse().map_err(|_| ParseError {
                        offset: start,
                        expected: vec!["decimal literal"],
                        found: Some(format!("`{lit}`")),
                    })?;
                    Tok::Literal(Value::Dec(d))
                } else {
                    let n: i64 = lit.parse().map_err(|_| ParseError {
                        offset: start,
                        expected: vec!["integer literal in range"],
                        found: Some(format!("`{lit}`")),
                    })?;
                    Tok::Literal(Value::Int(n))
                };
                out.push(Spanned { tok, offset: start });
                i = j;
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let word = &text[i..j];
                // Keywords are case-sensitive; lowercase forms are ordinary
                // identifiers.
                let tok = match word {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push(Spanned { tok, offset: start });
                i = j;
            }
            _ => {
                return Err(ParseError {
                    offset: start,
                    expected: vec!["identifier", "literal", "operator", "`(`"],
                    found: found_at(text, start),
                });
            }
        }
    }
    Ok(out)
}

fn found_at(text: &str, offset: usize) -> Option<String> {
    text[offset..].chars().next().map(|c| format!("`{c}`"))
}
