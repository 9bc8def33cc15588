//! Tokenizer shared by the knowledge-base and query parsers.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Lowercase-initial identifier: predicate names, constants, keywords.
    Ident(String),
    /// Uppercase-initial identifier.
    Var(String),
    /// Numeric literal, kept as written.
    Number(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Pipe,
    Arrow,
    DoubleColon,
    Slash,
    Equals,
    Question,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Var(s) | Tok::Number(s) => write!(f, "'{s}'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::LBracket => f.write_str("'['"),
            Tok::RBracket => f.write_str("']'"),
            Tok::Comma => f.write_str("','"),
            Tok::Dot => f.write_str("'.'"),
            Tok::Pipe => f.write_str("'|'"),
            Tok::Arrow => f.write_str("'<-'"),
            Tok::DoubleColon => f.write_str("'::'"),
            Tok::Slash => f.write_str("'/'"),
            Tok::Equals => f.write_str("'='"),
            Tok::Question => f.write_str("'?'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, (Pos, String)> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let peek = chars.get(i + 1).copied();
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };

        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }

        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            '|' => Some(Tok::Pipe),
            '/' => Some(Tok::Slash),
            '=' => Some(Tok::Equals),
            '?' => Some(Tok::Question),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, pos });
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '<' && peek == Some('-') {
            out.push(Token { tok: Tok::Arrow, pos });
            advance(2, &mut i, &mut col);
            continue;
        }
        if c == ':' && peek == Some(':') {
            out.push(Token {
                tok: Tok::DoubleColon,
                pos,
            });
            advance(2, &mut i, &mut col);
            continue;
        }
        let starts_number = c.is_ascii_digit() || (c == '-' && peek.is_some_and(|d| d.is_ascii_digit()));
        if starts_number {
            let start = i;
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '-' || chars[k] == '+') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let text: String = chars[start..j].iter().collect();
            out.push(Token {
                tok: Tok::Number(text),
                pos,
            });
            advance(j - start, &mut i, &mut col);
            continue;
        }
        if c == '.' {
            out.push(Token { tok: Tok::Dot, pos });
            advance(1, &mut i, &mut col);
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let text: String = chars[start..j].iter().collect();
            let tok = if c.is_uppercase() || c == '_' {
                Tok::Var(text)
            } else {
                Tok::Ident(text)
            };
            out.push(Token { tok, pos });
            advance(j - start, &mut i, &mut col);
            continue;
        }
        return Err((pos, format!("unexpected character '{c}'")));
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, column: col },
    });
    Ok(out)
}

/// Cursor over a token stream.
pub(crate) struct Cursor {
    toks: Vec<Token>,
    at: usize,
}

impl Cursor {
    pub fn new(toks: Vec<Token>) -> Self {
        Cursor { toks, at: 0 }
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    pub fn peek_at(&self, n: usize) -> &Tok {
        let idx = (self.at + n).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    pub fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    pub fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok) -> Result<Pos, (Pos, String)> {
        let pos = self.pos();
        if self.eat(tok) {
            Ok(pos)
        } else {
            Err((pos, format!("expected {tok}, found {}", self.peek())))
        }
    }

    pub fn ident(&mut self, what: &str) -> Result<(String, Pos), (Pos, String)> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok((s, pos))
            }
            other => Err((pos, format!("expected {what}, found {other}"))),
        }
    }
}
