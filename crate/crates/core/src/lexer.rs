//! Tokenizer shared by the flow, IR, functional-unit and voltage-level
//! file readers.
//!
//! All of those formats are whitespace-insensitive streams of identifiers,
//! numbers, quoted strings and a handful of punctuation marks, with `#`
//! starting a comment that runs to the end of the line.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    /// Numeric literal; the raw text is kept so integer-only fields can be
    /// checked without going through `f64`.
    Number(f64, String),
    Str(String),
    LBrace,
    RBrace,
    Colon,
    Comma,
    Eq,
    At,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Number(_, raw) => write!(f, "number `{raw}`"),
            TokenKind::Str(s) => write!(f, "string {s:?}"),
            TokenKind::LBrace => f.write_str("`{`"),
            TokenKind::RBrace => f.write_str("`}`"),
            TokenKind::Colon => f.write_str("`:`"),
            TokenKind::Comma => f.write_str("`,`"),
            TokenKind::Eq => f.write_str("`=`"),
            TokenKind::At => f.write_str("`@`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

/// Returns true when `s` is accepted as a bare identifier by [`tokenize`].
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) => chars.all(is_ident_continue),
        _ => false,
    }
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    while i < chars.len() {
        let c = chars[i];
        let (tok_line, tok_col) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let single = match c {
            '{' => Some(TokenKind::LBrace),
            '}' => Some(TokenKind::RBrace),
            ':' => Some(TokenKind::Colon),
            ',' => Some(TokenKind::Comma),
            '=' => Some(TokenKind::Eq),
            '@' => Some(TokenKind::At),
            _ => None,
        };
        if let Some(kind) = single {
            tokens.push(Token { kind, line: tok_line, col: tok_col });
            i += 1;
            col += 1;
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(LexError { line: tok_line, col: tok_col, message: "unterminated string".into() })
                    }
                    Some('"') => {
                        i += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => s.push(e),
                            _ => return Err(LexError { line, col, message: "invalid escape in string".into() }),
                        }
                        i += 2;
                        col += 2;
                    }
                    Some(&other) => {
                        s.push(other);
                        i += 1;
                        col += 1;
                    }
                }
            }
            tokens.push(Token { kind: TokenKind::Str(s), line: tok_line, col: tok_col });
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            || ((c == '-' || c == '+') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.'));
        if starts_number {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let raw: String = chars[start..i].iter().collect();
            col += i - start;
            let value: f64 = raw.parse().map_err(|_| LexError {
                line: tok_line,
                col: tok_col,
                message: format!("malformed number `{raw}`"),
            })?;
            tokens.push(Token { kind: TokenKind::Number(value, raw), line: tok_line, col: tok_col });
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_continue(chars[i]) {
                i += 1;
            }
            let ident: String = chars[start..i].iter().collect();
            col += i - start;
            tokens.push(Token { kind: TokenKind::Ident(ident), line: tok_line, col: tok_col });
            continue;
        }
        return Err(LexError { line, col, message: format!("unexpected character `{c}`") });
    }
    Ok(tokens)
}

/// Cursor over a token stream with the helpers every reader needs.
pub struct Cursor {
    tokens: Vec<Token>,
    pos: usize,
    end_line: usize,
}

impl Cursor {
    pub fn new(text: &str) -> Result<Self, LexError> {
        let tokens = tokenize(text)?;
        let end_line = text.lines().count().max(1);
        Ok(Cursor { tokens, pos: 0, end_line })
    }

    pub fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    pub fn peek_nth(&self, n: usize) -> Option<&Token> {
        self.tokens.get(self.pos + n)
    }

    pub fn advance(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    pub fn is_done(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    /// Position to report for an error at the current token (or end of input).
    pub fn here(&self) -> (usize, usize) {
        match self.peek() {
            Some(t) => (t.line, t.col),
            None => (self.end_line, 1),
        }
    }

    pub fn error(&self, message: impl Into<String>) -> LexError {
        let (line, col) = self.here();
        LexError { line, col, message: message.into() }
    }

    pub fn peek_is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Token { kind: TokenKind::Ident(s), .. }) if s == word)
    }

    pub fn peek_is(&self, kind: &TokenKind) -> bool {
        self.peek().is_some_and(|t| &t.kind == kind)
    }

    pub fn expect(&mut self, kind: TokenKind) -> Result<Token, LexError> {
        match self.peek() {
            Some(t) if t.kind == kind => Ok(self.advance().unwrap()),
            Some(t) => Err(self.error(format!("expected {kind}, found {}", t.kind))),
            None => Err(self.error(format!("expected {kind}, found end of input"))),
        }
    }

    pub fn expect_ident(&mut self) -> Result<(String, usize, usize), LexError> {
        match self.peek() {
            Some(Token { kind: TokenKind::Ident(_), .. }) => {
                let t = self.advance().unwrap();
                match t.kind {
                    TokenKind::Ident(s) => Ok((s, t.line, t.col)),
                    _ => unreachable!(),
                }
            }
            Some(t) => Err(self.error(format!("expected identifier, found {}", t.kind))),
            None => Err(self.error("expected identifier, found end of input")),
        }
    }

    pub fn expect_keyword(&mut self, word: &str) -> Result<(), LexError> {
        if self.peek_is_ident(word) {
            self.pos += 1;
            Ok(())
        } else {
            match self.peek() {
                Some(t) => Err(self.error(format!("expected `{word}`, found {}", t.kind))),
                None => Err(self.error(format!("expected `{word}`, found end of input"))),
            }
        }
    }

    pub fn expect_number(&mut self) -> Result<(f64, String), LexError> {
        match self.peek() {
            Some(Token { kind: TokenKind::Number(..), .. }) => match self.advance().unwrap().kind {
                TokenKind::Number(v, raw) => Ok((v, raw)),
                _ => unreachable!(),
            },
            Some(t) => Err(self.error(format!("expected number, found {}", t.kind))),
            None => Err(self.error("expected number, found end of input")),
        }
    }

    /// Reads an unsigned integer literal (no sign, fraction or exponent).
    pub fn expect_uint(&mut self) -> Result<u64, LexError> {
        let (line, col) = self.here();
        let (_, raw) = self.expect_number()?;
        raw.parse::<u64>().map_err(|_| LexError {
            line,
            col,
            message: format!("expected a nonnegative integer, found `{raw}`"),
        })
    }

    /// Reads a brace-delimited `{ value:prob, ... }` literal into raw points.
    pub fn expect_pmf_points(&mut self) -> Result<Vec<(f64, f64)>, LexError> {
        self.expect(TokenKind::LBrace)?;
        let mut points = Vec::new();
        while !self.peek_is(&TokenKind::RBrace) {
            let (value, _) = self.expect_number()?;
            self.expect(TokenKind::Colon)?;
            let (prob, _) = self.expect_number()?;
            points.push((value, prob));
            if self.peek_is(&TokenKind::Comma) {
                self.advance();
            } else {
                break;
            }
        }
        self.expect(TokenKind::RBrace)?;
        Ok(points)
    }
}
