use super::ast::Span;
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Long(i64),
    Float(f32),
    Hash,
    /// Operator or punctuation.
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

// Longest first so that `<<<` wins over `<<` and `<`.
const PUNCTS: &[&str] = &[
    "<<<", ">>>", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "++", "+=", "-=", "(", ")", "{", "}", "[", "]", ";",
    ",", ".", "+", "-", "*", "/", "%", "<", ">", "=", "!", "&", "|",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if bytes[*i] == b'\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let span = Span::new(line, col);
        if c == b'#' {
            out.push(Token { tok: Tok::Hash, span });
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                advance(&mut i, &mut line, &mut col, 1);
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                span,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col, 1);
            }
            let mut is_float = false;
            if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) {
                is_float = true;
                advance(&mut i, &mut line, &mut col, 1);
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    advance(&mut i, &mut line, &mut col, 1);
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'-' || bytes[j] == b'+') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    let n = j - i;
                    advance(&mut i, &mut line, &mut col, n);
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        advance(&mut i, &mut line, &mut col, 1);
                    }
                }
            }
            let text = &src[start..i];
            let err = |m: &str| ParseError::new(span, format!("{m} `{text}`"));
            let tok = if is_float {
                if i < bytes.len() && bytes[i] == b'f' {
                    advance(&mut i, &mut line, &mut col, 1);
                }
                Tok::Float(text.parse().map_err(|_| err("bad float literal"))?)
            } else if i < bytes.len() && bytes[i] == b'L' {
                advance(&mut i, &mut line, &mut col, 1);
                Tok::Long(text.parse().map_err(|_| err("long literal out of range"))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err("integer literal out of range"))?)
            };
            out.push(Token { tok, span });
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                out.push(Token {
                    tok: Tok::Punct(p),
                    span,
                });
                advance(&mut i, &mut line, &mut col, p.len());
            }
            None => {
                return Err(ParseError::new(
                    span,
                    format!("unexpected character `{}`", src[i..].chars().next().unwrap_or('?')),
                ))
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span::new(line, col),
    });
    Ok(out)
}
