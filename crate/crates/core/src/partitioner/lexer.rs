//! A small SQL lexer. It knows enough to keep string literals, quoted
//! identifiers and comments from being mistaken for keywords; it does not
//! parse.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unterminated {what} starting at byte {position}")]
    Unterminated { what: &'static str, position: usize },
    #[error("unexpected character {ch:?} at byte {position}")]
    UnexpectedChar { ch: char, position: usize },
}

impl LexError {
    pub fn position(&self) -> usize {
        match self {
            LexError::Unterminated { position, .. } | LexError::UnexpectedChar { position, .. } => {
                *position
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word: keyword or unquoted identifier.
    Word,
    /// `"..."`, `` `...` `` or `[...]`.
    QuotedIdent,
    /// `'...'`.
    String,
    Number,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub offset: usize,
}

impl Token<'_> {
    /// Case-insensitive keyword test; only bare words can be keywords.
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Word && self.text.eq_ignore_ascii_case(kw)
    }
}

const PUNCT: &str = "(),.;*+-/%=<>!|&~?:@$^";

/// Splits `sql` into tokens, dropping whitespace and comments.
pub fn lex(sql: &str) -> Result<Vec<Token<'_>>, LexError> {
    let bytes = sql.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                match sql[i + 2..].find("*/") {
                    Some(end) => i = i + 2 + end + 2,
                    None => {
                        return Err(LexError::Unterminated {
                            what: "block comment",
                            position: start,
                        })
                    }
                }
                continue;
            }
            b'\'' | b'"' | b'`' => {
                let (kind, what) = match c {
                    b'\'' => (TokenKind::String, "string literal"),
                    _ => (TokenKind::QuotedIdent, "quoted identifier"),
                };
                i = scan_quoted(bytes, i, c).ok_or(LexError::Unterminated {
                    what,
                    position: start,
                })?;
                tokens.push(Token {
                    kind,
                    text: &sql[start..i],
                    offset: start,
                });
            }
            b'[' => {
                let end = sql[i..].find(']').ok_or(LexError::Unterminated {
                    what: "bracketed identifier",
                    position: start,
                })?;
                i += end + 1;
                tokens.push(Token {
                    kind: TokenKind::QuotedIdent,
                    text: &sql[start..i],
                    offset: start,
                });
            }
            b'0'..=b'9' => {
                i = scan_number(bytes, i);
                tokens.push(Token {
                    kind: TokenKind::Number,
                    text: &sql[start..i],
                    offset: start,
                });
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i = scan_number(bytes, i);
                tokens.push(Token {
                    kind: TokenKind::Number,
                    text: &sql[start..i],
                    offset: start,
                });
            }
            _ => {
                let ch = sql[i..].chars().next().expect("in bounds");
                if ch.is_alphabetic() || ch == '_' {
                    i += ch.len_utf8();
                    while let Some(next) = sql[i..].chars().next() {
                        if next.is_alphanumeric() || next == '_' || next == '$' {
                            i += next.len_utf8();
                        } else {
                            break;
                        }
                    }
                    tokens.push(Token {
                        kind: TokenKind::Word,
                        text: &sql[start..i],
                        offset: start,
                    });
                } else if PUNCT.contains(ch) {
                    i += 1;
                    // fold two-character operators
                    if let Some(&n) = bytes.get(i) {
                        let pair = [c, n];
                        if matches!(
                            &pair,
                            b"<=" | b">=" | b"<>" | b"!=" | b"==" | b"||" | b"<<" | b">>"
                        ) {
                            i += 1;
                        }
                    }
                    tokens.push(Token {
                        kind: TokenKind::Punct,
                        text: &sql[start..i],
                        offset: start,
                    });
                } else {
                    return Err(LexError::UnexpectedChar {
                        ch,
                        position: start,
                    });
                }
            }
        }
    }
    Ok(tokens)
}

/// Returns the index just past the closing quote; a doubled quote is an escape.
fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
        // exponent sign: 1e-5
        if (bytes[i] == b'e' || bytes[i] == b'E')
            && matches!(bytes.get(i + 1), Some(b'+') | Some(b'-'))
        {
            i += 2;
            continue;
        }
        i += 1;
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(sql: &str) -> Vec<(TokenKind, &str)> {
        lex(sql).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn basic_statement() {
        let toks = kinds("SELECT a, count(*) FROM t WHERE b >= 2.5");
        assert_eq!(toks[0], (TokenKind::Word, "SELECT"));
        assert!(toks.contains(&(TokenKind::Punct, ">=")));
        assert!(toks.contains(&(TokenKind::Number, "2.5")));
    }

    #[test]
    fn quoted_forms() {
        let toks = kinds(r#"SELECT "a ""b""", `c d`, [e f], 'it''s' FROM t"#);
        assert_eq!(toks[1], (TokenKind::QuotedIdent, r#""a ""b""""#));
        assert_eq!(toks[3], (TokenKind::QuotedIdent, "`c d`"));
        assert_eq!(toks[5], (TokenKind::QuotedIdent, "[e f]"));
        assert_eq!(toks[7], (TokenKind::String, "'it''s'"));
    }

    #[test]
    fn comments_dropped() {
        let toks = kinds("SELECT 1 -- WHERE\n/* UNION */ FROM t");
        assert_eq!(toks.len(), 4);
    }

    #[test]
    fn errors_carry_position() {
        assert_eq!(lex("SELECT 'abc").unwrap_err().position(), 7);
        assert_eq!(lex("SELECT # FROM t").unwrap_err().position(), 7);
        assert!(matches!(lex("/* x"), Err(LexError::Unterminated { .. })));
    }

    #[test]
    fn strftime_percent_inside_string() {
        assert!(lex("SELECT STRFTIME('%Y', dob) FROM drivers").is_ok());
    }
}
