//! Tokenizer. Punctuation is structural; every other run of non-blank
//! characters is an atom whose meaning depends on where it appears.

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Atom(String),
    Str(String),
    Equals,
    LBracket,
    RBracket,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Newline,
    Eof,
}

impl TokenKind {
    pub fn text(&self) -> String {
        match self {
            TokenKind::Atom(s) => s.clone(),
            TokenKind::Str(s) => format!("\"{s}\""),
            TokenKind::Equals => "=".into(),
            TokenKind::LBracket => "[".into(),
            TokenKind::RBracket => "]".into(),
            TokenKind::LParen => "(".into(),
            TokenKind::RParen => ")".into(),
            TokenKind::LBrace => "{".into(),
            TokenKind::RBrace => "}".into(),
            TokenKind::Comma => ",".into(),
            TokenKind::Newline => "end of line".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
}

/// A lexical error: unterminated string.
#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, '=' | '[' | ']' | '(' | ')' | '{' | '}' | ',' | '#' | '"')
}

pub fn tokenize(text: &str) -> (Vec<Token>, Vec<LexError>) {
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    for (k, raw_line) in text.split('\n').enumerate() {
        let line = k + 1;
        let chars: Vec<char> = raw_line.trim_end_matches('\r').chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let punct = match c {
                '=' => Some(TokenKind::Equals),
                '[' => Some(TokenKind::LBracket),
                ']' => Some(TokenKind::RBracket),
                '(' => Some(TokenKind::LParen),
                ')' => Some(TokenKind::RParen),
                '{' => Some(TokenKind::LBrace),
                '}' => Some(TokenKind::RBrace),
                ',' => Some(TokenKind::Comma),
                _ => None,
            };
            if let Some(kind) = punct {
                tokens.push(Token { kind, line, column });
                i += 1;
            } else if c == '#' {
                break;
            } else if c.is_whitespace() {
                i += 1;
            } else if c == '"' {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' {
                    j += 1;
                }
                if j == chars.len() {
                    errors.push(LexError {
                        line,
                        column,
                        message: "unterminated string".into(),
                    });
                    break;
                }
                tokens.push(Token {
                    kind: TokenKind::Str(chars[start..j].iter().collect()),
                    line,
                    column,
                });
                i = j + 1;
            } else {
                let mut j = i;
                while j < chars.len() && !is_delimiter(chars[j]) {
                    j += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Atom(chars[i..j].iter().collect()),
                    line,
                    column,
                });
                i = j;
            }
        }
        tokens.push(Token {
            kind: TokenKind::Newline,
            line,
            column: chars.len() + 1,
        });
    }
    let (line, column) = tokens.last().map_or((1, 1), |t| (t.line, t.column));
    tokens.push(Token {
        kind: TokenKind::Eof,
        line,
        column,
    });
    (tokens, errors)
}
