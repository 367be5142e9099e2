//! Tokenizer for `.pwhile` programs, formulas and derivation files.

use super::span::Span;
use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    /// Decimal literal text such as `0.25`.
    Decimal(String),
    Str(String),
    /// `@name` annotation marker.
    Annot(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Assign,
    DotDot,
    Dot,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    ColonColon,
    AndAnd,
    OrOr,
    Bang,
    Implies,
    Iff,
    Diamond,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Decimal(s) => format!("number {s}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Annot(s) => format!("annotation @{s}"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Assign => ":=",
            Tok::DotDot => "..",
            Tok::Dot => ".",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::ColonColon => "::",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::Bang => "!",
            Tok::Implies => "==>",
            Tok::Iff => "<=>",
            Tok::Diamond => "<>",
            _ => "?",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer { src, chars: src.char_indices().collect(), pos: 0, line: 1, col: 1 }.run()
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.pos + k).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map(|&(o, _)| o).unwrap_or(self.src.len())
    }

    fn bump(&mut self) -> char {
        let c = self.chars[self.pos].1;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn here(&self) -> Span {
        let o = self.offset();
        Span::new(o, o, self.line, self.col)
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            let start = self.here();
            let Some(c) = self.peek(0) else {
                out.push(Token { tok: Tok::Eof, span: start });
                return Ok(out);
            };
            let tok = self.lex_one(c, start)?;
            let span = Span::new(start.start, self.offset(), start.line, start.col);
            out.push(Token { tok, span });
        }
    }

    fn skip_trivia(&mut self) -> Result<(), ParseError> {
        loop {
            match (self.peek(0), self.peek(1)) {
                (Some(c), _) if c.is_whitespace() => {
                    self.bump();
                }
                (Some('/'), Some('/')) => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                (Some('/'), Some('*')) => {
                    let start = self.here();
                    self.bump();
                    self.bump();
                    loop {
                        match (self.peek(0), self.peek(1)) {
                            (Some('*'), Some('/')) => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            (Some(_), _) => {
                                self.bump();
                            }
                            (None, _) => return Err(ParseError::syntax("unterminated comment", start)),
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn lex_one(&mut self, c: char, start: Span) -> Result<Tok, ParseError> {
        if c.is_ascii_alphabetic() || c == '_' {
            return Ok(Tok::Ident(self.ident()));
        }
        if c.is_ascii_digit() {
            return self.number(start);
        }
        let two = |a: char, b: char, s: &Self| s.peek(0) == Some(a) && s.peek(1) == Some(b);
        let tok = if two('=', '=', self) && self.peek(2) == Some('>') {
            self.bump();
            self.bump();
            self.bump();
            Tok::Implies
        } else if two('<', '=', self) && self.peek(2) == Some('>') {
            self.bump();
            self.bump();
            self.bump();
            Tok::Iff
        } else if two(':', '=', self) {
            self.bump();
            self.bump();
            Tok::Assign
        } else if two(':', ':', self) {
            self.bump();
            self.bump();
            Tok::ColonColon
        } else if two('.', '.', self) {
            self.bump();
            self.bump();
            Tok::DotDot
        } else if two('!', '=', self) {
            self.bump();
            self.bump();
            Tok::Ne
        } else if two('<', '=', self) {
            self.bump();
            self.bump();
            Tok::Le
        } else if two('>', '=', self) {
            self.bump();
            self.bump();
            Tok::Ge
        } else if two('<', '>', self) {
            self.bump();
            self.bump();
            Tok::Diamond
        } else if two('&', '&', self) {
            self.bump();
            self.bump();
            Tok::AndAnd
        } else if two('|', '|', self) {
            self.bump();
            self.bump();
            Tok::OrOr
        } else {
            self.bump();
            match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                ',' => Tok::Comma,
                ';' => Tok::Semi,
                ':' => Tok::Colon,
                '.' => Tok::Dot,
                '=' => Tok::Eq,
                '<' => Tok::Lt,
                '>' => Tok::Gt,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' | '×' => Tok::Star,
                '/' => Tok::Slash,
                '!' | '¬' => Tok::Bang,
                '∧' => Tok::AndAnd,
                '∨' => Tok::OrOr,
                '⇒' => Tok::Implies,
                '⇔' => Tok::Iff,
                '≤' => Tok::Le,
                '≥' => Tok::Ge,
                '≠' => Tok::Ne,
                '◇' => Tok::Diamond,
                '"' => return self.string(start),
                '@' => {
                    if !matches!(self.peek(0), Some(c) if c.is_ascii_alphabetic()) {
                        return Err(ParseError::syntax("expected annotation name after `@`", start));
                    }
                    Tok::Annot(self.ident())
                }
                other => {
                    return Err(ParseError::syntax(format!("unexpected character `{other}`"), start))
                }
            }
        };
        Ok(tok)
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(self.bump());
            } else {
                break;
            }
        }
        s
    }

    fn number(&mut self, start: Span) -> Result<Tok, ParseError> {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if c.is_ascii_digit() {
                s.push(self.bump());
            } else {
                break;
            }
        }
        if self.peek(0) == Some('.') && matches!(self.peek(1), Some(c) if c.is_ascii_digit()) {
            s.push(self.bump());
            while let Some(c) = self.peek(0) {
                if c.is_ascii_digit() {
                    s.push(self.bump());
                } else {
                    break;
                }
            }
            return Ok(Tok::Decimal(s));
        }
        s.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| ParseError::syntax(format!("integer literal {s} out of range"), start))
    }

    fn string(&mut self, start: Span) -> Result<Tok, ParseError> {
        let mut s = String::new();
        loop {
            match self.peek(0) {
                Some('"') => {
                    self.bump();
                    return Ok(Tok::Str(s));
                }
                Some(_) => s.push(self.bump()),
                None => return Err(ParseError::syntax("unterminated string", start)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn operators_and_unicode() {
        assert_eq!(
            toks("a ==> b <=> c ∧ d ≤ 0.5 // tail"),
            vec![
                Tok::Ident("a".into()),
                Tok::Implies,
                Tok::Ident("b".into()),
                Tok::Iff,
                Tok::Ident("c".into()),
                Tok::AndAnd,
                Tok::Ident("d".into()),
                Tok::Le,
                Tok::Decimal("0.5".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn ranges_and_diamonds() {
        assert_eq!(
            toks("{0..3} Lap<> Lap◇"),
            vec![
                Tok::LBrace,
                Tok::Int(0),
                Tok::DotDot,
                Tok::Int(3),
                Tok::RBrace,
                Tok::Ident("Lap".into()),
                Tok::Diamond,
                Tok::Ident("Lap".into()),
                Tok::Diamond,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_are_tracked() {
        let t = tokenize("x\n  := 1").unwrap();
        assert_eq!((t[1].span.line, t[1].span.col), (2, 3));
    }

    #[test]
    fn bad_character_has_position() {
        let e = tokenize("x := #").unwrap_err();
        assert_eq!(e.span.col, 6);
    }
}
