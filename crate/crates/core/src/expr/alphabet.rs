//! The 17-symbol character alphabet shared by every skill module.
//!
//! Ids are dense: digits `0`-`9` map to 0-9, then `+ - * / ( )` map to
//! 10-15 and the blank padding symbol is 16. The canonical external form is
//! ASCII for everything except the blank, which renders as `·`. The typeset
//! glyphs `×`, `÷` and `−` are accepted on input and normalised.

use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use super::ExprError;

/// Number of distinct tokens.
pub const VOCAB_SIZE: usize = 17;

/// A single alphabet symbol.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(u8);

impl Token {
    pub const PLUS: Token = Token(10);
    pub const MINUS: Token = Token(11);
    pub const TIMES: Token = Token(12);
    pub const DIVIDE: Token = Token(13);
    pub const LPAREN: Token = Token(14);
    pub const RPAREN: Token = Token(15);
    pub const BLANK: Token = Token(16);

    pub fn from_id(id: usize) -> Option<Token> {
        (id < VOCAB_SIZE).then_some(Token(id as u8))
    }

    /// Token for a decimal digit. Panics if `d > 9`.
    pub fn digit(d: u8) -> Token {
        assert!(d <= 9, "digit out of range: {d}");
        Token(d)
    }

    #[inline]
    pub fn id(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_digit(self) -> bool {
        self.0 <= 9
    }

    pub fn digit_value(self) -> Option<u8> {
        self.is_digit().then_some(self.0)
    }

    /// One of `+ - * /`.
    #[inline]
    pub fn is_operator(self) -> bool {
        (10..=13).contains(&self.0)
    }

    #[inline]
    pub fn is_blank(self) -> bool {
        self == Token::BLANK
    }

    pub fn from_char(c: char) -> Option<Token> {
        let t = match c {
            '0'..='9' => Token(c as u8 - b'0'),
            '+' => Token::PLUS,
            '-' | '−' => Token::MINUS,
            '*' | '×' => Token::TIMES,
            '/' | '÷' => Token::DIVIDE,
            '(' => Token::LPAREN,
            ')' => Token::RPAREN,
            '·' => Token::BLANK,
            _ => return None,
        };
        Some(t)
    }

    /// Canonical external character.
    pub fn to_char(self) -> char {
        match self.0 {
            d @ 0..=9 => (b'0' + d) as char,
            10 => '+',
            11 => '-',
            12 => '*',
            13 => '/',
            14 => '(',
            15 => ')',
            _ => '·',
        }
    }

    /// Typeset character (`×`, `÷`) used in human-facing tables and traces.
    pub fn to_pretty_char(self) -> char {
        match self {
            Token::TIMES => '×',
            Token::DIVIDE => '÷',
            t => t.to_char(),
        }
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// A sequence of tokens: an expression, an answer or a memory snapshot.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<Token>);

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        TokenSeq(tokens)
    }

    /// Builds a sequence from raw ids, rejecting ids outside the alphabet.
    pub fn from_ids(ids: &[usize]) -> Option<Self> {
        ids.iter()
            .map(|&i| Token::from_id(i))
            .collect::<Option<Vec<_>>>()
            .map(TokenSeq)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.id()).collect()
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }

    /// Copy with every blank removed.
    pub fn without_blanks(&self) -> TokenSeq {
        TokenSeq(self.0.iter().copied().filter(|t| !t.is_blank()).collect())
    }

    pub fn pretty(&self) -> String {
        self.0.iter().map(|t| t.to_pretty_char()).collect()
    }
}

impl Deref for TokenSeq {
    type Target = Vec<Token>;

    fn deref(&self) -> &Vec<Token> {
        &self.0
    }
}

impl DerefMut for TokenSeq {
    fn deref_mut(&mut self) -> &mut Vec<Token> {
        &mut self.0
    }
}

impl FromIterator<Token> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().collect())
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.to_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl std::str::FromStr for TokenSeq {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, ExprError> {
        tokenize(s)
    }
}

/// Maps each character of `text` to its token.
pub fn tokenize(text: &str) -> Result<TokenSeq, ExprError> {
    if text.is_empty() {
        return Err(ExprError::EmptyInput);
    }
    text.chars()
        .enumerate()
        .map(|(i, c)| Token::from_char(c).ok_or(ExprError::UnknownCharacter(i)))
        .collect()
}

pub fn detokenize(seq: &[Token]) -> String {
    seq.iter().map(|t| t.to_char()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        let s = tokenize("12+3").unwrap();
        assert_eq!(s.ids(), vec![1, 2, 10, 3]);
        assert_eq!(s.len(), 4);
        assert_eq!(tokenize("(7*8)").unwrap().ids(), vec![14, 7, 12, 8, 15]);
        assert_eq!(tokenize("12a3"), Err(ExprError::UnknownCharacter(2)));
        assert_eq!(tokenize(""), Err(ExprError::EmptyInput));
    }

    #[test]
    fn ids_are_dense_and_round_trip() {
        for id in 0..VOCAB_SIZE {
            let t = Token::from_id(id).unwrap();
            assert_eq!(t.id(), id);
            assert_eq!(Token::from_char(t.to_char()), Some(t));
            assert_eq!(Token::from_char(t.to_pretty_char()), Some(t));
        }
        assert!(Token::from_id(VOCAB_SIZE).is_none());
    }

    #[test]
    fn typeset_glyphs_normalise() {
        let s = tokenize("6×7÷2−1").unwrap();
        assert_eq!(s.to_string(), "6*7/2-1");
        assert_eq!(s.pretty(), "6×7÷2-1");
    }

    #[test]
    fn canonical_round_trip() {
        for text in ["0", "(12+3)*45/6-7", "·9"] {
            assert_eq!(tokenize(text).unwrap().to_string(), text);
        }
    }
}
