//! Expression trees, the precedence parser and the exact evaluator.

use std::fmt;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::Zero;

use super::alphabet::{Token, TokenSeq};
use super::ExprError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub const ALL: [BinOp; 4] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];

    pub fn from_token(t: Token) -> Option<BinOp> {
        match t {
            Token::PLUS => Some(BinOp::Add),
            Token::MINUS => Some(BinOp::Sub),
            Token::TIMES => Some(BinOp::Mul),
            Token::DIVIDE => Some(BinOp::Div),
            _ => None,
        }
    }

    pub fn token(self) -> Token {
        match self {
            BinOp::Add => Token::PLUS,
            BinOp::Sub => Token::MINUS,
            BinOp::Mul => Token::TIMES,
            BinOp::Div => Token::DIVIDE,
        }
    }

    pub fn symbol(self) -> char {
        self.token().to_char()
    }

    pub fn from_symbol(c: char) -> Option<BinOp> {
        Token::from_char(c).and_then(BinOp::from_token)
    }

    /// 1 for `+ -`, 2 for `* /`.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    pub fn apply(self, lhs: &BigInt, rhs: &BigInt) -> Result<BigInt, ExprError> {
        Ok(match self {
            BinOp::Add => lhs + rhs,
            BinOp::Sub => lhs - rhs,
            BinOp::Mul => lhs * rhs,
            BinOp::Div => {
                if rhs.is_zero() {
                    return Err(ExprError::DivisionByZero);
                }
                let (q, r) = lhs.div_rem(rhs);
                if !r.is_zero() {
                    return Err(ExprError::InexactDivision);
                }
                q
            }
        })
    }
}

/// Parsed expression. `Group` records an explicit pair of parentheses so the
/// tree serialises back to exactly the text it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Lit(BigInt),
    Bin {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Group(Box<Expr>),
}

impl Expr {
    pub fn lit(v: impl Into<BigInt>) -> Expr {
        Expr::Lit(v.into())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn group(inner: Expr) -> Expr {
        Expr::Group(Box::new(inner))
    }

    /// Strips any number of enclosing groups.
    pub fn ungrouped(&self) -> &Expr {
        let mut e = self;
        while let Expr::Group(inner) = e {
            e = inner;
        }
        e
    }

    pub fn operator_count(&self) -> usize {
        match self {
            Expr::Lit(_) => 0,
            Expr::Bin { lhs, rhs, .. } => 1 + lhs.operator_count() + rhs.operator_count(),
            Expr::Group(inner) => inner.operator_count(),
        }
    }

    /// Serialises with the minimal parentheses needed to keep the tree shape.
    pub fn to_minimal_string(&self) -> String {
        let mut out = String::new();
        write_minimal(self.ungrouped(), &mut out);
        out
    }

    /// Visits every binary node bottom-up, handing over its exact value.
    /// Stops at the first arithmetic error.
    pub fn evaluate_with<F>(&self, visit: &mut F) -> Result<BigInt, ExprError>
    where
        F: FnMut(&Expr, &BigInt) -> Result<(), ExprError>,
    {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Group(inner) => inner.evaluate_with(visit),
            Expr::Bin { op, lhs, rhs } => {
                let l = lhs.evaluate_with(visit)?;
                let r = rhs.evaluate_with(visit)?;
                let v = op.apply(&l, &r)?;
                visit(self, &v)?;
                Ok(v)
            }
        }
    }
}

fn write_minimal(e: &Expr, out: &mut String) {
    match e {
        Expr::Lit(v) => out.push_str(&v.to_string()),
        Expr::Group(inner) => write_minimal(inner, out),
        Expr::Bin { op, lhs, rhs } => {
            let lhs = lhs.ungrouped();
            let rhs = rhs.ungrouped();
            let lp = matches!(lhs, Expr::Bin { op: l, .. } if l.precedence() < op.precedence());
            let rp = matches!(rhs, Expr::Bin { op: r, .. } if r.precedence() <= op.precedence());
            wrap(lhs, lp, out);
            out.push(op.symbol());
            wrap(rhs, rp, out);
        }
    }
}

fn wrap(e: &Expr, paren: bool, out: &mut String) {
    if paren {
        out.push('(');
    }
    write_minimal(e, out);
    if paren {
        out.push(')');
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Bin { op, lhs, rhs } => write!(f, "{lhs}{}{rhs}", op.symbol()),
            Expr::Group(inner) => write!(f, "({inner})"),
        }
    }
}

/// Recursive-descent parser: `* /` bind tighter than `+ -`, both
/// left-associative, parentheses override.
pub fn parse(seq: &[Token]) -> Result<Expr, ExprError> {
    if seq.is_empty() {
        return Err(ExprError::EmptyInput);
    }
    let mut p = Parser { toks: seq, pos: 0 };
    let e = p.expr()?;
    if p.pos != seq.len() {
        return Err(ExprError::Syntax(p.pos));
    }
    Ok(e)
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.toks.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ (BinOp::Add | BinOp::Sub)) = self.peek().and_then(BinOp::from_token) {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.atom()?;
        while let Some(op @ (BinOp::Mul | BinOp::Div)) = self.peek().and_then(BinOp::from_token) {
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(t) if t.is_digit() => {
                let start = self.pos;
                while self.peek().is_some_and(Token::is_digit) {
                    self.pos += 1;
                }
                Ok(Expr::Lit(digits_to_int(&self.toks[start..self.pos])))
            }
            Some(Token::LPAREN) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(Token::RPAREN) {
                    return Err(ExprError::Syntax(self.pos));
                }
                self.pos += 1;
                Ok(Expr::group(inner))
            }
            _ => Err(ExprError::Syntax(self.pos)),
        }
    }
}

pub(crate) fn digits_to_int(digits: &[Token]) -> BigInt {
    let bytes: Vec<u8> = digits
        .iter()
        .map(|t| t.digit_value().expect("digit token"))
        .collect();
    BigInt::from_radix_be(Sign::Plus, &bytes, 10).expect("valid radix-10 digits")
}

/// Exact value of an expression tree.
pub fn evaluate(ast: &Expr) -> Result<BigInt, ExprError> {
    ast.evaluate_with(&mut |_, _| Ok(()))
}

/// Decimal rendering of an exact result, `-` prefixed when negative.
pub fn render(value: &BigInt) -> TokenSeq {
    value
        .to_string()
        .chars()
        .map(|c| Token::from_char(c).expect("decimal char"))
        .collect()
}

/// Parses a rendered answer back into an integer. Accepts an optional
/// leading `-`; rejects anything else that is not a digit.
pub fn parse_answer(seq: &[Token]) -> Option<BigInt> {
    let (neg, digits) = match seq.split_first() {
        Some((&Token::MINUS, rest)) => (true, rest),
        _ => (false, seq),
    };
    if digits.is_empty() || !digits.iter().all(|t| t.is_digit()) {
        return None;
    }
    let v = digits_to_int(digits);
    Some(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::tokenize;

    fn p(s: &str) -> Result<Expr, ExprError> {
        parse(&tokenize(s).unwrap())
    }

    #[test]
    fn precedence_and_grouping() {
        assert_eq!(
            p("2+3*4").unwrap(),
            Expr::bin(
                BinOp::Add,
                Expr::lit(2),
                Expr::bin(BinOp::Mul, Expr::lit(3), Expr::lit(4))
            )
        );
        assert_eq!(
            p("(2+3)*4").unwrap(),
            Expr::bin(
                BinOp::Mul,
                Expr::group(Expr::bin(BinOp::Add, Expr::lit(2), Expr::lit(3))),
                Expr::lit(4)
            )
        );
        // left associativity
        assert_eq!(evaluate(&p("10-4-3").unwrap()).unwrap(), BigInt::from(3));
        assert_eq!(evaluate(&p("64/8/2").unwrap()).unwrap(), BigInt::from(4));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        assert_eq!(p("2++3"), Err(ExprError::Syntax(2)));
        assert_eq!(p("(2+3"), Err(ExprError::Syntax(4)));
        assert_eq!(p("2+3)"), Err(ExprError::Syntax(3)));
        assert_eq!(p("()"), Err(ExprError::Syntax(1)));
        assert_eq!(p("-3"), Err(ExprError::Syntax(0)));
        assert_eq!(p("2+"), Err(ExprError::Syntax(2)));
        assert_eq!(p("4·2"), Err(ExprError::Syntax(1)));
    }

    #[test]
    fn exact_evaluation() {
        assert_eq!(evaluate(&p("2+3*4").unwrap()).unwrap(), BigInt::from(14));
        assert_eq!(evaluate(&p("84/7").unwrap()).unwrap(), BigInt::from(12));
        assert_eq!(
            evaluate(&p("7/2").unwrap()),
            Err(ExprError::InexactDivision)
        );
        assert_eq!(
            evaluate(&p("7/(3-3)").unwrap()),
            Err(ExprError::DivisionByZero)
        );
        let big = evaluate(&p("99999999999*99999999999").unwrap()).unwrap();
        assert_eq!(big.to_string(), "9999999999800000000001");
    }

    #[test]
    fn display_round_trips_exactly() {
        for s in ["(2+3)*4", "((1))", "12-(3-4)", "9/3/1"] {
            assert_eq!(p(s).unwrap().to_string(), s);
        }
        assert_eq!(p("((2+3))+(4*5)").unwrap().to_minimal_string(), "2+3+4*5");
        assert_eq!(p("2-(3+4)").unwrap().to_minimal_string(), "2-(3+4)");
    }

    #[test]
    fn render_and_parse_answer() {
        assert_eq!(render(&BigInt::from(-12)).to_string(), "-12");
        assert_eq!(
            parse_answer(&tokenize("-12").unwrap()),
            Some(BigInt::from(-12))
        );
        assert_eq!(parse_answer(&tokenize("1-2").unwrap()), None);
        assert_eq!(parse_answer(&[]), None);
    }
}
