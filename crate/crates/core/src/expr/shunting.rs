//! Shunting-yard evaluator. Shares no code path with the recursive-descent
//! parser so the two can cross-check each other.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::Zero;

use super::alphabet::Token;
use super::ast::digits_to_int;
use super::ExprError;

#[derive(Clone, Copy, Debug, PartialEq)]
enum StackItem {
    Op(Token),
    LParen(usize),
}

fn prec(op: Token) -> u8 {
    if op == Token::PLUS || op == Token::MINUS {
        1
    } else {
        2
    }
}

fn apply(op: Token, a: BigInt, b: BigInt) -> Result<BigInt, ExprError> {
    match op {
        Token::PLUS => Ok(a + b),
        Token::MINUS => Ok(a - b),
        Token::TIMES => Ok(a * b),
        _ => {
            if b.is_zero() {
                return Err(ExprError::DivisionByZero);
            }
            let (q, r) = a.div_rem(&b);
            if r.is_zero() {
                Ok(q)
            } else {
                Err(ExprError::InexactDivision)
            }
        }
    }
}

fn reduce(values: &mut Vec<BigInt>, op: Token) -> Result<(), ExprError> {
    let b = values.pop().expect("rhs operand");
    let a = values.pop().expect("lhs operand");
    values.push(apply(op, a, b)?);
    Ok(())
}

/// Evaluates a token sequence directly, without building a tree.
pub fn evaluate_independent(seq: &[Token]) -> Result<BigInt, ExprError> {
    if seq.is_empty() {
        return Err(ExprError::EmptyInput);
    }
    let mut values: Vec<BigInt> = Vec::new();
    let mut ops: Vec<StackItem> = Vec::new();
    let mut expect_operand = true;
    let mut i = 0;
    while i < seq.len() {
        let t = seq[i];
        if expect_operand {
            if t.is_digit() {
                let start = i;
                while i < seq.len() && seq[i].is_digit() {
                    i += 1;
                }
                values.push(digits_to_int(&seq[start..i]));
                expect_operand = false;
                continue;
            } else if t == Token::LPAREN {
                ops.push(StackItem::LParen(i));
            } else {
                return Err(ExprError::Syntax(i));
            }
        } else if t.is_operator() {
            while let Some(&StackItem::Op(top)) = ops.last() {
                if prec(top) >= prec(t) {
                    ops.pop();
                    reduce(&mut values, top)?;
                } else {
                    break;
                }
            }
            ops.push(StackItem::Op(t));
            expect_operand = true;
        } else if t == Token::RPAREN {
            loop {
                match ops.pop() {
                    Some(StackItem::Op(op)) => reduce(&mut values, op)?,
                    Some(StackItem::LParen(_)) => break,
                    None => return Err(ExprError::Syntax(i)),
                }
            }
        } else {
            return Err(ExprError::Syntax(i));
        }
        i += 1;
    }
    if expect_operand {
        return Err(ExprError::Syntax(seq.len()));
    }
    while let Some(item) = ops.pop() {
        match item {
            StackItem::Op(op) => reduce(&mut values, op)?,
            StackItem::LParen(_) => return Err(ExprError::Syntax(seq.len())),
        }
    }
    Ok(values.pop().expect("single result"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::tokenize;

    fn ev(s: &str) -> Result<BigInt, ExprError> {
        evaluate_independent(&tokenize(s).unwrap())
    }

    #[test]
    fn examples() {
        assert_eq!(ev("2+3*4").unwrap(), BigInt::from(14));
        assert_eq!(ev("(10-4)/3").unwrap(), BigInt::from(2));
        assert_eq!(ev("10-4-3").unwrap(), BigInt::from(3));
        assert_eq!(ev("2*(3+(4-1))*2").unwrap(), BigInt::from(24));
        assert_eq!(ev("7/2"), Err(ExprError::InexactDivision));
        assert_eq!(ev("1/0"), Err(ExprError::DivisionByZero));
    }

    #[test]
    fn syntax_positions_match_parser() {
        for s in ["2++3", "(2+3", "2+3)", "()", "2+", "(", "3(4)"] {
            let seq = tokenize(s).unwrap();
            let a = crate::expr::parse(&seq).err();
            let b = evaluate_independent(&seq).err();
            assert!(matches!(b, Some(ExprError::Syntax(_))), "{s}: {b:?}");
            assert_eq!(a, b, "{s}");
        }
    }
}
