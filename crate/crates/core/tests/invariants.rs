use std::sync::Arc;

use num_bigint::BigInt;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use skillcalc::ctcs::{entropy_coefficient, sample_probabilities, DifficultyState};
use skillcalc::expr::{
    detokenize, evaluate, evaluate_independent, generate_sample, parse, parse_answer, render,
    tokenize, BinOp, OperandShape, TaskSpec, Token, TokenSeq,
};
use skillcalc::ism::{apply_action, CompositeAction, Memory, Outcome};
use skillcalc::ppo::{compute_reward, discounted_returns, normalize};
use skillcalc::skill::{OracleSkill, SkillRegistry};

fn digits() -> impl Strategy<Value = Vec<Token>> {
    prop::collection::vec((0u8..10).prop_map(Token::digit), 0..12)
}

fn any_tokens(max: usize) -> impl Strategy<Value = Vec<Token>> {
    prop::collection::vec(
        (0usize..17).prop_map(|i| Token::from_id(i).unwrap()),
        1..max,
    )
}

fn expression_spec() -> impl Strategy<Value = TaskSpec> {
    (
        prop::sample::subsequence(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div], 1..=4),
        any::<bool>(),
        3usize..15,
    )
        .prop_map(|(ops, parens, len)| {
            TaskSpec::expression(&ops, parens, OperandShape::multi(1, 3), [3, len])
        })
}

proptest! {
    #[test]
    fn generated_expressions_agree_with_shunting_yard(spec in expression_spec(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = generate_sample(&spec, &mut rng).unwrap();
        let ours = evaluate(&parse(&s.input).unwrap()).unwrap();
        prop_assert_eq!(&ours, &evaluate_independent(&s.input).unwrap());
        prop_assert_eq!(render(&ours), s.truth.clone());
        let [lo, hi] = spec.length.unwrap();
        prop_assert!((lo..=hi).contains(&s.input.len()));
        prop_assert_eq!(tokenize(&detokenize(&s.input)).unwrap(), s.input);
    }

    #[test]
    fn binary_ops_match_machine_integers(a in -10_000i64..10_000, b in -10_000i64..10_000) {
        let (x, y) = (BigInt::from(a), BigInt::from(b));
        prop_assert_eq!(BinOp::Add.apply(&x, &y).unwrap(), BigInt::from(a + b));
        prop_assert_eq!(BinOp::Sub.apply(&x, &y).unwrap(), BigInt::from(a - b));
        prop_assert_eq!(BinOp::Mul.apply(&x, &y).unwrap(), BigInt::from(a * b));
        if b != 0 {
            let exact = BigInt::from(a * b);
            prop_assert_eq!(BinOp::Div.apply(&exact, &y).unwrap(), x.clone());
            prop_assert_eq!(BinOp::Div.apply(&x, &y).is_ok(), a % b == 0);
        }
    }

    #[test]
    fn rendered_integers_parse_back(v in any::<i64>()) {
        let v = BigInt::from(v);
        prop_assert_eq!(parse_answer(&render(&v)), Some(v));
    }

    #[test]
    fn reward_bounds(output in digits(), truth in digits()) {
        let r = compute_reward(&output, &truth);
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert_eq!(r == 1.0, output == truth);
    }

    #[test]
    fn returns_decay_toward_the_start(len in 1usize..50, r in -1.0f64..1.0, gamma in 0.5f64..1.0) {
        let g = discounted_returns(len, r, gamma);
        prop_assert_eq!(g.len(), len);
        prop_assert!((g[len - 1] - r).abs() < 1e-12);
        for t in 1..len {
            prop_assert!((g[t - 1] - gamma * g[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_advantages_have_zero_mean_unit_spread(mut xs in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        normalize(&mut xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn probabilities_are_a_distribution_and_shift_invariant(d in prop::collection::vec(0u64..300, 1..40), shift in 0u64..1000, tau in 0.5f64..50.0) {
        let p = sample_probabilities(&d, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<u64> = d.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(sample_probabilities(&shifted, tau)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // harder samples are never less likely
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] > d[j] {
                    prop_assert!(p[i] > p[j]);
                }
            }
        }
    }

    #[test]
    fn entropy_coefficient_is_capped_and_monotone(d in prop::collection::vec(0u64..500, 1..20), extra in 0u64..100) {
        let a = entropy_coefficient(&d, 0.5, 0.01);
        prop_assert!((0.0..=0.5).contains(&a));
        let mut harder = d.clone();
        harder[0] += extra;
        prop_assert!(entropy_coefficient(&harder, 0.5, 0.01) >= a);
    }

    #[test]
    fn difficulty_counts_failures(outcomes in prop::collection::vec((0usize..10, any::<bool>()), 0..200)) {
        let mut s = DifficultyState::new(10);
        for &(i, ok) in &outcomes {
            s.record_outcome(i, ok).unwrap();
        }
        let failures = outcomes.iter().filter(|o| !o.1).count() as u64;
        prop_assert_eq!(s.d.iter().sum::<u64>(), failures);
        let tail = outcomes.iter().rev().take_while(|o| o.1).count();
        prop_assert_eq!(s.streak, tail);
    }

    #[test]
    fn splice_replaces_exactly_the_write_span(memory in any_tokens(20), raw in prop::array::uniform7(0usize..20)) {
        let mem = Memory::new(&memory, 64).unwrap();
        let len = mem.len();
        let mut action = CompositeAction::from_raw(raw.map(|x| x.min(len)));
        action.module = 1;
        let mut registry = SkillRegistry::new();
        registry.push(Arc::new(OracleSkill::new(TaskSpec::binary(BinOp::Add, OperandShape::single(), OperandShape::single()))));
        let Outcome::Continue(next, inv) = apply_action(&mem, &action, &registry, true).unwrap() else {
            return Err(TestCaseError::fail("module call halted"));
        };
        let w = action.write;
        prop_assert_eq!(next.len(), len - w.len() + inv.written.len());
        prop_assert_eq!(&next.tokens()[..w.start], &mem.tokens()[..w.start]);
        prop_assert_eq!(&next.tokens()[w.start + inv.written.len()..], &mem.tokens()[w.end..]);
        match &inv.result {
            Ok(out) => prop_assert_eq!(&inv.written, out),
            Err(_) => prop_assert_eq!(inv.written.clone(), TokenSeq::from_tokens(vec![Token::BLANK])),
        }
        prop_assert!(!inv.input.iter().any(|t| t.is_blank()));
    }

    #[test]
    fn halt_answers_memory_without_blanks(memory in any_tokens(20)) {
        let mem = Memory::new(&memory, 64).unwrap();
        match apply_action(&mem, &CompositeAction::HALT, &SkillRegistry::new(), true).unwrap() {
            Outcome::Halted(answer) => {
                let kept: Vec<Token> = memory.iter().copied().filter(|t| !t.is_blank()).collect();
                prop_assert_eq!(answer, TokenSeq::from_tokens(kept));
            }
            Outcome::Continue(..) => prop_assert!(false, "HALT continued"),
        }
    }
}
