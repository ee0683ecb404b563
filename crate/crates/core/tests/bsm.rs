use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillcalc::bsm::{enumerate_single_digit, BasicSkillModule, BsmConfig};
use skillcalc::expr::{evaluate_independent, render, tokenize, BinOp};
use skillcalc::skill::SkillModule;

fn train(op: BinOp, seed: u64) -> (BasicSkillModule, Option<usize>) {
    let cfg = BsmConfig::default();
    let data = enumerate_single_digit(op);
    let mut m = BasicSkillModule::new(
        &format!("S{}S", op.symbol()),
        cfg.l_io,
        cfg.substrate.clone(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Instant::now();
    let metrics = m
        .train_supervised(&data, cfg.epochs, cfg.batch, &mut rng)
        .unwrap();
    eprintln!(
        "{} mastered at {:?} in {:.1?}",
        m.task_id(),
        metrics.mastered_at,
        t.elapsed()
    );
    (m, metrics.mastered_at)
}

#[test]
fn subtraction_module_masters_enumeration() {
    let (m, at) = train(BinOp::Sub, 1);
    assert!(at.is_some());
    for a in 0..10 {
        for b in 0..10 {
            let q = tokenize(&format!("{a}-{b}")).unwrap();
            let truth = render(&evaluate_independent(&q).unwrap());
            assert_eq!(m.invoke(&q).unwrap(), truth);
        }
    }
    assert_eq!(
        m.invoke(&tokenize("3-5").unwrap()).unwrap().to_string(),
        "-2"
    );
}
