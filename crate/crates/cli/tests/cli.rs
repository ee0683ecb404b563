use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn skillcalc(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skillcalc"));
    cmd.args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SKILLCALC_OUTPUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn scripted_trace_matches_oracle() {
    let o = skillcalc(&["trace", "--scripted", "(3+5)*2"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().count() <= 41);
    assert!(
        text.lines()
            .last()
            .unwrap()
            .starts_with("answer=16 truth=16 match=true"),
        "{text}"
    );
}

#[test]
fn syntax_errors_exit_with_two() {
    let o = skillcalc(&["trace", "--scripted", "3+*"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    for p in [&a, &b] {
        let o = skillcalc(
            &[
                "generate",
                "--task",
                "S+S",
                "--count",
                "100",
                "--seed",
                "7",
                "--out",
                p.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(o.status.code(), Some(0));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 100);
    for line in text.lines() {
        let input = line.split('\t').next().unwrap();
        let b = input.as_bytes();
        assert!(
            b.len() == 3 && b[0].is_ascii_digit() && b[1] == b'+' && b[2].is_ascii_digit(),
            "{line}"
        );
    }
}

#[test]
fn expression_length_ten_has_about_three_operators() {
    let o = skillcalc(
        &[
            "generate",
            "--task",
            "expr+-*/()",
            "--length",
            "10",
            "--count",
            "1000",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let ops: usize = text
        .lines()
        .map(|l| {
            l.split('\t')
                .next()
                .unwrap()
                .chars()
                .filter(|c| "+-*/".contains(*c))
                .count()
        })
        .sum();
    let mean = ops as f64 / 1000.0;
    assert!((2.5..=3.5).contains(&mean), "mean operator count {mean}");
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = skillcalc(&["gradcheck"], &[]);
    assert_eq!(ok.status.code(), Some(0));
    let lines = stdout(&ok);
    assert!(lines.lines().count() >= 20);
    assert!(lines.lines().all(|l| l.ends_with("\tok")));
    let bad = skillcalc(&["gradcheck", "--corrupt"], &[]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn scripted_eval_grid_and_floor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.tsv");
    let o = skillcalc(
        &[
            "eval",
            "--scripted",
            "--tasks",
            "M*S",
            "--lengths",
            "5",
            "--n",
            "100",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let grid = fs::read_to_string(&out).unwrap();
    assert!(grid.contains("task\tlen5\nM*S\t1.0000\n"), "{grid}");
    assert!(out.with_extension("json").exists());
    let o = skillcalc(
        &[
            "eval",
            "--scripted",
            "--tasks",
            "M*S",
            "--lengths",
            "5",
            "--n",
            "20",
            "--min-accuracy",
            "1.5",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = skillcalc(
        &["eval", "--scripted", "--tasks", "Q+Q", "--lengths", "5"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

const SMALL_RUN: &str = r#"
seed = 3
curriculum = "curriculum.toml"
holdout = 10

[bsm]
l_io = 3
epochs = 400
batch = 10
[bsm.substrate]
hidden = 24
embedding = 8
learning_rate = 0.01
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8
init_scale = 0.08
seed = 1

[ism]
t_max = 10
l_max = 64
implicit_join = true
[ism.substrate]
hidden = 8
embedding = 6
learning_rate = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8
init_scale = 0.08
seed = 2

[train]
budget_episodes = 32
eval_samples = 4

[knobs]
n_c = 16
"#;

const CURRICULUM: &str = r#"
[[tasks]]
kind = "bsm"
[tasks.spec]
id = "S+S"
ops = ["+"]
operand = { min_digits = 1, max_digits = 1 }
rhs_operand = { min_digits = 1, max_digits = 1 }
operators = [1, 1]

[[tasks]]
kind = "ism"
pool_size = 20
[tasks.spec]
id = "M+M"
ops = ["+"]
operand = { min_digits = 1, max_digits = 2 }
rhs_operand = { min_digits = 1, max_digits = 2 }
operators = [1, 1]
"#;

#[test]
fn train_writes_partial_artifacts_then_eval_and_trace_use_them() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL_RUN).unwrap();
    fs::write(dir.path().join("curriculum.toml"), CURRICULUM).unwrap();
    let out = dir.path().join("out");
    let o = skillcalc(
        &[
            "train",
            "--config",
            dir.path().join("run.toml").to_str().unwrap(),
        ],
        &[("SKILLCALC_OUTPUT_DIR", &out)],
    );
    // the tiny M+M budget cannot reach mastery: error exit, artifacts kept
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("M+M"));
    for f in [
        "config.toml",
        "summary.tsv",
        "01_SpS.ckpt",
        "02_MpM.ckpt",
        "02_MpM.tsv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary = fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert!(summary.contains("S+S\tBsm\ttrue"), "{summary}");
    assert!(summary.contains("M+M\tIsm\tfalse"), "{summary}");
    let curve = fs::read_to_string(out.join("02_MpM.tsv")).unwrap();
    assert!(curve.starts_with("batch\tepisodes\tgreedy_acc\tmean_reward\tentropy\talpha\tloss"));

    let o = skillcalc(
        &[
            "eval",
            "--run",
            out.to_str().unwrap(),
            "--tasks",
            "S+S",
            "--lengths",
            "3",
            "--n",
            "50",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("S+S\t1.0000"), "{}", stdout(&o));

    let o = skillcalc(
        &[
            "trace",
            "--run",
            out.to_str().unwrap(),
            "--task",
            "M+M",
            "57+68",
        ],
        &[],
    );
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    assert!(
        last.contains("truth=125") && last.contains("reward="),
        "{text}"
    );
    assert_eq!(
        o.status.code(),
        Some(if last.contains("match=true") { 0 } else { 1 })
    );
    assert!(text.lines().count() <= 11);

    let o = skillcalc(
        &[
            "trace",
            "--run",
            out.to_str().unwrap(),
            "--task",
            "S+S",
            "1+2",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}
