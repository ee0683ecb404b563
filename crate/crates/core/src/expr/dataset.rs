//! Tab-separated dataset files: one `<expression>\t<answer>` pair per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::alphabet::tokenize;
use super::task::Sample;
use super::ExprError;

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<(), ExprError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        writeln!(w, "{}\t{}", s.input, s.truth)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses dataset text; `FormatError` carries the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<Sample>, ExprError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || ExprError::Format(i + 1);
            let (input, truth) = line.split_once('\t').ok_or_else(bad)?;
            if truth.contains('\t') {
                return Err(bad());
            }
            Ok(Sample {
                input: tokenize(input).map_err(|_| bad())?,
                truth: tokenize(truth).map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>, ExprError> {
    parse_dataset(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{generate_samples, BinOp, OperandShape, TaskSpec};
    use rand::SeedableRng;

    #[test]
    fn writes_the_documented_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        let s = Sample {
            input: tokenize("12+3").unwrap(),
            truth: tokenize("15").unwrap(),
        };
        write_dataset(std::slice::from_ref(&s), &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "12+3\t15\n");
        assert_eq!(read_dataset(&path).unwrap(), vec![s]);
    }

    #[test]
    fn round_trips_generated_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        let spec = TaskSpec::binary(
            BinOp::Sub,
            OperandShape::multi(1, 3),
            OperandShape::multi(1, 3),
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let samples = generate_samples(&spec, 1_000, &mut rng).unwrap();
        write_dataset(&samples, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), samples);
    }

    #[test]
    fn malformed_lines_are_reported() {
        assert_eq!(parse_dataset("12+3 15\n"), Err(ExprError::Format(1)));
        assert_eq!(parse_dataset("1+1\t2\n2?2\t4\n"), Err(ExprError::Format(2)));
        assert_eq!(parse_dataset("1+1\t2\t3\n"), Err(ExprError::Format(1)));
        assert!(matches!(
            read_dataset(Path::new("/nonexistent/x.tsv")),
            Err(ExprError::Io(_))
        ));
    }
}
