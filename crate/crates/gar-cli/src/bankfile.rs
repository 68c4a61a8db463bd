//! The persisted model bank: a versioned text file holding one trained bank
//! per layer, plus the vocabulary fingerprints used to detect drift between
//! the bank and the catalogs a config references.

use std::fs;
use std::path::Path;

use gar_core::{parse_bank, serialize_bank, ModelBank, Vocabulary};

use crate::CliError;

const MAGIC: &str = "garbank 1";

pub struct BankFile {
    pub layers: Vec<(ModelBank, Vocabulary)>,
}

impl BankFile {
    pub fn fingerprints(&self) -> Vec<u64> {
        self.layers.iter().map(|(_, v)| v.fingerprint()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let prints: Vec<String> = self
            .fingerprints()
            .iter()
            .map(|fp| format!("{fp:016x}"))
            .collect();
        out.push_str(&format!("fingerprint {}\n", prints.join(" ")));
        out.push_str(&format!("layers {}\n", self.layers.len()));
        for (index, (bank, vocab)) in self.layers.iter().enumerate() {
            out.push_str(&format!("layer {index}\n"));
            out.push_str(&serialize_bank(bank, vocab));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.render())
            .map_err(|e| CliError::input(format!("cannot write bank {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<BankFile, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read bank {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|msg| CliError::input(format!("{}: {msg}", path.display())))
    }

    fn parse(text: &str) -> Result<BankFile, String> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(format!("not a bank file (expected `{MAGIC}` header)"));
        }
        let fingerprint_line = lines
            .next()
            .and_then(|l| l.strip_prefix("fingerprint "))
            .ok_or("missing fingerprint line")?;
        let declared: Vec<u64> = fingerprint_line
            .split_whitespace()
            .map(|fp| u64::from_str_radix(fp, 16).map_err(|_| format!("bad fingerprint `{fp}`")))
            .collect::<Result<_, _>>()?;
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("layers "))
            .and_then(|v| v.parse().ok())
            .ok_or("missing layer count")?;
        if declared.len() != count {
            return Err("fingerprint count does not match layer count".into());
        }

        // Split the remainder on `layer <k>` markers.
        let rest: Vec<&str> = lines.collect();
        let mut blocks: Vec<Vec<&str>> = Vec::new();
        for line in rest {
            if line.starts_with("layer ") {
                blocks.push(Vec::new());
            } else if let Some(block) = blocks.last_mut() {
                block.push(line);
            } else if !line.trim().is_empty() {
                return Err(format!("unexpected content before first layer: `{line}`"));
            }
        }
        if blocks.len() != count {
            return Err(format!("expected {count} layers, found {}", blocks.len()));
        }
        let mut layers = Vec::with_capacity(count);
        for (index, block) in blocks.iter().enumerate() {
            let (bank, vocab) =
                parse_bank(&block.join("\n")).map_err(|e| format!("layer {index}: {e}"))?;
            if vocab.fingerprint() != declared[index] {
                return Err(format!("layer {index}: fingerprint does not match content"));
            }
            layers.push((bank, vocab));
        }
        Ok(BankFile { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gar_core::{build_model_bank, parse_catalog, DEFAULT_ALPHA, DEFAULT_SELF_LOOP};

    #[test]
    fn bank_file_round_trips() {
        let c1 = parse_catalog("a - b - c -> X\n").unwrap();
        let c2 = parse_catalog("X - d - e -> Y\n").unwrap();
        let file = BankFile {
            layers: vec![
                (
                    build_model_bank(&c1, DEFAULT_ALPHA, DEFAULT_SELF_LOOP).unwrap(),
                    c1.vocab.clone(),
                ),
                (
                    build_model_bank(&c2, DEFAULT_ALPHA, DEFAULT_SELF_LOOP).unwrap(),
                    c2.vocab.clone(),
                ),
            ],
        };
        let text = file.render();
        let parsed = BankFile::parse(&text).unwrap();
        assert_eq!(parsed.layers.len(), 2);
        assert_eq!(parsed.render(), text);
        assert_eq!(parsed.fingerprints(), file.fingerprints());
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(BankFile::parse("something else\n").is_err());
    }
}
