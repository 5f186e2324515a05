//! Word-vector text files (`token v1 ... vd` per line, GloVe layout).

use std::io::BufRead;
use std::path::Path;

use rand::Rng;

use super::Vocab;
use crate::error::{Error, Result};
use crate::params::glorot_uniform;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EmbeddingStats {
    pub matched: usize,
    /// Lines whose vector length differed from `d_w` or failed to parse.
    pub skipped: usize,
}

/// Builds a `vocab.len() x d_w` table: rows for tokens found in the file are
/// copied, every other row comes from the Glorot initializer.
pub fn load_embeddings_from<R: BufRead>(
    reader: R,
    vocab: &Vocab,
    d_w: usize,
    rng: &mut impl Rng,
) -> std::io::Result<(Tensor<f32>, EmbeddingStats)> {
    let mut table = glorot_uniform::<f32>(vocab.len(), d_w, rng);
    let mut stats = EmbeddingStats::default();
    let mut filled = vec![false; vocab.len()];
    for line in reader.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: std::result::Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
        let values = match values {
            Ok(v) if v.len() == d_w => v,
            _ => {
                stats.skipped += 1;
                continue;
            }
        };
        let id = vocab.id(token);
        if id < 2 || filled[id] {
            continue;
        }
        filled[id] = true;
        stats.matched += 1;
        table.data_mut()[id * d_w..(id + 1) * d_w].copy_from_slice(&values);
    }
    Ok((table, stats))
}

pub fn load_embeddings(path: &Path, vocab: &Vocab, d_w: usize, rng: &mut impl Rng) -> Result<(Tensor<f32>, EmbeddingStats)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_embeddings_from(std::io::BufReader::new(file), vocab, d_w, rng).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::from_titles(["cat dog"], 1)
    }

    #[test]
    fn matched_row_is_copied() {
        let v = vocab();
        let file = "cat 0.1 0.2 0.3\nbird 1 2 3\n";
        let (t, s) = load_embeddings_from(file.as_bytes(), &v, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let id = v.id("cat");
        assert_eq!(t.row_slice(id), &[0.1, 0.2, 0.3]);
        assert_eq!(s, EmbeddingStats { matched: 1, skipped: 0 });
    }

    #[test]
    fn unmatched_rows_are_seeded_init() {
        let v = vocab();
        let (a, _) = load_embeddings_from("cat 1 1 1\n".as_bytes(), &v, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (b, _) = load_embeddings_from("".as_bytes(), &v, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dog = v.id("dog");
        assert_eq!(a.row_slice(dog), b.row_slice(dog));
        let limit = (6.0f32 / (v.len() + 3) as f32).sqrt();
        assert!(a.row_slice(dog).iter().all(|x| x.abs() <= limit));
    }

    #[test]
    fn wrong_dimension_line_is_skipped() {
        let v = vocab();
        let (_, s) = load_embeddings_from("cat 0.1 0.2\n".as_bytes(), &v, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s, EmbeddingStats { matched: 0, skipped: 1 });
    }
}
