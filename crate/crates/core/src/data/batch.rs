use crate::data::vocab::{TokenSequence, PAD_ID};

/// Queries of a mini-batch right-padded to a common length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub queries: Vec<TokenSequence>,
    /// Padded length `L`.
    pub len: usize,
}

/// Pads every query to `len` with [`PAD_ID`] and a `false` mask.
///
/// Panics if a query is longer than `len`.
pub fn make_batch(queries: &[TokenSequence], len: usize) -> Batch {
    let queries = queries
        .iter()
        .map(|q| {
            let n = q.len();
            assert!(n <= len, "query of {n} tokens exceeds padded length {len}");
            let mut token_ids = q.token_ids[..n].to_vec();
            token_ids.resize(len, PAD_ID);
            let mut mask = vec![true; n];
            mask.resize(len, false);
            TokenSequence { token_ids, mask }
        })
        .collect();
    Batch { queries, len }
}

impl Batch {
    /// Padded length needed for `queries`: the longest one.
    pub fn longest(queries: &[TokenSequence]) -> usize {
        queries.iter().map(TokenSequence::len).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(n: usize) -> TokenSequence {
        TokenSequence {
            token_ids: (2..2 + n).collect(),
            mask: vec![true; n],
        }
    }

    #[test]
    fn pads_to_longest() {
        let b = make_batch(&[seq(2), seq(3)], 3);
        assert_eq!(b.queries[0].mask, vec![true, true, false]);
        assert_eq!(b.queries[1].mask, vec![true, true, true]);
        assert_eq!(b.queries[0].token_ids[2], PAD_ID);
    }

    #[test]
    fn single_sample_unpadded() {
        let b = make_batch(&[seq(4)], 4);
        assert!(b.queries[0].mask.iter().all(|&m| m));
    }

    #[test]
    fn true_count_equals_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lens: Vec<usize> = (0..4).map(|_| rng.random_range(1..9)).collect();
        let seqs: Vec<_> = lens.iter().map(|&n| seq(n)).collect();
        let len = Batch::longest(&seqs);
        let b = make_batch(&seqs, len);
        for (q, n) in b.queries.iter().zip(&lens) {
            assert_eq!(q.mask.iter().filter(|m| **m).count(), *n);
            assert_eq!(q.padded_len(), len);
            assert!(q.token_ids[*n..].iter().all(|&t| t == PAD_ID));
        }
    }
}
