use rand::seq::index;
use rand::Rng;

use super::{EmbedError, Vocab, CLS, MASK, SEP};
use crate::asm::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PretrainTask {
    Mlm,
    Cwp,
    Dup,
}

/// Encoder input. `segment_ids[i]` is the instruction token `i` belongs to
/// (0 for `[CLS]`), `position_ids` is `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn push(&mut self, id: usize, segment: usize) {
        self.position_ids.push(self.token_ids.len());
        self.token_ids.push(id);
        self.segment_ids.push(segment);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Targets {
    /// `(position, original id)` for each masked position.
    Masked(Vec<(usize, usize)>),
    Binary(bool),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainBatch {
    pub sequence: Sequence,
    pub task: PretrainTask,
    pub targets: Targets,
}

/// `[CLS]` followed by every token of the block, truncated to `max_seq`.
/// Segment ids are capped at `max_seq - 1`.
pub fn block_sequence(vocab: &Vocab, instructions: &[Vec<Token>], max_seq: usize) -> Sequence {
    let mut s = Sequence {
        token_ids: vec![],
        segment_ids: vec![],
        position_ids: vec![],
    };
    s.push(CLS, 0);
    'outer: for (i, row) in instructions.iter().enumerate() {
        for t in row {
            if s.len() == max_seq {
                break 'outer;
            }
            s.push(vocab.id(&t.text), (i + 1).min(max_seq - 1));
        }
    }
    s
}

/// `[CLS] a [SEP] b`, with `a` in segment 1 and `[SEP]`, `b` in segment 2.
pub fn pair_sequence(vocab: &Vocab, a: &[Token], b: &[Token], max_seq: usize) -> Sequence {
    let mut s = Sequence {
        token_ids: vec![],
        segment_ids: vec![],
        position_ids: vec![],
    };
    s.push(CLS, 0);
    let items = a
        .iter()
        .map(|t| (vocab.id(&t.text), 1))
        .chain([(SEP, 2)])
        .chain(b.iter().map(|t| (vocab.id(&t.text), 2)));
    for (id, seg) in items.take(max_seq.saturating_sub(1)) {
        s.push(id, seg.min(max_seq - 1));
    }
    s
}

/// Masks each non-special position with probability `mask_prob`; one
/// position is forced when none is drawn.
pub fn make_mlm_batch<R: Rng>(
    sequence: &Sequence,
    mask_prob: f64,
    rng: &mut R,
) -> Result<PretrainBatch, EmbedError> {
    let candidates: Vec<usize> = (0..sequence.len())
        .filter(|&i| ![CLS, SEP].contains(&sequence.token_ids[i]))
        .collect();
    if candidates.is_empty() {
        return Err(EmbedError::EmptySequence);
    }
    let mut chosen: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(mask_prob.clamp(0.0, 1.0)))
        .collect();
    if chosen.is_empty() {
        chosen.push(candidates[rng.gen_range(0..candidates.len())]);
    }
    let mut masked = sequence.clone();
    let targets = chosen
        .into_iter()
        .map(|p| {
            masked.token_ids[p] = MASK;
            (p, sequence.token_ids[p])
        })
        .collect();
    Ok(PretrainBatch {
        sequence: masked,
        task: PretrainTask::Mlm,
        targets: Targets::Masked(targets),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CwpPairs {
    /// `(i, j, co-occur)` instruction index pairs with `i < j`.
    pub pairs: Vec<(usize, usize, bool)>,
    /// Fewer far pairs existed than positives, so the set is unbalanced.
    pub negatives_exhausted: bool,
}

/// Every pair at distance `<= window` is a positive; as many negatives are
/// drawn without replacement from the pairs farther apart.
pub fn make_cwp_pairs<R: Rng>(
    len: usize,
    window: usize,
    rng: &mut R,
) -> Result<CwpPairs, EmbedError> {
    if len < 2 {
        return Err(EmbedError::TooShort(len));
    }
    if window == 0 {
        return Err(EmbedError::ZeroWindow);
    }
    let mut pairs = Vec::new();
    let mut far = Vec::new();
    for i in 0..len {
        for j in i + 1..len {
            if j - i <= window {
                pairs.push((i, j, true));
            } else {
                far.push((i, j, false));
            }
        }
    }
    let want = pairs.len();
    let take = want.min(far.len());
    pairs.extend(
        index::sample(rng, far.len(), take)
            .into_iter()
            .map(|k| far[k]),
    );
    Ok(CwpPairs {
        pairs,
        negatives_exhausted: take < want,
    })
}

/// `count` pairs `(a, b, in_order)`: a random `i < j`, emitted as `(i, j, true)`
/// or `(j, i, false)` on a fair coin.
pub fn make_dup_pairs<R: Rng>(
    len: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize, bool)>, EmbedError> {
    if len < 2 {
        return Err(EmbedError::TooShort(len));
    }
    Ok((0..count)
        .map(|_| {
            let i = rng.gen_range(0..len - 1);
            let j = rng.gen_range(i + 1..len);
            if rng.gen_bool(0.5) {
                (i, j, true)
            } else {
                (j, i, false)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::tokenize_instruction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(n: usize) -> Sequence {
        let mut s = Sequence {
            token_ids: vec![],
            segment_ids: vec![],
            position_ids: vec![],
        };
        s.push(CLS, 0);
        for i in 0..n {
            s.push(10 + i, 1);
        }
        s
    }

    #[test]
    fn mlm_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_mlm_batch(&seq(6), 1.0, &mut rng).unwrap();
        let Targets::Masked(t) = &b.targets else {
            panic!()
        };
        assert_eq!(
            t.iter().map(|x| x.1).collect::<Vec<_>>(),
            (10..16).collect::<Vec<_>>()
        );
        assert!(b.sequence.token_ids[1..].iter().all(|&x| x == MASK));
        assert_eq!(b.sequence.token_ids[0], CLS);

        let b = make_mlm_batch(&seq(6), 0.0, &mut rng).unwrap();
        let Targets::Masked(t) = &b.targets else {
            panic!()
        };
        assert_eq!(t.len(), 1);
        assert!(matches!(
            make_mlm_batch(&seq(0), 0.5, &mut rng),
            Err(EmbedError::EmptySequence)
        ));
    }

    #[test]
    fn mlm_is_seeded() {
        let a = make_mlm_batch(&seq(40), 0.15, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_mlm_batch(&seq(40), 0.15, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cwp_four_instructions() {
        // distances: (0,1)=1 (0,2)=2 (0,3)=3 (1,2)=1 (1,3)=2 (2,3)=1
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = make_cwp_pairs(4, 2, &mut rng).unwrap();
        assert!(c.pairs.contains(&(0, 1, true)));
        assert!(c.pairs.contains(&(0, 3, false)));
        assert_eq!(c.pairs.iter().filter(|p| p.2).count(), 5);
        assert!(c.negatives_exhausted);
    }

    #[test]
    fn cwp_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = make_cwp_pairs(5, 4, &mut rng).unwrap();
        assert!(c.pairs.iter().all(|p| p.2));
        assert!(c.negatives_exhausted);
        assert!(matches!(
            make_cwp_pairs(5, 0, &mut rng),
            Err(EmbedError::ZeroWindow)
        ));
        assert!(matches!(
            make_cwp_pairs(1, 2, &mut rng),
            Err(EmbedError::TooShort(1))
        ));
        let c = make_cwp_pairs(20, 2, &mut rng).unwrap();
        assert_eq!(
            c.pairs.iter().filter(|p| p.2).count(),
            c.pairs.iter().filter(|p| !p.2).count()
        );
        assert!(!c.negatives_exhausted);
    }

    #[test]
    fn dup_labels_follow_order_and_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs = make_dup_pairs(6, 1000, &mut rng).unwrap();
        assert!(pairs.iter().all(|&(a, b, l)| l == (a < b)));
        let pos = pairs.iter().filter(|p| p.2).count() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&pos), "{pos}");
        assert!(make_dup_pairs(1, 3, &mut rng).is_err());
    }

    #[test]
    fn sequences() {
        let rows = vec![
            tokenize_instruction("mov", "rax, rbx").unwrap(),
            tokenize_instruction("ret", "").unwrap(),
        ];
        let v = Vocab::from_corpus(rows.iter().flatten());
        let s = block_sequence(&v, &rows, 64);
        assert_eq!(s.token_ids.len(), 5);
        assert_eq!(s.segment_ids, vec![0, 1, 1, 1, 2]);
        assert_eq!(s.position_ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(block_sequence(&v, &rows, 3).len(), 3);
        let p = pair_sequence(&v, &rows[0], &rows[1], 64);
        assert_eq!(p.token_ids[4], SEP);
        assert_eq!(p.segment_ids, vec![0, 1, 1, 1, 2, 2]);
    }
}
