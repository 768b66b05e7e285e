use crate::error::{Result, TensorError};

/// Partition of the output layer into per-language index ranges
/// `[begin, end)`. Block `l` is the softmax support for items of language `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    blocks: Vec<(usize, usize)>,
}

impl BlockLayout {
    pub fn new(blocks: Vec<(usize, usize)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(TensorError::Invalid {
                op: "block_layout",
                msg: "at least one block is required".into(),
            });
        }
        let mut expected = 0;
        for (i, &(b, e)) in blocks.iter().enumerate() {
            if b != expected || e <= b {
                return Err(TensorError::Invalid {
                    op: "block_layout",
                    msg: format!("block {i} = [{b}, {e}) does not continue at {expected}"),
                });
            }
            expected = e;
        }
        Ok(Self { blocks })
    }

    /// Contiguous blocks of the given sizes, in order.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&n| {
                let r = (start, start + n);
                start += n;
                r
            })
            .collect();
        Self::new(blocks)
    }

    /// A single block spanning every output.
    pub fn single(total: usize) -> Result<Self> {
        Self::new(vec![(0, total)])
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.1)
    }

    pub fn block(&self, lang: usize) -> Result<(usize, usize)> {
        self.blocks.get(lang).copied().ok_or_else(|| TensorError::Invalid {
            op: "block_layout",
            msg: format!("language {lang} has no block ({} defined)", self.blocks.len()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_gaps_and_overlaps() {
        assert!(BlockLayout::new(vec![(0, 2), (3, 4)]).is_err());
        assert!(BlockLayout::new(vec![(0, 2), (1, 4)]).is_err());
        assert!(BlockLayout::new(vec![(1, 2)]).is_err());
        assert!(BlockLayout::new(vec![]).is_err());
        let l = BlockLayout::from_sizes(&[2, 2]).unwrap();
        assert_eq!(l.blocks(), &[(0, 2), (2, 4)]);
        assert_eq!(l.total(), 4);
    }
}
