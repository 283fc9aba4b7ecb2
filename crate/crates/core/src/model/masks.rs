/// Boolean attention mask; `true` means the key position is visible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    open: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let open = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Mask { rows, cols, open }
    }

    pub fn all_open(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, open: vec![true; rows * cols] }
    }

    pub fn all_closed(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, open: vec![false; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        self.open[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.open
    }

    /// All open `(row, col)` pairs in row-major order.
    pub fn open_set(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_open(i, j))
            .collect()
    }
}

/// Self and cross masks for one stream.
///
/// `self_mask[i][j]` is open iff `j ≤ i` and own position `j` is not padding;
/// `cross_mask[i][j]` is open iff `j ≤ i` and partner position `j` is not
/// padding. The cross diagonal is inclusive: at input position `i` the partner
/// has already emitted the token it holds at position `i`.
pub fn build_masks(
    len_own: usize,
    len_partner: usize,
    pad_own: &[bool],
    pad_partner: &[bool],
) -> (Mask, Mask) {
    assert_eq!(pad_own.len(), len_own, "pad_own length");
    assert_eq!(pad_partner.len(), len_partner, "pad_partner length");
    let self_mask = Mask::from_fn(len_own, len_own, |i, j| j <= i && !pad_own[j]);
    let cross_mask = Mask::from_fn(len_own, len_partner, |i, j| j <= i && !pad_partner[j]);
    (self_mask, cross_mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_position() {
        let (s, c) = build_masks(1, 1, &[false], &[false]);
        assert_eq!(s.open_set(), vec![(0, 0)]);
        assert_eq!(c.open_set(), vec![(0, 0)]);
    }

    #[test]
    fn inclusive_cross_diagonal() {
        let (_, c) = build_masks(3, 3, &[false; 3], &[false; 3]);
        assert_eq!(c.open_set(), vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
    }

    #[test]
    fn padded_partner_column_is_closed() {
        let (s, c) = build_masks(4, 4, &[false, false, false, true], &[false, true, false, false]);
        for i in 0..4 {
            assert!(!c.is_open(i, 1));
            assert!(!s.is_open(i, 3));
        }
        assert!(c.is_open(3, 2));
    }
}
