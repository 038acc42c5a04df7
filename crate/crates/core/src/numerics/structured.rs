use serde::{Deserialize, Serialize};

use super::linalg::{cho_solve, cholesky, tri_solve, LowerTriangular};
use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Block-diagonal matrix. With `share_count > 1` the single stored block is
/// repeated that many times along the diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagonal {
    blocks: Vec<DenseMatrix>,
    share_count: usize,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<DenseMatrix>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::ShapeMismatch("block-diagonal matrix needs at least one block".into()));
        }
        if let Some(b) = blocks.iter().find(|b| !b.is_square()) {
            return Err(Error::NonSquare { rows: b.rows(), cols: b.cols() });
        }
        Ok(BlockDiagonal { blocks, share_count: 1 })
    }

    /// One block shared by `count` diagonal positions.
    pub fn shared(block: DenseMatrix, count: usize) -> Result<Self> {
        if !block.is_square() {
            return Err(Error::NonSquare { rows: block.rows(), cols: block.cols() });
        }
        if count == 0 {
            return Err(Error::ShapeMismatch("share count must be positive".into()));
        }
        Ok(BlockDiagonal { blocks: vec![block], share_count: count })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len() * self.share_count
    }

    pub fn is_shared(&self) -> bool {
        self.share_count > 1
    }

    pub fn share_count(&self) -> usize {
        self.share_count
    }

    /// The `l`-th diagonal block.
    pub fn block(&self, l: usize) -> &DenseMatrix {
        if self.share_count > 1 {
            &self.blocks[0]
        } else {
            &self.blocks[l]
        }
    }

    /// Distinct stored blocks (one entry when shared).
    pub fn stored_blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        (0..self.num_blocks()).map(|l| self.block(l).rows()).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.num_blocks() + 1);
        let mut o = 0;
        offs.push(0);
        for l in 0..self.num_blocks() {
            o += self.block(l).rows();
            offs.push(o);
        }
        offs
    }
}

/// Positive semi-definite matrix with exploitable structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StructuredPSD {
    Dense(DenseMatrix),
    BlockDiagonal(BlockDiagonal),
    /// `diag(alpha) + beta beta^T`.
    DiagPlusLowRank { diag: Vec<f64>, factor: DenseMatrix },
}

impl StructuredPSD {
    pub fn diag_plus_low_rank(diag: Vec<f64>, factor: DenseMatrix) -> Result<Self> {
        if factor.rows() != diag.len() {
            return Err(Error::DimensionMismatch(format!(
                "low-rank factor has {} rows for a diagonal of {}",
                factor.rows(),
                diag.len()
            )));
        }
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidParameter("diagonal entries must be positive".into()));
        }
        Ok(StructuredPSD::DiagPlusLowRank { diag, factor })
    }

    pub fn dim(&self) -> usize {
        match self {
            StructuredPSD::Dense(m) => m.rows(),
            StructuredPSD::BlockDiagonal(b) => b.dim(),
            StructuredPSD::DiagPlusLowRank { diag, .. } => diag.len(),
        }
    }

    pub fn densify(&self) -> DenseMatrix {
        match self {
            StructuredPSD::Dense(m) => m.clone(),
            StructuredPSD::BlockDiagonal(b) => {
                let offs = b.offsets();
                let n = b.dim();
                let mut out = DenseMatrix::zeros(n, n);
                for l in 0..b.num_blocks() {
                    let blk = b.block(l);
                    for i in 0..blk.rows() {
                        for j in 0..blk.cols() {
                            out[(offs[l] + i, offs[l] + j)] = blk[(i, j)];
                        }
                    }
                }
                out
            }
            StructuredPSD::DiagPlusLowRank { diag, factor } => {
                let mut out = factor.matmul(&factor.transpose()).expect("conforming shapes");
                for (i, d) in diag.iter().enumerate() {
                    out[(i, i)] += d;
                }
                out
            }
        }
    }

    /// Factorises every dense piece once so repeated solves reuse it.
    pub fn factor(&self) -> Result<StructuredFactor> {
        match self {
            StructuredPSD::Dense(m) => Ok(StructuredFactor::Dense(cholesky(m, 0.0)?)),
            StructuredPSD::BlockDiagonal(b) => {
                let factors = b
                    .stored_blocks()
                    .iter()
                    .map(|blk| cholesky(blk, 0.0))
                    .collect::<Result<Vec<_>>>()?;
                Ok(StructuredFactor::Blocks { factors, share_count: b.share_count })
            }
            StructuredPSD::DiagPlusLowRank { .. } => {
                Ok(StructuredFactor::Dense(cholesky(&self.densify(), 0.0)?))
            }
        }
    }
}

/// Cholesky factor matching a [`StructuredPSD`].
#[derive(Clone, Debug)]
pub enum StructuredFactor {
    Dense(LowerTriangular),
    Blocks { factors: Vec<LowerTriangular>, share_count: usize },
}

impl StructuredFactor {
    pub fn dim(&self) -> usize {
        match self {
            StructuredFactor::Dense(l) => l.dim(),
            StructuredFactor::Blocks { factors, share_count } => {
                factors.iter().map(LowerTriangular::dim).sum::<usize>() * share_count
            }
        }
    }

    pub fn num_blocks(&self) -> usize {
        match self {
            StructuredFactor::Dense(_) => 1,
            StructuredFactor::Blocks { factors, share_count } => factors.len() * share_count,
        }
    }

    pub fn block(&self, l: usize) -> &LowerTriangular {
        match self {
            StructuredFactor::Dense(f) => f,
            StructuredFactor::Blocks { factors, share_count } => {
                if *share_count > 1 {
                    &factors[0]
                } else {
                    &factors[l]
                }
            }
        }
    }

    pub fn logdet(&self) -> f64 {
        match self {
            StructuredFactor::Dense(l) => l.gram_logdet(),
            StructuredFactor::Blocks { factors, share_count } => {
                *share_count as f64 * factors.iter().map(LowerTriangular::gram_logdet).sum::<f64>()
            }
        }
    }

    /// `L^{-1} B` (or `L^{-T} B`) with `L` the (block) factor.
    pub fn tri_solve(&self, b: &DenseMatrix, transpose: bool) -> Result<DenseMatrix> {
        match self {
            StructuredFactor::Dense(l) => tri_solve(l, b, transpose),
            StructuredFactor::Blocks { .. } => self.blockwise(b, |l, rhs| tri_solve(l, rhs, transpose)),
        }
    }

    /// `K^{-1} B`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            StructuredFactor::Dense(l) => cho_solve(l, b),
            StructuredFactor::Blocks { .. } => self.blockwise(b, cho_solve),
        }
    }

    /// `L B`.
    pub fn lower_matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            StructuredFactor::Dense(l) => l.matmul(b),
            StructuredFactor::Blocks { .. } => self.blockwise(b, |l, rhs| l.matmul(rhs)),
        }
    }

    /// The factor as one dense lower triangle.
    pub fn to_lower(&self) -> LowerTriangular {
        match self {
            StructuredFactor::Dense(l) => l.clone(),
            StructuredFactor::Blocks { .. } => {
                let blocks: Vec<_> = (0..self.num_blocks()).map(|l| self.block(l).clone()).collect();
                LowerTriangular::block_diag(&blocks)
            }
        }
    }

    fn blockwise(
        &self,
        b: &DenseMatrix,
        op: impl Fn(&LowerTriangular, &DenseMatrix) -> Result<DenseMatrix>,
    ) -> Result<DenseMatrix> {
        if b.rows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "block solve of dim {} against {} rows",
                self.dim(),
                b.rows()
            )));
        }
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        let mut off = 0;
        for l in 0..self.num_blocks() {
            let f = self.block(l);
            let n = f.dim();
            let piece = op(f, &b.block(off, 0, n, b.cols()))?;
            for i in 0..n {
                out.row_mut(off + i).copy_from_slice(piece.row(i));
            }
            off += n;
        }
        Ok(out)
    }
}

/// Solves `K X = B`, exploiting the structure of `K`.
///
/// Diagonal-plus-low-rank systems go through the Woodbury identity and never
/// form the dense matrix.
pub fn structured_solve(k: &StructuredPSD, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows() != k.dim() {
        return Err(Error::DimensionMismatch(format!(
            "structured solve of dim {} against {} rows",
            k.dim(),
            b.rows()
        )));
    }
    match k {
        StructuredPSD::DiagPlusLowRank { diag, factor } => woodbury_solve(diag, factor, b),
        _ => k.factor()?.solve(b),
    }
}

/// `log |K|`; diagonal-plus-low-rank via the matrix determinant lemma.
pub fn structured_logdet(k: &StructuredPSD) -> Result<f64> {
    match k {
        StructuredPSD::DiagPlusLowRank { diag, factor } => {
            let (_, capacitance) = woodbury_capacitance(diag, factor)?;
            Ok(diag.iter().map(|d| d.ln()).sum::<f64>() + capacitance.gram_logdet())
        }
        _ => Ok(k.factor()?.logdet()),
    }
}

/// Returns `alpha^{-1} beta` and the Cholesky factor of `I + beta^T alpha^{-1} beta`.
fn woodbury_capacitance(diag: &[f64], factor: &DenseMatrix) -> Result<(DenseMatrix, LowerTriangular)> {
    let scaled = DenseMatrix::from_fn(factor.rows(), factor.cols(), |i, j| factor[(i, j)] / diag[i]);
    let mut cap = factor.tr_matmul(&scaled)?;
    cap.add_diag(1.0);
    Ok((scaled, cholesky(&cap, 0.0)?))
}

fn woodbury_solve(diag: &[f64], factor: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let b_scaled = DenseMatrix::from_fn(b.rows(), b.cols(), |i, j| b[(i, j)] / diag[i]);
    if factor.cols() == 0 {
        return Ok(b_scaled);
    }
    let (a_inv_beta, cap) = woodbury_capacitance(diag, factor)?;
    let inner = cho_solve(&cap, &factor.tr_matmul(&b_scaled)?)?;
    b_scaled.sub(&a_inv_beta.matmul(&inner)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_logdet(a: &DenseMatrix) -> f64 {
        cholesky(a, 0.0).unwrap().gram_logdet()
    }

    #[test]
    fn block_inverse_on_each_block() {
        let blk = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let k = StructuredPSD::BlockDiagonal(BlockDiagonal::new(vec![blk.clone(), blk]).unwrap());
        let x = structured_solve(&k, &DenseMatrix::identity(4)).unwrap();
        let inv = [[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]];
        for b in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((x[(2 * b + i, 2 * b + j)] - inv[i][j]).abs() < 1e-14);
                }
                assert_eq!(x[(2 * b + i, 2 * (1 - b))], 0.0);
            }
        }
    }

    #[test]
    fn zero_rank_is_diagonal_solve() {
        let k = StructuredPSD::diag_plus_low_rank(vec![1.0, 2.0, 4.0], DenseMatrix::zeros(3, 1)).unwrap();
        let b = DenseMatrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let x = structured_solve(&k, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((x[(i, j)] - b[(i, j)] / [1.0, 2.0, 4.0][i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn logdet_simple_cases() {
        let eye = StructuredPSD::Dense(DenseMatrix::identity(3));
        assert!(structured_logdet(&eye).unwrap().abs() < 1e-15);
        let d = StructuredPSD::Dense(DenseMatrix::from_diag(&[2.0, 2.0]));
        assert!((structured_logdet(&d).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn shared_block_densifies_to_repeats() {
        let blk = DenseMatrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let k = StructuredPSD::BlockDiagonal(BlockDiagonal::shared(blk.clone(), 3).unwrap());
        let d = k.densify();
        assert_eq!(d.rows(), 6);
        assert_eq!(d.block(4, 4, 2, 2), blk);
        assert!((structured_logdet(&k).unwrap() - dense_logdet(&d)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dense_solve(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
            cho_solve(&cholesky(a, 0.0).unwrap(), b).unwrap()
        }

        fn spd_block(n: usize, v: &[f64]) -> DenseMatrix {
            let m = DenseMatrix::from_fn(n, n, |i, j| v[i * n + j]);
            let mut a = m.tr_matmul(&m).unwrap();
            a.add_diag(0.5);
            a
        }

        fn check(k: &StructuredPSD, b: &DenseMatrix) {
            let dense = k.densify();
            let x = structured_solve(k, b).unwrap();
            assert!(x.max_abs_diff(&dense_solve(&dense, b)) < 1e-10);
            assert!((structured_logdet(k).unwrap() - dense_logdet(&dense)).abs() < 1e-10);
        }

        proptest! {
            #[test]
            fn structured_matches_dense(
                v in proptest::collection::vec(-1.0f64..1.0, 64),
                diag in proptest::collection::vec(0.2f64..3.0, 8),
                rhs in proptest::collection::vec(-2.0f64..2.0, 16),
            ) {
                let b = DenseMatrix::from_vec(8, 2, rhs).unwrap();
                check(&StructuredPSD::Dense(spd_block(8, &v)), &b);
                let blocks = vec![spd_block(3, &v[..9]), spd_block(5, &v[9..34])];
                check(&StructuredPSD::BlockDiagonal(BlockDiagonal::new(blocks).unwrap()), &b);
                check(&StructuredPSD::BlockDiagonal(BlockDiagonal::shared(spd_block(4, &v[..16]), 2).unwrap()), &b);
                let factor = DenseMatrix::from_fn(8, 3, |i, j| v[40 + i * 3 + j]);
                check(&StructuredPSD::diag_plus_low_rank(diag, factor).unwrap(), &b);
            }
        }
    }
}
