//! Implicit representation of the constraint operator `A = [Omega^T, I]^T`,
//! where `Omega = E (x) I_p` maps the coefficient stack to all pairwise
//! client-block differences.
//!
//! `A` is never materialized in solver paths: the fusion block has
//! `p*M(M-1)/2` rows, quadratic in the client count. A dense constructor is
//! provided for verification on small layouts only.

use ndarray::{Array2, s};

use crate::error::{Result, RowFedError};
use crate::model::CoefficientStack;

/// Row geometry of the split variable. Fusion rows come first, ordered by
/// lexicographic client pair `(a, b)` with `a < b`, each pair contributing
/// `p` consecutive rows (one per covariate). The trailing `M*p` identity rows
/// copy the stack itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionLayout {
    m: usize,
    p: usize,
    q: usize,
}

impl FusionLayout {
    pub fn new(m: usize, p: usize, q: usize) -> Result<Self> {
        if m == 0 || p == 0 || q == 0 {
            return Err(RowFedError::InvalidArgument(format!(
                "layout dimensions must be positive, got ({m}, {p}, {q})"
            )));
        }
        Ok(Self { m, p, q })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn pair_count(&self) -> usize {
        self.m * (self.m - 1) / 2
    }

    pub fn fusion_rows(&self) -> usize {
        self.p * self.pair_count()
    }

    pub fn identity_rows(&self) -> usize {
        self.m * self.p
    }

    pub fn total_rows(&self) -> usize {
        self.fusion_rows() + self.identity_rows()
    }

    /// Client pairs in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let m = self.m;
        (0..m).flat_map(move |a| ((a + 1)..m).map(move |b| (a, b)))
    }

    /// Index of pair `(a, b)` with `a < b` in lexicographic order.
    pub fn pair_index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < b && b < self.m);
        a * self.m - a * (a + 1) / 2 + (b - a - 1)
    }

    /// Inverse of [`pair_index`](Self::pair_index).
    pub fn pair_at(&self, k: usize) -> (usize, usize) {
        debug_assert!(k < self.pair_count());
        let mut rest = k;
        for a in 0..self.m {
            let span = self.m - a - 1;
            if rest < span {
                return (a, a + rest + 1);
            }
            rest -= span;
        }
        unreachable!("pair index out of range")
    }

    /// Whether 0-based row `d` lies in the identity block, i.e. carries the
    /// row-sparsity penalty `lambda1` rather than the fusion penalty.
    pub fn is_identity_row(&self, d: usize) -> bool {
        d >= self.fusion_rows()
    }

    /// Dense `A` for verification; restricted to small layouts.
    pub fn dense_a(&self) -> Array2<f64> {
        assert!(
            self.m * self.p <= 64,
            "dense_a is a verification helper for small layouts"
        );
        let mut a = Array2::zeros((self.total_rows(), self.m * self.p));
        for (k, (i, j)) in self.pairs().enumerate() {
            for v in 0..self.p {
                a[[k * self.p + v, i * self.p + v]] = 1.0;
                a[[k * self.p + v, j * self.p + v]] = -1.0;
            }
        }
        let fr = self.fusion_rows();
        for c in 0..self.m * self.p {
            a[[fr + c, c]] = 1.0;
        }
        a
    }
}

/// The split variable `P` (and its dual `G`): a `total_rows x q` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    data: Array2<f64>,
}

impl FusionState {
    pub fn zeros(layout: &FusionLayout) -> Self {
        Self {
            data: Array2::zeros((layout.total_rows(), layout.q())),
        }
    }

    pub fn from_matrix(layout: &FusionLayout, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != layout.total_rows() || data.ncols() != layout.q() {
            return Err(RowFedError::DimensionMismatch(format!(
                "fusion state must be ({}, {}), got {:?}",
                layout.total_rows(),
                layout.q(),
                data.dim()
            )));
        }
        Ok(Self { data })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.data
    }
}

fn check_theta(layout: &FusionLayout, theta: &CoefficientStack) -> Result<()> {
    if theta.m() != layout.m() || theta.p() != layout.p() || theta.q() != layout.q() {
        return Err(RowFedError::DimensionMismatch(format!(
            "stack ({}, {}, {}) does not match layout ({}, {}, {})",
            theta.m(),
            theta.p(),
            theta.q(),
            layout.m(),
            layout.p(),
            layout.q()
        )));
    }
    Ok(())
}

/// Applies `A`: fusion rows are pairwise block differences, identity rows
/// copy the stack.
pub fn apply_a(layout: &FusionLayout, theta: &CoefficientStack) -> Result<FusionState> {
    check_theta(layout, theta)?;
    let p = layout.p();
    let mut out = Array2::zeros((layout.total_rows(), layout.q()));
    for (k, (a, b)) in layout.pairs().enumerate() {
        let diff = &theta.block(a) - &theta.block(b);
        out.slice_mut(s![k * p..(k + 1) * p, ..]).assign(&diff);
    }
    out.slice_mut(s![layout.fusion_rows().., ..])
        .assign(theta.matrix());
    Ok(FusionState { data: out })
}

/// Applies the adjoint `A^T`.
pub fn apply_at(layout: &FusionLayout, state: &FusionState) -> Result<CoefficientStack> {
    if state.data.nrows() != layout.total_rows() || state.data.ncols() != layout.q() {
        return Err(RowFedError::DimensionMismatch(format!(
            "fusion state must be ({}, {}), got {:?}",
            layout.total_rows(),
            layout.q(),
            state.data.dim()
        )));
    }
    let p = layout.p();
    let fr = layout.fusion_rows();
    let identity = state.data.slice(s![fr.., ..]).to_owned();
    let mut out = CoefficientStack::from_matrix(identity, layout.m())?;
    for (k, (a, b)) in layout.pairs().enumerate() {
        let blk = state.data.slice(s![k * p..(k + 1) * p, ..]);
        let mut block_a = out.block_mut(a);
        block_a += &blk;
        let mut block_b = out.block_mut(b);
        block_b -= &blk;
    }
    Ok(out)
}

/// Applies `A^T A` through its Kronecker closed form
/// `((M+1) I_M - 1 1^T) (x) I_p`, one pass over the blocks.
pub fn apply_ata(layout: &FusionLayout, theta: &CoefficientStack) -> Result<CoefficientStack> {
    check_theta(layout, theta)?;
    let m = layout.m();
    let mut block_sum = Array2::zeros((layout.p(), layout.q()));
    for i in 0..m {
        block_sum += &theta.block(i);
    }
    let mut out = CoefficientStack::zeros(m, layout.p(), layout.q());
    let coef = (m + 1) as f64;
    for i in 0..m {
        let updated = &(&theta.block(i) * coef) - &block_sum;
        out.block_mut(i).assign(&updated);
    }
    Ok(out)
}

/// Eigenvalue bounds of `A^T A`: returns `(1, M+1)`.
pub fn gram_bounds(m: usize) -> (f64, f64) {
    (1.0, (m + 1) as f64)
}
