//! Hadamard/Walsh matrices and fast Walsh-Hadamard transforms.
//!
//! The transform pair models the converter array of the transceiver: the
//! inverse transform stands in for the Walsh-domain DAC (coefficients to
//! time samples), the forward transform for the Walsh-domain ADC. Both are
//! plain `+`/`-` butterflies, O(N log N), plus one scaling pass.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row ordering of the sign matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    /// Kronecker-recursion order (Hadamard matrix).
    Natural,
    /// Rows sorted by ascending number of sign changes (Walsh matrix).
    Sequency,
}

/// Scaling convention of the transform pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    /// 1/sqrt(N) in both directions; the transform is an isometry.
    Orthonormal,
    /// Unnormalized forward, 1/N inverse.
    Analysis,
}

/// Order, ordering and scaling of a Walsh-Hadamard transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalshSpec {
    order: usize,
    pub ordering: Ordering,
    pub scaling: Scaling,
}

impl WalshSpec {
    pub fn new(order: usize, ordering: Ordering, scaling: Scaling) -> Result<Self> {
        check_order(order)?;
        Ok(Self {
            order,
            ordering,
            scaling,
        })
    }

    /// Sequency-ordered orthonormal transform, the converter-model default.
    pub fn orthonormal_sequency(order: usize) -> Result<Self> {
        Self::new(order, Ordering::Sequency, Scaling::Orthonormal)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }
}

fn check_order(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidOrder(n));
    }
    Ok(())
}

/// N x N matrix over {+1, -1} with its ordering tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignMatrix {
    order: usize,
    pub ordering: Ordering,
    entries: Vec<i8>,
}

impl SignMatrix {
    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.order + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[i8] {
        &self.entries[row * self.order..(row + 1) * self.order]
    }

    /// Number of sign changes along the given row.
    pub fn sign_changes(&self, row: usize) -> usize {
        let r = self.row(row);
        r.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Dense product with a vector, used as the slow oracle for the
    /// butterfly transforms.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.order {
            return Err(Error::DimensionMismatch {
                expected: self.order,
                got: x.len(),
                context: "sign-matrix apply",
            });
        }
        Ok((0..self.order)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .map(|(&s, &v)| s as f64 * v)
                    .sum()
            })
            .collect())
    }
}

/// Hadamard matrix H_N by the Kronecker recursion from the 2x2 base.
pub fn hadamard_matrix(n: usize) -> Result<SignMatrix> {
    check_order(n)?;
    // H_2, then repeatedly H_{2m} = H_m (x) H_2.
    let mut size = 2usize;
    let mut entries: Vec<i8> = vec![1, 1, 1, -1];
    while size < n {
        let next = size * 2;
        let mut grown = vec![0i8; next * next];
        for i in 0..size {
            for j in 0..size {
                let h = entries[i * size + j];
                grown[(2 * i) * next + 2 * j] = h;
                grown[(2 * i) * next + 2 * j + 1] = h;
                grown[(2 * i + 1) * next + 2 * j] = h;
                grown[(2 * i + 1) * next + 2 * j + 1] = -h;
            }
        }
        entries = grown;
        size = next;
    }
    Ok(SignMatrix {
        order: n,
        ordering: Ordering::Natural,
        entries,
    })
}

/// Sign changes of Hadamard row `i` without materializing the matrix.
/// Entry (i, j) of H_N is (-1)^popcount(i AND j).
fn hadamard_row_sign_changes(i: usize, n: usize) -> usize {
    let mut changes = 0;
    let mut prev = (i & 0).count_ones() & 1;
    for j in 1..n {
        let cur = (i & j).count_ones() & 1;
        if cur != prev {
            changes += 1;
        }
        prev = cur;
    }
    changes
}

/// Permutation p with walsh_row(i) = hadamard_row(p[i]), found by counting
/// sign changes of every Hadamard row.
pub fn sequency_permutation(n: usize) -> Result<Vec<usize>> {
    check_order(n)?;
    let mut perm = vec![usize::MAX; n];
    for row in 0..n {
        let s = hadamard_row_sign_changes(row, n);
        debug_assert!(perm[s] == usize::MAX, "duplicate sequency {s}");
        perm[s] = row;
    }
    debug_assert!(perm.iter().all(|&p| p != usize::MAX));
    Ok(perm)
}

/// Walsh matrix W_N: Hadamard rows in ascending sequency order.
pub fn walsh_matrix(n: usize) -> Result<SignMatrix> {
    let h = hadamard_matrix(n)?;
    let perm = sequency_permutation(n)?;
    let mut entries = Vec::with_capacity(n * n);
    for &src in &perm {
        entries.extend_from_slice(h.row(src));
    }
    Ok(SignMatrix {
        order: n,
        ordering: Ordering::Sequency,
        entries,
    })
}

/// In-place radix-2 butterfly computing H_N * x (natural order, unnormalized).
fn butterfly(x: &mut [f64]) {
    let n = x.len();
    let mut h = 1;
    while h < n {
        let mut block = 0;
        while block < n {
            for j in block..block + h {
                let a = x[j];
                let b = x[j + h];
                x[j] = a + b;
                x[j + h] = a - b;
            }
            block += 2 * h;
        }
        h *= 2;
    }
}

/// Cached transform for one [`WalshSpec`]; precomputes the sequency
/// permutation once so repeated calls stay O(N log N).
#[derive(Clone, Debug)]
pub struct WalshTransform {
    spec: WalshSpec,
    perm: Vec<usize>,
}

impl WalshTransform {
    pub fn new(spec: WalshSpec) -> Self {
        let perm = match spec.ordering {
            Ordering::Natural => (0..spec.order).collect(),
            Ordering::Sequency => sequency_permutation(spec.order).expect("validated order"),
        };
        Self { spec, perm }
    }

    #[inline]
    pub fn spec(&self) -> &WalshSpec {
        &self.spec
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.spec.order {
            return Err(Error::DimensionMismatch {
                expected: self.spec.order,
                got: len,
                context: "walsh transform input",
            });
        }
        Ok(())
    }

    fn forward_scale(&self) -> f64 {
        match self.spec.scaling {
            Scaling::Orthonormal => 1.0 / (self.spec.order as f64).sqrt(),
            Scaling::Analysis => 1.0,
        }
    }

    fn inverse_scale(&self) -> f64 {
        match self.spec.scaling {
            Scaling::Orthonormal => 1.0 / (self.spec.order as f64).sqrt(),
            Scaling::Analysis => 1.0 / self.spec.order as f64,
        }
    }

    /// y = scale * P(H x): the analysis direction (time -> Walsh domain).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut buf = x.to_vec();
        butterfly(&mut buf);
        let s = self.forward_scale();
        Ok(self.perm.iter().map(|&src| s * buf[src]).collect())
    }

    /// x = scale * H(P^T y): exact inverse of [`Self::forward`].
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len())?;
        let mut buf = vec![0.0; y.len()];
        for (s, &src) in self.perm.iter().enumerate() {
            buf[src] = y[s];
        }
        butterfly(&mut buf);
        let s = self.inverse_scale();
        for v in &mut buf {
            *v *= s;
        }
        Ok(buf)
    }

    /// Vector-Jacobian product of [`Self::forward`]: g -> scale * H(P^T g).
    pub fn forward_vjp(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_len(g.len())?;
        let mut buf = vec![0.0; g.len()];
        for (s, &src) in self.perm.iter().enumerate() {
            buf[src] = g[s];
        }
        butterfly(&mut buf);
        let s = self.forward_scale();
        for v in &mut buf {
            *v *= s;
        }
        Ok(buf)
    }

    /// Vector-Jacobian product of [`Self::inverse`]: g -> scale * P(H g).
    pub fn inverse_vjp(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_len(g.len())?;
        let mut buf = g.to_vec();
        butterfly(&mut buf);
        let s = self.inverse_scale();
        Ok(self.perm.iter().map(|&src| s * buf[src]).collect())
    }

    pub fn forward_batch(&self, m: &Matrix) -> Result<Matrix> {
        self.apply_rows(m, Self::forward)
    }

    pub fn inverse_batch(&self, m: &Matrix) -> Result<Matrix> {
        self.apply_rows(m, Self::inverse)
    }

    pub fn forward_vjp_batch(&self, m: &Matrix) -> Result<Matrix> {
        self.apply_rows(m, Self::forward_vjp)
    }

    pub fn inverse_vjp_batch(&self, m: &Matrix) -> Result<Matrix> {
        self.apply_rows(m, Self::inverse_vjp)
    }

    fn apply_rows(
        &self,
        m: &Matrix,
        op: impl Fn(&Self, &[f64]) -> Result<Vec<f64>>,
    ) -> Result<Matrix> {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            let y = op(self, m.row(r))?;
            out.row_mut(r).copy_from_slice(&y);
        }
        Ok(out)
    }
}

/// One-shot forward transform (see [`WalshTransform::forward`]).
pub fn fwht(x: &[f64], spec: &WalshSpec) -> Result<Vec<f64>> {
    WalshTransform::new(*spec).forward(x)
}

/// One-shot inverse transform (see [`WalshTransform::inverse`]).
pub fn ifwht(y: &[f64], spec: &WalshSpec) -> Result<Vec<f64>> {
    WalshTransform::new(*spec).inverse(y)
}
