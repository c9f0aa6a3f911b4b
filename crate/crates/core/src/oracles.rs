//! Exact desk-scale references: dual kernel PCA, dense eigen/SVD/CCA
//! solvers, a quadrature discretization of the population covariance
//! operator, and the explicitly orthogonalized update.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg;

/// Largest point count accepted by the dense dual solver.
pub const MAX_DUAL_POINTS: usize = 5000;

/// Exact top-k eigenfunctions of the empirical covariance operator, each
/// expanded over the sample as `v_i = sum_j coeffs[j, i] k(x_j, .)`.
#[derive(Debug, Clone)]
pub struct DualEigenSolution {
    pub spec: KernelSpec,
    pub points: DMatrix<f64>,
    /// `n x k`, unit RKHS norm per column.
    pub coeffs: DMatrix<f64>,
    /// Eigenvalues of `(1/n) K`, descending.
    pub eigenvalues: Vec<f64>,
    pub gram: DMatrix<f64>,
}

impl DualEigenSolution {
    /// Eigenfunction values at the rows of `x`, `m x k`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.spec.gram(x, &self.points)? * &self.coeffs)
    }
}

pub fn dual_kpca(data: &DMatrix<f64>, spec: &KernelSpec, k: usize) -> Result<DualEigenSolution> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if n > MAX_DUAL_POINTS {
        return Err(Error::InvalidArgument(format!(
            "dual solver is dense; {n} points exceeds {MAX_DUAL_POINTS}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let gram = spec.gram(data, data)?;
    let scaled = &gram / n as f64;
    let (values, mut vectors) = linalg::sorted_eigen(&scaled);
    let top = values[0].max(0.0);
    let floor = -1e-8 * n as f64 * top.max(1.0);
    if let Some(bad) = values.iter().find(|&&v| v < floor) {
        return Err(Error::NotPsd(format!("gram matrix has eigenvalue {bad}")));
    }
    linalg::fix_signs(&mut vectors);
    let tiny = 1e-12 * top.max(f64::MIN_POSITIVE);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut coeffs = DMatrix::zeros(n, k);
    for (i, v) in values.iter().take(k).enumerate() {
        let lambda = v.max(0.0);
        eigenvalues.push(lambda);
        // null-space directions expand to the zero function
        if lambda > tiny {
            let norm = (n as f64 * lambda).sqrt();
            coeffs.set_column(i, &(vectors.column(i) / norm));
        }
    }
    Ok(DualEigenSolution { spec: *spec, points: data.clone(), coeffs, eigenvalues, gram })
}

/// A validated symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        let min = linalg::lambda_min(&m);
        if min < -1e-10 * scale {
            return Err(Error::NotPsd(format!("minimum eigenvalue {min}")));
        }
        Ok(Self(m))
    }

    /// Uncentered second moment `X^T X / n` of the rows of `data`.
    pub fn second_moment(data: &DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyData);
        }
        let m = linalg::tr_mul(data, data) / data.nrows() as f64;
        Self::new(linalg::symmetrize(&m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Top-k eigenpairs, descending, with the sign convention applied.
pub fn dense_topk_eig(c: &CovarianceMatrix, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if k == 0 || k > c.dim() {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= {}, got {k}", c.dim())));
    }
    let (values, vectors) = linalg::sorted_eigen(c.matrix());
    let mut top = vectors.columns(0, k).into_owned();
    linalg::fix_signs(&mut top);
    Ok((values[..k].to_vec(), top))
}

/// Top-k singular triplets `(U, sigma, V)` of `m`.
///
/// Also verifies that the symmetric block operator `[[0, M^T], [M, 0]]`
/// has the singular values as its top eigenvalues.
pub fn dense_svd_topk(m: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let r = m.nrows().min(m.ncols());
    if k == 0 || k > r {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= {r}, got {k}")));
    }
    let svd = m.clone().svd(true, true);
    let u_all = svd.u.as_ref().expect("requested U");
    let vt_all = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order[..k].iter().map(|&i| svd.singular_values[i]).collect();
    let mut u = DMatrix::from_fn(m.nrows(), k, |row, c| u_all[(row, order[c])]);
    let mut v = DMatrix::from_fn(m.ncols(), k, |row, c| vt_all[(order[c], row)]);
    // sign convention on V, carried over to U
    for c in 0..k {
        if linalg::dominant_sign(v.column(c).iter()) < 0.0 {
            v.column_mut(c).neg_mut();
            u.column_mut(c).neg_mut();
        }
    }

    let (p, q) = (m.ncols(), m.nrows());
    let mut block = DMatrix::zeros(p + q, p + q);
    block.view_mut((0, p), (p, q)).copy_from(&m.transpose());
    block.view_mut((p, 0), (q, p)).copy_from(m);
    let (bvals, _) = linalg::sorted_eigen(&block);
    let tol = 1e-10 * sigma[0].max(1.0);
    for (i, s) in sigma.iter().enumerate() {
        if (bvals[i] - s).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "block operator eigenvalue {} disagrees with singular value {s}",
                bvals[i]
            )));
        }
    }
    Ok((u, sigma, v))
}

/// Canonical correlation solution; directions satisfy `g^T C g = 1`.
#[derive(Debug, Clone)]
pub struct CcaSolution {
    pub correlations: Vec<f64>,
    pub directions_x: DMatrix<f64>,
    pub directions_y: DMatrix<f64>,
}

pub fn dense_cca(
    cxx: &DMatrix<f64>,
    cyy: &DMatrix<f64>,
    cxy: &DMatrix<f64>,
    k: usize,
) -> Result<CcaSolution> {
    let (p, q) = (cxx.nrows(), cyy.nrows());
    if cxy.shape() != (p, q) {
        return Err(Error::DimensionMismatch { expected: p, got: cxy.nrows() });
    }
    if k == 0 || k > p.min(q) {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= {}, got {k}", p.min(q))));
    }
    let lx = linalg::symmetrize(cxx)
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("C_XX is singular; add a ridge".into()))?
        .l();
    let ly = linalg::symmetrize(cyy)
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("C_YY is singular; add a ridge".into()))?
        .l();
    let lx_inv = lx.clone().try_inverse().ok_or_else(|| Error::RankDeficient("C_XX".into()))?;
    let ly_inv = ly.clone().try_inverse().ok_or_else(|| Error::RankDeficient("C_YY".into()))?;
    let whitened = &lx_inv * cxy * ly_inv.transpose();
    let (u, sigma, v) = dense_svd_topk(&whitened, k)?;
    let correlations: Vec<f64> = sigma.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    let directions_x = lx_inv.transpose() * u;
    let directions_y = ly_inv.transpose() * v;

    // generalized eigenvalues of [[Cxx, Cxy], [Cyx, Cyy]] g = mu blockdiag(Cxx, Cyy) g
    let mut joint = DMatrix::identity(p + q, p + q);
    joint.view_mut((0, p), (p, q)).copy_from(&whitened);
    joint.view_mut((p, 0), (q, p)).copy_from(&whitened.transpose());
    let (mu, _) = linalg::sorted_eigen(&joint);
    for (i, s) in sigma.iter().enumerate() {
        if (mu[i] - (1.0 + s)).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "generalized eigenvalue {} disagrees with 1 + {s}",
                mu[i]
            )));
        }
    }
    Ok(CcaSolution { correlations, directions_x, directions_y })
}

/// Data densities supported by the quadrature oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Gaussian1d { mean: f64, std: f64 },
}

impl Density {
    fn pdf(&self, x: f64) -> f64 {
        match *self {
            Density::Gaussian1d { mean, std } => {
                let z = (x - mean) / std;
                (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Density::Gaussian1d { mean, std } => (mean - 10.0 * std, mean + 10.0 * std),
        }
    }
}

/// Population covariance operator eigenpairs on a quadrature grid.
#[derive(Debug, Clone)]
pub struct QuadratureEigen {
    pub spec: KernelSpec,
    pub nodes: Vec<f64>,
    /// Quadrature weight times density at each node.
    pub weights: Vec<f64>,
    /// `grid x k`, normalized to unit `L2(P)` norm.
    pub values: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl QuadratureEigen {
    /// Nystrom extension `v(x) = (1/lambda) sum_j w_j k(x, z_j) v(z_j)`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let nodes = DMatrix::from_column_slice(self.nodes.len(), 1, &self.nodes);
        let mut kx = self.spec.gram(x, &nodes)?;
        for (j, w) in self.weights.iter().enumerate() {
            kx.column_mut(j).scale_mut(*w);
        }
        let mut out = kx * &self.values;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            out.column_mut(i).scale_mut(1.0 / l);
        }
        Ok(out)
    }
}

fn quadrature_solve(
    spec: &KernelSpec,
    density: Density,
    grid: usize,
    k: usize,
) -> Result<QuadratureEigen> {
    let (lo, hi) = density.support();
    let step = (hi - lo) / (grid - 1) as f64;
    let nodes: Vec<f64> = (0..grid).map(|i| lo + step * i as f64).collect();
    let weights: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let trap = if i == 0 || i == grid - 1 { 0.5 * step } else { step };
            trap * density.pdf(z)
        })
        .collect();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut s = DMatrix::zeros(grid, grid);
    for i in 0..grid {
        for j in 0..=i {
            let kij = spec.eval(&[nodes[i]], &[nodes[j]])?;
            let v = sqrt_w[i] * kij * sqrt_w[j];
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let (vals, vecs) = linalg::sorted_eigen(&s);
    let mut values = DMatrix::zeros(grid, k);
    for c in 0..k {
        for r in 0..grid {
            // recover v = W^{-1/2} u where the density is not negligible
            values[(r, c)] = if sqrt_w[r] > 1e-150 { vecs[(r, c)] / sqrt_w[r] } else { 0.0 };
        }
    }
    // sign convention on the values near the center of mass
    let mut fixed = values.clone();
    linalg::fix_signs(&mut fixed);
    Ok(QuadratureEigen { spec: *spec, nodes, weights, values: fixed, eigenvalues: vals[..k].to_vec() })
}

/// Eigenpairs of the population operator `A f = E[f(x) k(x, .)]` for a
/// one-dimensional density by trapezoid quadrature. The grid is checked by
/// doubling: a top-k eigenvalue moving by more than 1% is an error.
pub fn quadrature_operator_eig(
    spec: &KernelSpec,
    density: Density,
    grid_size: usize,
    k: usize,
) -> Result<QuadratureEigen> {
    if spec.dim != 1 {
        return Err(Error::InvalidArgument("quadrature oracle is one-dimensional".into()));
    }
    if grid_size < 200 {
        return Err(Error::InvalidArgument(format!("grid_size must be at least 200, got {grid_size}")));
    }
    if k == 0 || k > grid_size {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= grid, got {k}")));
    }
    let coarse = quadrature_solve(spec, density, grid_size, k)?;
    let fine = quadrature_solve(spec, density, 2 * grid_size, k)?;
    let shift = coarse
        .eigenvalues
        .iter()
        .zip(&fine.eigenvalues)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    if !(shift <= 0.01) || coarse.eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::GridTooCoarse { grid_size, relative_shift: shift });
    }
    Ok(coarse)
}

/// One stochastic-gradient step followed by symmetric orthogonalization:
/// `F' = (F + eta A F) ((F + eta A F)^T (F + eta A F))^{-1/2}`.
pub fn reference_orthogonalized_step(
    f: &DMatrix<f64>,
    a_t: &DMatrix<f64>,
    eta: f64,
) -> Result<DMatrix<f64>> {
    if a_t.nrows() != f.nrows() || a_t.ncols() != f.nrows() {
        return Err(Error::DimensionMismatch { expected: f.nrows(), got: a_t.nrows() });
    }
    let tilde = f + (a_t * f) * eta;
    let gram = tilde.transpose() * &tilde;
    if linalg::condition_number(&gram) > 1e24 {
        return Err(Error::RankDeficient("orthogonalized step input".into()));
    }
    let inv = linalg::inv_sqrt_spd(&gram, "orthogonalized step input")?;
    Ok(tilde * inv)
}
