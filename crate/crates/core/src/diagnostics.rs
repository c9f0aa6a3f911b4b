//! Subspace angles, convergence-rate fits and the first-order equivalence
//! probe between the normalization-free and the explicitly orthogonalized
//! update rules.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Purpose};

/// Slack allowed outside `[0, 1]` before an angle result is rejected.
pub const RANGE_SLACK: f64 = 1e-9;

/// Condition number above which a spanning set counts as rank deficient.
pub const MAX_CONDITION: f64 = 1e12;

/// Potential and norm samples recorded during a fit.
///
/// `potential` is NaN at points where no reference subspace was available.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsTrace {
    pub iterations: Vec<u64>,
    pub potential: Vec<f64>,
    pub h_norm_max: Vec<f64>,
    pub wall_clock: Vec<f64>,
}

pub const TRACE_HEADER: &str = "iteration,potential,h_norm_max,seconds";

impl DiagnosticsTrace {
    pub fn push(&mut self, iteration: u64, potential: f64, h_norm_max: f64, seconds: f64) {
        self.iterations.push(iteration);
        self.potential.push(potential);
        self.h_norm_max.push(h_norm_max);
        self.wall_clock.push(seconds);
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.iterations[i], self.potential[i], self.h_norm_max[i], self.wall_clock[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != TRACE_HEADER {
            return Err(Error::Parse { row: 0, col: 0, msg: format!("expected header '{TRACE_HEADER}'") });
        }
        let mut trace = Self::default();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::Parse { row: row + 1, col: cells.len(), msg: "expected 4 columns".into() });
            }
            let num = |col: usize| -> Result<f64> {
                cells[col].trim().parse::<f64>().map_err(|e| Error::Parse {
                    row: row + 1,
                    col,
                    msg: e.to_string(),
                })
            };
            let iteration = cells[0].trim().parse::<u64>().map_err(|e| Error::Parse {
                row: row + 1,
                col: 0,
                msg: e.to_string(),
            })?;
            trace.push(iteration, num(1)?, num(2)?, num(3)?);
        }
        Ok(trace)
    }
}

fn check_range(value: f64, what: &str) -> Result<f64> {
    if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&value) {
        return Err(Error::InvalidArgument(format!("{what} = {value} is outside [0, 1]")));
    }
    Ok(value.clamp(0.0, 1.0))
}

/// `cos^2` of the largest principal angle between two subspaces spanned by
/// kernel expansions over the same anchor points, in the RKHS metric given
/// by `gram`. The first subspace is re-orthonormalized in that metric so any
/// spanning set may be passed.
pub fn cos2_subspace_gram(
    v_coeffs: &DMatrix<f64>,
    g_coeffs: &DMatrix<f64>,
    gram: &DMatrix<f64>,
) -> Result<f64> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::InvalidArgument("gram matrix must be square".into()));
    }
    for m in [v_coeffs, g_coeffs] {
        if m.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
        }
    }
    let kv = gram * v_coeffs;
    let kg = gram * g_coeffs;
    let vkv = v_coeffs.transpose() * &kv;
    let gkg = g_coeffs.transpose() * &kg;
    if linalg::condition_number(&gkg) > MAX_CONDITION {
        return Err(Error::RankDeficient("second subspace spanning set".into()));
    }
    if linalg::condition_number(&vkv) > MAX_CONDITION {
        return Err(Error::RankDeficient("first subspace spanning set".into()));
    }
    let v_norm = linalg::inv_sqrt_spd(&vkv, "first subspace")?;
    let cross = v_norm.transpose() * v_coeffs.transpose() * &kg;
    let gkg_inv = linalg::symmetrize(&gkg)
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("second subspace spanning set".into()))?
        .inverse();
    let m = &cross * gkg_inv * cross.transpose();
    check_range(linalg::lambda_min(&m), "cos^2")
}

/// `sin^2` of the largest principal angle between the column spaces of two
/// evaluation matrices, in the empirical `L2` metric of the probe points.
pub fn sin2_subspace_empirical(ev: &DMatrix<f64>, eh: &DMatrix<f64>) -> Result<f64> {
    if ev.nrows() != eh.nrows() {
        return Err(Error::DimensionMismatch { expected: ev.nrows(), got: eh.nrows() });
    }
    let qv = linalg::orthonormal_basis(ev, "reference evaluations")?;
    let qh = linalg::orthonormal_basis(eh, "model evaluations")?;
    let s = qv.transpose() * qh;
    let m = &s * s.transpose();
    check_range(1.0 - linalg::lambda_min(&m), "sin^2")
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("log-log fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Log-log slope of potential against iteration over the final `window`
/// fraction of the run.
pub fn rate_fit(trace: &DiagnosticsTrace, window: f64) -> Result<f64> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidArgument(format!("window must be in (0, 1], got {window}")));
    }
    let last = *trace.iterations.last().ok_or(Error::EmptyData)? as f64;
    let start = last * (1.0 - window);
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .iterations
        .iter()
        .zip(&trace.potential)
        .filter(|(&t, _)| t as f64 >= start && t > 0)
        .map(|(&t, &p)| (t as f64, p))
        .unzip();
    if xs.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 10 trace points in the window, found {}",
            xs.len()
        )));
    }
    if let Some(p) = ys.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive potential {p} in the fit window")));
    }
    loglog_slope(&xs, &ys)
}

/// Canonical correlations between the column spans of two paired
/// evaluation matrices (uncentered second moments), descending.
pub fn canonical_correlations(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::DimensionMismatch { expected: u.nrows(), got: v.nrows() });
    }
    let qu = linalg::orthonormal_basis(u, "left evaluations")?;
    let qv = linalg::orthonormal_basis(v, "right evaluations")?;
    let s = qu.transpose() * qv;
    let mut sv: Vec<f64> = s.singular_values().iter().map(|x| x.min(1.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// `cos^2` between two finite-dimensional column spaces.
fn cos2_euclidean(v: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    Ok(1.0 - sin2_subspace_empirical(v, x)?)
}

/// Residuals `|cos^2(V, G + eta (I - G G^T) A_t G) - cos^2(V, F(G; eta))|`
/// where `F` is the explicitly orthogonalized update and `V` is the top-k
/// eigenspace of `a`.
pub fn first_order_residuals(
    a: &DMatrix<f64>,
    a_t: &DMatrix<f64>,
    g: &DMatrix<f64>,
    etas: &[f64],
) -> Result<Vec<f64>> {
    let k = g.ncols();
    let (_, vecs) = linalg::sorted_eigen(a);
    let v = vecs.columns(0, k).into_owned();
    let d = g.nrows();
    let ggt = g * g.transpose();
    let proj = DMatrix::identity(d, d) - ggt;
    let atg = a_t * g;
    etas.iter()
        .map(|&eta| {
            if eta == 0.0 {
                return Ok(0.0);
            }
            let oja = g + (&proj * &atg) * eta;
            let orth = crate::oracles::reference_orthogonalized_step(g, a_t, eta)?;
            Ok((cos2_euclidean(&v, &oja)? - cos2_euclidean(&v, &orth)?).abs())
        })
        .collect()
}

/// Random instance of the first-order probe: a fixed PSD `A`, a PSD
/// mini-batch covariance `A_t` and a start `G` with orthonormal columns
/// (a random full-rank draw, orthonormalized). Degenerate draws are
/// retried with fresh streams up to five times.
pub fn first_order_probe(dim: usize, k: usize, seed: u64, etas: &[f64]) -> Result<Vec<f64>> {
    if k == 0 || k > dim {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= dim, got k={k}, dim={dim}")));
    }
    for attempt in 0..6u64 {
        let mut r = rng::stream(seed, Purpose::Probe, attempt);
        let mut gauss = |rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
        };
        let ra = gauss(dim, dim);
        let rt = gauss(dim, dim);
        let raw = gauss(dim, k);
        // unit spectral norm, as for a kernel bounded by 1
        let unit = |m: DMatrix<f64>| {
            let top = linalg::sorted_eigen(&m).0[0];
            m / top
        };
        let a = unit(&ra * ra.transpose());
        let a_t = unit(&rt * rt.transpose());
        let (vals, _) = linalg::sorted_eigen(&a);
        let gap_ok = vals[k - 1] - vals[k] > 1e-6 * vals[0];
        if linalg::condition_number(&(raw.transpose() * &raw)) > 1e8 || !gap_ok {
            continue;
        }
        // the update rules are compared from an orthonormal start, where
        // I - G G^T is the projector onto the complement of span(G)
        let g = linalg::orthonormal_basis(&raw, "probe start")?;
        return first_order_residuals(&a, &a_t, &g, etas);
    }
    Err(Error::RankDeficient("first-order probe could not draw a non-degenerate instance".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, Purpose::Synthetic, 0);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
    }

    #[test]
    fn empirical_angle_extremes() {
        let ev = random(40, 3, 1);
        let m = random(3, 3, 2);
        assert!(sin2_subspace_empirical(&ev, &(&ev * m)).unwrap() < 1e-10);
        let mut a = DMatrix::zeros(6, 2);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        let mut b = DMatrix::zeros(6, 2);
        b[(2, 0)] = 2.0;
        b[(3, 1)] = -1.0;
        b[(4, 1)] = 0.5;
        assert!((sin2_subspace_empirical(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(sin2_subspace_empirical(&a, &DMatrix::zeros(6, 2)).is_err());
    }

    #[test]
    fn gram_angle_extremes() {
        let gram = DMatrix::identity(4, 4);
        let mut v = DMatrix::zeros(4, 1);
        v[(0, 0)] = 1.0;
        assert!((cos2_subspace_gram(&v, &v, &gram).unwrap() - 1.0).abs() < 1e-12);
        let mut g = DMatrix::zeros(4, 1);
        g[(2, 0)] = 3.0;
        assert!(cos2_subspace_gram(&v, &g, &gram).unwrap().abs() < 1e-12);
        assert!(cos2_subspace_gram(&v, &DMatrix::zeros(4, 1), &gram).is_err());
    }

    #[test]
    fn rate_fit_power_laws() {
        let mut exact = DiagnosticsTrace::default();
        let mut flat = DiagnosticsTrace::default();
        for i in 1..=100u64 {
            let t = i * 10;
            exact.push(t, 1.0 / t as f64, 1.0, 0.0);
            flat.push(t, 0.3, 1.0, 0.0);
        }
        assert!((rate_fit(&exact, 0.5).unwrap() + 1.0).abs() < 1e-6);
        assert!(rate_fit(&flat, 0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rate_fit_noisy_power_law() {
        // 5/t plus uniform noise of amplitude 1e-4
        let mut r = rng::stream(21, Purpose::Synthetic, 0);
        let mut trace = DiagnosticsTrace::default();
        for i in 1..=200u64 {
            let t = i * 25;
            let noise = (rng::open_unit(&mut r) - 0.5) * 2e-4;
            trace.push(t, 5.0 / t as f64 + noise, 1.0, 0.0);
        }
        let slope = rate_fit(&trace, 0.5).unwrap();
        assert!((-1.1..=-0.9).contains(&slope), "slope {slope}");
    }

    #[test]
    fn rate_fit_errors() {
        let mut few = DiagnosticsTrace::default();
        for t in 1..=5 {
            few.push(t, 0.1, 1.0, 0.0);
        }
        assert!(rate_fit(&few, 0.5).is_err());
        let mut zero = DiagnosticsTrace::default();
        for t in 1..=40 {
            zero.push(t, if t == 30 { 0.0 } else { 0.1 }, 1.0, 0.0);
        }
        assert!(rate_fit(&zero, 0.5).is_err());
        assert!(rate_fit(&DiagnosticsTrace::default(), 0.5).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut t = DiagnosticsTrace::default();
        t.push(100, 0.25, 1.5, 0.0);
        t.push(200, 0.125, 1.25, 0.5);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iteration,potential,h_norm_max,seconds\n"));
        assert_eq!(DiagnosticsTrace::read_csv(&buf[..]).unwrap(), t);
        assert!(DiagnosticsTrace::read_csv(&b"a,b\n1,2\n"[..]).is_err());
    }

    #[test]
    fn probe_zero_step_and_fixed_point() {
        let r = first_order_probe(6, 2, 3, &[0.0, 1e-2]).unwrap();
        assert_eq!(r[0], 0.0);
        assert!(r[1] > 0.0);

        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0, 0.5]));
        let (_, vecs) = linalg::sorted_eigen(&a);
        let v = vecs.columns(0, 2).into_owned();
        let res = first_order_residuals(&a, &a, &v, &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(res.iter().all(|r| *r <= 1e-12), "{res:?}");
    }

    #[test]
    fn canonical_correlations_of_identical_views() {
        let u = random(50, 3, 4);
        let c = canonical_correlations(&u, &(&u * random(3, 3, 5))).unwrap();
        assert!(c.iter().all(|x| (x - 1.0).abs() < 1e-10));
    }
}
