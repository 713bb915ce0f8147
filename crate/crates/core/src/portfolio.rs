//! Multi-period fused-lasso portfolio model: return panels, rolling moment
//! estimates, model assembly, the equal-split benchmark and quality metrics.
//!
//! Decision vector layout: `u = [u_1; …; u_m]`, one block of `n_a` holdings per
//! rebalancing date.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConstrainedL1Problem;

/// Simple returns, one row per period and one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    asset_names: Vec<String>,
    periods: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(asset_names: Vec<String>, periods: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if returns.ncols() != asset_names.len() {
            return Err(Error::DimensionMismatch {
                left: "return columns",
                right: "asset names",
                expected: asset_names.len(),
                found: returns.ncols(),
            });
        }
        if returns.nrows() != periods.len() {
            return Err(Error::DimensionMismatch {
                left: "return rows",
                right: "periods",
                expected: periods.len(),
                found: returns.nrows(),
            });
        }
        if asset_names.is_empty() {
            return Err(Error::InvalidProblem("return panel has no assets".into()));
        }
        for ((i, j), &v) in returns.iter().enumerate().map(|(k, v)| ((k % returns.nrows(), k / returns.nrows()), v)) {
            if !v.is_finite() || v <= -1.0 {
                return Err(Error::InvalidProblem(format!(
                    "return of {} in period {} is {v}; returns must be finite and greater than -1",
                    asset_names[j], periods[i]
                )));
            }
        }
        Ok(Self {
            asset_names,
            periods,
            returns,
        })
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }
    pub fn periods(&self) -> &[String] {
        &self.periods
    }
    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }
    pub fn n_assets(&self) -> usize {
        self.asset_names.len()
    }
    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    /// Drops the `k` assets with the largest full-sample standard deviation.
    pub fn drop_most_volatile(&self, k: usize) -> Result<Self> {
        let n_a = self.n_assets();
        if k >= n_a {
            return Err(Error::InvalidConfig(format!("cannot drop {k} of {n_a} assets")));
        }
        let t = self.returns.nrows() as f64;
        let sd: Vec<f64> = (0..n_a)
            .map(|j| {
                let col = self.returns.column(j);
                let mean = col.mean();
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0).max(1.0)).sqrt()
            })
            .collect();
        let mut order: Vec<usize> = (0..n_a).collect();
        // stable: ties keep the earlier column
        order.sort_by(|&a, &b| sd[b].total_cmp(&sd[a]));
        let mut keep: Vec<usize> = order[k..].to_vec();
        keep.sort_unstable();
        let returns = self.returns.select_columns(&keep);
        let names = keep.iter().map(|&j| self.asset_names[j].clone()).collect();
        Self::new(names, self.periods.clone(), returns)
    }

    /// Divides every return by 100 (percent files).
    pub fn from_percent(self) -> Result<Self> {
        Self::new(self.asset_names, self.periods, self.returns / 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovDivisor {
    /// `window − 1`.
    #[default]
    Unbiased,
    /// `window`.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    /// Estimation window length in data periods.
    pub window: usize,
    /// Data periods between rebalancing dates.
    pub stride: usize,
    /// Number of rebalancing dates.
    pub m: usize,
    pub divisor: CovDivisor,
    /// Added to every covariance diagonal when set.
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub c_blocks: Vec<DMatrix<f64>>,
    pub r: Vec<DVector<f64>>,
    /// Ridge actually added to each block (0 when disabled).
    pub ridge: f64,
}

/// Rolling sample moments. Block `j` (1-based) uses the `window` rows ending
/// just before row `t_j = window + (j − 1)·stride`.
pub fn estimate_moments(panel: &ReturnPanel, opts: &MomentOptions) -> Result<Moments> {
    if opts.m == 0 || opts.window == 0 || (opts.m > 1 && opts.stride == 0) {
        return Err(Error::InvalidConfig("window, stride and m must be positive".into()));
    }
    if opts.window < 2 && opts.divisor == CovDivisor::Unbiased {
        return Err(Error::InvalidConfig("the unbiased covariance needs a window of at least 2".into()));
    }
    let needed = opts.window + (opts.m - 1) * opts.stride;
    if needed > panel.n_periods() {
        return Err(Error::InvalidConfig(format!(
            "window {} with {} rebalancing dates every {} periods needs {needed} periods, the panel has {}",
            opts.window,
            opts.m,
            opts.stride,
            panel.n_periods()
        )));
    }
    let ridge = match opts.ridge {
        Some(e) if !(e >= 0.0 && e.is_finite()) => {
            return Err(Error::InvalidConfig(format!("ridge must be finite and nonnegative, got {e}")))
        }
        Some(e) => e,
        None => 0.0,
    };
    let n_a = panel.n_assets();
    let divisor = match opts.divisor {
        CovDivisor::Unbiased => (opts.window - 1) as f64,
        CovDivisor::Window => opts.window as f64,
    };
    let mut c_blocks = Vec::with_capacity(opts.m);
    let mut r = Vec::with_capacity(opts.m);
    for j in 0..opts.m {
        let end = opts.window + j * opts.stride;
        let rows = panel.returns.rows(end - opts.window, opts.window);
        let mean = DVector::from_fn(n_a, |i, _| rows.column(i).mean());
        let mut centered = rows.into_owned();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / divisor;
        for i in 0..n_a {
            cov[(i, i)] += ridge;
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                what: format!("covariance block {} (rows {}..{})", j + 1, end - opts.window, end),
            });
        }
        c_blocks.push(cov);
        r.push(mean);
    }
    Ok(Moments { c_blocks, r, ridge })
}

/// Assembled portfolio model.
#[derive(Debug, Clone)]
pub struct PortfolioModel {
    pub c_blocks: Vec<DMatrix<f64>>,
    pub r: Vec<DVector<f64>>,
    pub xi_ini: f64,
    pub xi_fin: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub problem: ConstrainedL1Problem,
}

impl PortfolioModel {
    pub fn n_assets(&self) -> usize {
        self.r[0].len()
    }
    pub fn periods(&self) -> usize {
        self.r.len()
    }
}

/// First-difference operator between consecutive blocks:
/// `(Du)_i = u_{i+n_a} − u_i`, shape `(n − n_a) × n`.
pub fn difference_matrix(n_a: usize, m: usize) -> DMatrix<f64> {
    let n = n_a * m;
    let q = n - n_a;
    let mut d = DMatrix::zeros(q, n);
    for i in 0..q {
        d[(i, i)] = -1.0;
        d[(i, i + n_a)] = 1.0;
    }
    d
}

/// Budget and self-financing constraints: `1ᵀu_1 = ξ_ini`,
/// `1ᵀu_j − (1 + r_{j−1})ᵀu_{j−1} = 0` for `j = 2..m`, and
/// `(1 + r_m)ᵀu_m = ξ_fin`.
pub fn constraint_matrix(r: &[DVector<f64>], xi_ini: f64, xi_fin: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = r.len();
    if m == 0 {
        return Err(Error::InvalidProblem("need at least one rebalancing date".into()));
    }
    let n_a = r[0].len();
    for rj in r {
        if rj.len() != n_a {
            return Err(Error::DimensionMismatch {
                left: "return vector",
                right: "asset count",
                expected: n_a,
                found: rj.len(),
            });
        }
    }
    let n = n_a * m;
    let mut a = DMatrix::zeros(m + 1, n);
    for j in 0..m {
        for i in 0..n_a {
            a[(j, j * n_a + i)] = 1.0;
            if j > 0 {
                a[(j, (j - 1) * n_a + i)] = -(1.0 + r[j - 1][i]);
            }
        }
    }
    for i in 0..n_a {
        a[(m, (m - 1) * n_a + i)] = 1.0 + r[m - 1][i];
    }
    let mut b = DVector::zeros(m + 1);
    b[0] = xi_ini;
    b[m] = xi_fin;
    Ok((a, b))
}

pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut c = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        c.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    c
}

pub fn build_model(
    c_blocks: &[DMatrix<f64>],
    r: &[DVector<f64>],
    xi_ini: f64,
    xi_fin: f64,
    tau1: f64,
    tau2: f64,
) -> Result<PortfolioModel> {
    if c_blocks.len() != r.len() {
        return Err(Error::DimensionMismatch {
            left: "covariance blocks",
            right: "return vectors",
            expected: r.len(),
            found: c_blocks.len(),
        });
    }
    let (a, b) = constraint_matrix(r, xi_ini, xi_fin)?;
    let n_a = r[0].len();
    for (j, c) in c_blocks.iter().enumerate() {
        if c.shape() != (n_a, n_a) {
            return Err(Error::InvalidProblem(format!(
                "covariance block {} is {}x{}, expected {n_a}x{n_a}",
                j + 1,
                c.nrows(),
                c.ncols()
            )));
        }
        if c.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                what: format!("covariance block {}", j + 1),
            });
        }
    }
    let problem = ConstrainedL1Problem::new(
        block_diagonal(c_blocks),
        tau1,
        tau2,
        difference_matrix(n_a, r.len()),
        a,
        b,
    )?;
    Ok(PortfolioModel {
        c_blocks: c_blocks.to_vec(),
        r: r.to_vec(),
        xi_ini,
        xi_fin,
        tau1,
        tau2,
        problem,
    })
}

/// Equal split of the current wealth at every rebalancing date.
#[derive(Debug, Clone, PartialEq)]
pub struct NaivePortfolio {
    /// Final wealth `w_m`.
    pub xi_naive: f64,
    pub u: DVector<f64>,
    /// `w_0, …, w_m`.
    pub wealth: Vec<f64>,
}

pub fn naive_wealth(r: &[DVector<f64>], n_a: usize, xi_ini: f64) -> NaivePortfolio {
    let m = r.len();
    let mut wealth = Vec::with_capacity(m + 1);
    wealth.push(xi_ini);
    let mut u = DVector::zeros(n_a * m);
    for (j, rj) in r.iter().enumerate() {
        let w = wealth[j];
        let share = w / n_a as f64;
        u.rows_mut(j * n_a, n_a).fill(share);
        let gross: f64 = rj.iter().map(|x| 1.0 + x).sum();
        wealth.push(share * gross);
    }
    NaivePortfolio {
        xi_naive: wealth[m],
        u,
        wealth,
    }
}

/// Ratio, density, short count and variation counts of one holding vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    /// Naive risk over optimal risk; infinite when the optimal risk is zero.
    pub ratio: f64,
    pub density_pct: f64,
    pub shorts: usize,
    /// Number of ones in `V`, i.e. `trace(VᵀV)`.
    pub t_cost: usize,
    /// Largest column sum of `V`.
    pub v_norm1: usize,
    /// Largest row sum of `V`.
    pub v_norm_inf: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMetrics {
    pub thresholded: MetricSet,
    pub raw: MetricSet,
}

pub const DEFAULT_EPS: f64 = 1e-4;

/// Variation indicator `V` (`n_a × (m − 1)`): `V_ij = 1` when asset `i` changes
/// between dates `j` and `j + 1` according to `changed`.
pub fn variation_matrix(u: &DVector<f64>, n_a: usize, changed: impl Fn(f64) -> bool) -> DMatrix<u8> {
    let m = u.len() / n_a;
    DMatrix::from_fn(n_a, m.saturating_sub(1), |i, j| {
        u8::from(changed((u[j * n_a + i] - u[(j + 1) * n_a + i]).abs()))
    })
}

fn risk(c: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(c * u))
}

fn metric_set(
    u: &DVector<f64>,
    naive_risk: f64,
    c: &DMatrix<f64>,
    n_a: usize,
    active: impl Fn(f64) -> bool,
    short: impl Fn(f64) -> bool,
    changed: impl Fn(f64) -> bool,
) -> MetricSet {
    let opt_risk = risk(c, u);
    let ratio = if opt_risk == 0.0 { f64::INFINITY } else { naive_risk / opt_risk };
    let active_count = u.iter().filter(|&&v| active(v)).count();
    let v = variation_matrix(u, n_a, changed);
    let col_sums = (0..v.ncols()).map(|j| v.column(j).iter().map(|&x| x as usize).sum::<usize>());
    let row_sums = (0..v.nrows()).map(|i| v.row(i).iter().map(|&x| x as usize).sum::<usize>());
    MetricSet {
        ratio,
        density_pct: 100.0 * active_count as f64 / u.len() as f64,
        shorts: u.iter().filter(|&&v| short(v)).count(),
        t_cost: v.iter().map(|&x| x as usize).sum(),
        v_norm1: col_sums.max().unwrap_or(0),
        v_norm_inf: row_sums.max().unwrap_or(0),
    }
}

/// Metrics of `u_opt` against the benchmark, both on the raw vector and after
/// zeroing holdings below `eps1` in magnitude.
pub fn compute_metrics(
    u_opt: &DVector<f64>,
    u_naive: &DVector<f64>,
    c: &DMatrix<f64>,
    n_a: usize,
    eps1: f64,
    eps2: f64,
) -> Result<PortfolioMetrics> {
    if !(eps1 > 0.0) || !(eps2 > 0.0) {
        return Err(Error::InvalidConfig(format!("thresholds must be positive (eps1={eps1}, eps2={eps2})")));
    }
    let n = u_opt.len();
    if n_a == 0 || n % n_a != 0 {
        return Err(Error::InvalidProblem(format!("{n} holdings do not split into blocks of {n_a} assets")));
    }
    for (what, len) in [("naive holdings", u_naive.len()), ("C order", c.nrows()), ("C columns", c.ncols())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                left: what,
                right: "holdings",
                expected: n,
                found: len,
            });
        }
    }
    let naive_risk = risk(c, u_naive);
    let thresholded_u = u_opt.map(|v| if v.abs() >= eps1 { v } else { 0.0 });
    Ok(PortfolioMetrics {
        thresholded: metric_set(
            &thresholded_u,
            naive_risk,
            c,
            n_a,
            |v| v.abs() >= eps1,
            |v| v <= -eps1,
            |dv| dv >= eps2,
        ),
        raw: metric_set(u_opt, naive_risk, c, n_a, |v| v != 0.0, |v| v < 0.0, |dv| dv > 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn difference_matrix_shape_and_first_row() {
        let d = difference_matrix(2, 3);
        assert_eq!(d.shape(), (4, 6));
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constraint_matrix_two_periods() {
        let (a, b) = constraint_matrix(&[dv(&[0.1, 0.2]), dv(&[0.0, 0.0])], 1.0, 1.3).unwrap();
        assert_eq!(a, dmatrix![1.0, 1.0, 0.0, 0.0; -1.1, -1.2, 1.0, 1.0; 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(b.as_slice(), &[1.0, 0.0, 1.3]);
    }

    #[test]
    fn single_period_constraints() {
        let (a, _) = constraint_matrix(&[dv(&[0.1, 0.3])], 1.0, 1.2).unwrap();
        assert_eq!(a, dmatrix![1.0, 1.0; 1.1, 1.3]);
    }

    #[test]
    fn naive_single_period() {
        let nv = naive_wealth(&[dv(&[0.1, 0.3])], 2, 1.0);
        assert!((nv.xi_naive - 1.2).abs() < 1e-15);
        assert_eq!(nv.u.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn naive_without_growth() {
        let nv = naive_wealth(&[dv(&[0.0; 3]), dv(&[0.0; 3])], 3, 2.0);
        assert_eq!(nv.xi_naive, 2.0);
        assert!(nv.u.iter().all(|&v| v == 2.0 / 3.0));
    }

    #[test]
    fn metrics_threshold_counts() {
        let u = dv(&[0.5, 0.0, 1e-5, -0.2]);
        let c = DMatrix::identity(4, 4);
        let met = compute_metrics(&u, &u, &c, 2, 1e-4, 1e-4).unwrap();
        assert_eq!(met.thresholded.density_pct, 50.0);
        assert_eq!(met.thresholded.shorts, 1);
        assert_eq!(met.raw.density_pct, 75.0);
        assert_eq!(met.raw.shorts, 1);
        assert_eq!(met.raw.ratio, 1.0);
    }

    #[test]
    fn zero_risk_gives_infinite_ratio() {
        let met = compute_metrics(&dv(&[0.0, 0.0]), &dv(&[0.5, 0.5]), &DMatrix::identity(2, 2), 2, 1e-4, 1e-4).unwrap();
        assert!(met.raw.ratio.is_infinite());
    }

    #[test]
    fn constant_window_is_not_positive_definite() {
        let panel = ReturnPanel::new(
            vec!["a".into(), "b".into()],
            (0..4).map(|i| i.to_string()).collect(),
            DMatrix::from_element(4, 2, 0.01),
        )
        .unwrap();
        let opts = MomentOptions {
            window: 3,
            stride: 1,
            m: 1,
            divisor: CovDivisor::Unbiased,
            ridge: None,
        };
        match estimate_moments(&panel, &opts) {
            Err(Error::NotPositiveDefinite { what }) => assert!(what.contains("block 1")),
            other => panic!("{other:?}"),
        }
        let ridged = estimate_moments(&panel, &MomentOptions { ridge: Some(1e-6), ..opts }).unwrap();
        assert_eq!(ridged.ridge, 1e-6);
    }

    #[test]
    fn rejects_total_loss() {
        let r = ReturnPanel::new(vec!["a".into()], vec!["p".into()], dmatrix![-1.0]);
        assert!(r.is_err());
    }
}
