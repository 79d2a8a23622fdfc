use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq_min_norm, solve_spd_mat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinRegMode {
    /// Pseudoinverse solution.
    MinNorm,
    /// `(X^T X + lambda I) w = X^T y`.
    Ridge(f64),
}

/// `y ~ x w + offset`, one column of `w` per target.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub w: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.w;
        for mut row in y.row_iter_mut() {
            row += self.offset.transpose();
        }
        y
    }
}

/// Least squares of `y` (samples x targets) on `x` (samples x features).
///
/// With `intercept`, both sides are centred first and the offset recovered
/// from the means; otherwise the offset is zero.
pub fn linreg_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, mode: LinRegMode, intercept: bool) -> LinearFit {
    assert_eq!(x.nrows(), y.nrows(), "features and targets need the same samples");
    let (xm, ym) = if intercept && x.nrows() > 0 {
        (x.row_mean(), y.row_mean())
    } else {
        (DMatrix::zeros(1, x.ncols()).row(0).into_owned(), DMatrix::zeros(1, y.ncols()).row(0).into_owned())
    };
    let mut xc = x.clone();
    let mut yc = y.clone();
    if intercept {
        for mut row in xc.row_iter_mut() {
            row -= &xm;
        }
        for mut row in yc.row_iter_mut() {
            row -= &ym;
        }
    }
    let w = match mode {
        LinRegMode::MinNorm => lstsq_min_norm(&xc, &yc),
        LinRegMode::Ridge(lambda) => {
            let p = xc.ncols();
            let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
            solve_spd_mat(&gram, &(xc.transpose() * &yc))
        }
    };
    let offset = (ym - xm * &w).transpose();
    LinearFit { w, offset }
}
