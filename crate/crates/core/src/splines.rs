//! Univariate B-spline bases on clamped knot vectors.
//!
//! A [`KnotGrid`] with `m` interior knots and degree `d` spans `m + d + 1`
//! basis functions. The boundary knots are repeated `d + 1` times, so the
//! first and last basis functions equal one at `a` and `b` respectively.
//! Support intervals are half-open except for the last, which is closed at `b`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::math::abs;

/// Largest supported spline degree; fixes the size of stack buffers.
pub const MAX_DEGREE: usize = 7;

/// Non-zero basis values at one point: `values[..=degree]` hold
/// `N_{first}, …, N_{first + degree}`.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    a: f64,
    b: f64,
    interior: Vec<f64>,
    degree: usize,
    knots: Vec<f64>,
}

impl KnotGrid {
    pub fn new(a: f64, b: f64, interior: Vec<f64>, degree: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(contract!("boundary knots must satisfy a < b, got [{a}, {b}]"));
        }
        if degree > MAX_DEGREE {
            return Err(contract!("spline degree {degree} exceeds {MAX_DEGREE}"));
        }
        let mut prev = a;
        for &t in &interior {
            if !(t.is_finite() && t > prev && t < b) {
                return Err(contract!(
                    "interior knots must be strictly increasing inside ({a}, {b})"
                ));
            }
            prev = t;
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * degree + 2);
        knots.extend(core::iter::repeat_n(a, degree + 1));
        knots.extend_from_slice(&interior);
        knots.extend(core::iter::repeat_n(b, degree + 1));
        Ok(Self {
            a,
            b,
            interior,
            degree,
            knots,
        })
    }

    /// `m` equally spaced interior knots.
    pub fn uniform(a: f64, b: f64, m: usize, degree: usize) -> Result<Self> {
        let h = (b - a) / (m + 1) as f64;
        Self::new(a, b, (1..=m).map(|r| a + h * r as f64).collect(), degree)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The clamped knot vector `t_0, …, t_{m+2d+1}`.
    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    pub fn basis_len(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    /// Same interior knots and boundary, different degree.
    pub fn with_degree(&self, degree: usize) -> Result<Self> {
        Self::new(self.a, self.b, self.interior.clone(), degree)
    }

    /// Same boundary and degree, new interior knots.
    pub fn with_interior(&self, interior: Vec<f64>) -> Result<Self> {
        Self::new(self.a, self.b, interior, self.degree)
    }

    /// Snaps points within `1e-12 (b - a)` of a boundary onto it.
    fn snap(&self, u: f64) -> Option<f64> {
        let tol = 1e-12 * (self.b - self.a);
        if u.is_nan() {
            None
        } else if abs(u - self.a) <= tol {
            Some(self.a)
        } else if abs(u - self.b) <= tol {
            Some(self.b)
        } else if u > self.a && u < self.b {
            Some(u)
        } else {
            None
        }
    }

    fn domain_error(&self, u: f64) -> Error {
        Error::Domain {
            value: u,
            lo: self.a,
            hi: self.b,
        }
    }

    /// Index `k` with `t_k <= u < t_{k+1}`, closed on the right at `b`.
    fn span(&self, u: f64) -> usize {
        let d = self.degree;
        let n = self.basis_len();
        if u >= self.b {
            return n - 1;
        }
        // first knot strictly greater than u, searched over t_{d+1}..t_n
        let upper = &self.knots[d + 1..=n];
        d + upper.partition_point(|&t| t <= u)
    }

    /// The `d + 1` possibly non-zero basis values at `u`.
    pub fn local_basis(&self, u: f64) -> Result<LocalBasis> {
        let u = self.snap(u).ok_or_else(|| self.domain_error(u))?;
        Ok(self.local_basis_unchecked(u))
    }

    fn local_basis_unchecked(&self, u: f64) -> LocalBasis {
        let d = self.degree;
        let t = &self.knots;
        let k = self.span(u);
        let mut out = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=d {
            left[j] = u - t[k + 1 - j];
            right[j] = t[k + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        LocalBasis {
            first: k - d,
            values: out,
        }
    }

    /// All `m + d + 1` basis values at `u`.
    pub fn basis_eval(&self, u: f64) -> Result<Vec<f64>> {
        let local = self.local_basis(u)?;
        let mut out = vec![0.0; self.basis_len()];
        out[local.first..=local.first + self.degree]
            .copy_from_slice(&local.values[..=self.degree]);
        Ok(out)
    }
}

/// Row `i` holds the basis at `values[i]`.
pub fn basis_matrix(values: &[f64], grid: &KnotGrid) -> Result<Matrix> {
    let cols = grid.basis_len();
    let mut m = Matrix::zeros(values.len(), cols);
    for (i, &u) in values.iter().enumerate() {
        let local = grid.local_basis(u).map_err(|_| Error::DomainAt {
            index: i,
            value: u,
            lo: grid.a,
            hi: grid.b,
        })?;
        m.row_mut(i)[local.first..=local.first + grid.degree]
            .copy_from_slice(&local.values[..=grid.degree]);
    }
    Ok(m)
}

fn check_len(grid: &KnotGrid, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != grid.basis_len() {
        return Err(contract!(
            "expected {} spline coefficients, got {}",
            grid.basis_len(),
            coeffs.len()
        ));
    }
    Ok(())
}

pub fn spline_eval(u: f64, grid: &KnotGrid, coeffs: &[f64]) -> Result<f64> {
    check_len(grid, coeffs)?;
    let local = grid.local_basis(u)?;
    Ok(local.values[..=grid.degree]
        .iter()
        .zip(&coeffs[local.first..])
        .map(|(n, c)| n * c)
        .sum())
}

/// Coefficients of the first derivative, a spline of degree `d - 1` on the
/// same interior knots.
fn derivative_coeffs(grid: &KnotGrid, coeffs: &[f64]) -> Vec<f64> {
    let d = grid.degree;
    let t = &grid.knots;
    (0..coeffs.len() - 1)
        .map(|i| d as f64 * (coeffs[i + 1] - coeffs[i]) / (t[i + d + 1] - t[i + 1]))
        .collect()
}

/// Analytic derivative of the given order at `u`.
pub fn spline_deriv(u: f64, grid: &KnotGrid, coeffs: &[f64], order: usize) -> Result<f64> {
    check_len(grid, coeffs)?;
    if order > grid.degree {
        grid.local_basis(u)?;
        return Ok(0.0);
    }
    let mut g = grid.clone();
    let mut c = coeffs.to_vec();
    for _ in 0..order {
        c = derivative_coeffs(&g, &c);
        g = g.with_degree(g.degree - 1)?;
    }
    spline_eval(u, &g, &c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Second derivative at `a` or `b`. Clamping makes this the first or last
/// coefficient of the second-derivative spline.
pub fn spline_deriv2_at_boundary(grid: &KnotGrid, coeffs: &[f64], side: Side) -> Result<f64> {
    if grid.degree < 2 {
        return Err(contract!(
            "second derivative needs degree >= 2, got {}",
            grid.degree
        ));
    }
    check_len(grid, coeffs)?;
    let first = derivative_coeffs(grid, coeffs);
    let second = derivative_coeffs(&grid.with_degree(grid.degree - 1)?, &first);
    Ok(match side {
        Side::Left => second[0],
        Side::Right => second[second.len() - 1],
    })
}

/// Linear map from `m + 2` free coefficients onto the `m + 4` cubic B-spline
/// coefficients whose spline has zero second derivative at both boundaries.
///
/// The free coefficients are the full coefficients with indices 1 and `m + 2`
/// removed; those two are solved from the boundary conditions. Each reduced
/// coefficient is therefore still an ordinary B-spline coefficient (the first
/// is `s(a)`, the last `s(b)`), and the map depends continuously on the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalCubicMap {
    grid: KnotGrid,
    reduction: Matrix,
}

impl NaturalCubicMap {
    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    /// `(m + 4) × (m + 2)` reduction matrix.
    pub fn reduction(&self) -> &Matrix {
        &self.reduction
    }

    pub fn reduced_len(&self) -> usize {
        self.reduction.cols()
    }

    pub fn full_coeffs(&self, reduced: &[f64]) -> Vec<f64> {
        self.reduction.mul_vec(reduced)
    }
}

pub fn natural_cubic_map(grid: &KnotGrid) -> Result<NaturalCubicMap> {
    if grid.degree != 3 {
        return Err(contract!(
            "natural splines are cubic, got degree {}",
            grid.degree
        ));
    }
    let n = grid.basis_len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut unit = vec![0.0; n];
    for i in 0..n {
        unit[i] = 1.0;
        left[i] = spline_deriv2_at_boundary(grid, &unit, Side::Left)?;
        right[i] = spline_deriv2_at_boundary(grid, &unit, Side::Right)?;
        unit[i] = 0.0;
    }
    let (p, q) = (1, n - 2);
    let det = left[p] * right[q] - left[q] * right[p];
    let free: Vec<usize> = (0..n).filter(|&i| i != p && i != q).collect();
    let mut reduction = Matrix::zeros(n, free.len());
    for (j, &i) in free.iter().enumerate() {
        reduction[(i, j)] = 1.0;
        // [L_p L_q; R_p R_q] [c_p; c_q] = -[L_i; R_i]
        let (li, ri) = (-left[i], -right[i]);
        reduction[(p, j)] = (li * right[q] - left[q] * ri) / det;
        reduction[(q, j)] = (left[p] * ri - li * right[p]) / det;
    }
    Ok(NaturalCubicMap {
        grid: grid.clone(),
        reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook Cox–de Boor recursion straight from the definition, with the
    /// 0/0 = 0 convention and the last non-degenerate interval closed at b.
    fn oracle_basis(i: usize, d: usize, u: f64, t: &[f64]) -> f64 {
        if d == 0 {
            let last = (0..t.len() - 1).rev().find(|&j| t[j] < t[j + 1]).unwrap();
            let inside = t[i] <= u && u < t[i + 1];
            let closed_end = u == t[t.len() - 1] && i == last;
            return if inside || closed_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let den1 = t[i + d] - t[i];
        if den1 > 0.0 {
            v += (u - t[i]) / den1 * oracle_basis(i, d - 1, u, t);
        }
        let den2 = t[i + d + 1] - t[i + 1];
        if den2 > 0.0 {
            v += (t[i + d + 1] - u) / den2 * oracle_basis(i + 1, d - 1, u, t);
        }
        v
    }

    fn oracle_all(grid: &KnotGrid, u: f64) -> Vec<f64> {
        let t = grid.knot_vector();
        let n = grid.basis_len();
        (0..n).map(|i| oracle_basis(i, grid.degree(), u, t)).collect()
    }

    fn cubic_thirds() -> KnotGrid {
        KnotGrid::new(0.0, 1.0, vec![1.0 / 3.0, 2.0 / 3.0], 3).unwrap()
    }

    #[test]
    fn constant_basis_without_interior_knots() {
        let g = KnotGrid::new(0.0, 1.0, vec![], 0).unwrap();
        assert_eq!(g.basis_eval(0.5).unwrap(), vec![1.0]);
    }

    #[test]
    fn clamped_endpoints() {
        let g = cubic_thirds();
        assert_eq!(g.basis_eval(0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.basis_eval(1.0).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn midpoint_matches_oracle() {
        let g = cubic_thirds();
        let got = g.basis_eval(0.5).unwrap();
        let want = oracle_all(&g, 0.5);
        // frozen from the recursion: N_2 = N_5 = 1/32, N_3 = N_4 = 15/32
        let frozen = [0.0, 1.0 / 32.0, 15.0 / 32.0, 15.0 / 32.0, 1.0 / 32.0, 0.0];
        for i in 0..6 {
            assert!((got[i] - want[i]).abs() < 1e-14);
            assert!((want[i] - frozen[i]).abs() < 1e-14, "i={i}: {}", want[i]);
        }
    }

    #[test]
    fn out_of_domain_is_error() {
        let g = cubic_thirds();
        assert!(matches!(g.basis_eval(1.5), Err(Error::Domain { .. })));
        assert!(matches!(g.basis_eval(f64::NAN), Err(Error::Domain { .. })));
        // drift within 1e-12 (b - a) is absorbed
        assert_eq!(g.basis_eval(1.0 + 1e-13).unwrap()[5], 1.0);
        let err = basis_matrix(&[0.1, -0.5], &g).unwrap_err();
        assert!(matches!(err, Error::DomainAt { index: 1, .. }));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(KnotGrid::new(1.0, 0.0, vec![], 1).is_err());
        assert!(KnotGrid::new(0.0, 1.0, vec![0.5, 0.5], 1).is_err());
        assert!(KnotGrid::new(0.0, 1.0, vec![1.0], 1).is_err());
    }

    #[test]
    fn basis_matrix_shapes() {
        let g = cubic_thirds();
        assert_eq!(basis_matrix(&[], &g).unwrap().rows(), 0);
        let m = basis_matrix(&[0.0], &g).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let m = basis_matrix(&values, &g).unwrap();
        for i in 0..100 {
            assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_eval_examples() {
        let g = cubic_thirds();
        assert!((spline_eval(0.37, &g, &[2.5; 6]).unwrap() - 2.5).abs() < 1e-14);
        let alpha = 2.0;
        let c: Vec<f64> = (1..=6).map(|i| -alpha * (-1f64).powi(i)).collect();
        assert_eq!(spline_eval(0.0, &g, &c).unwrap(), 2.0);
        assert!(spline_eval(0.5, &g, &c[..5]).is_err());
    }

    #[test]
    fn deriv2_requires_degree_two() {
        let g = KnotGrid::new(0.0, 1.0, vec![0.5], 1).unwrap();
        assert!(spline_deriv2_at_boundary(&g, &[0.0; 3], Side::Left).is_err());
    }

    #[test]
    fn deriv2_of_straight_line_is_zero() {
        // Greville abscissae reproduce the identity function
        let g = KnotGrid::new(0.0, 2.0, vec![0.4, 1.1, 1.5], 3).unwrap();
        let t = g.knot_vector();
        let c: Vec<f64> = (0..g.basis_len())
            .map(|i| 3.0 * (t[i + 1] + t[i + 2] + t[i + 3]) / 3.0 - 1.0)
            .collect();
        for side in [Side::Left, Side::Right] {
            assert!(spline_deriv2_at_boundary(&g, &c, side).unwrap().abs() < 1e-12);
        }
        assert!((spline_eval(0.77, &g, &c).unwrap() - (3.0 * 0.77 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn deriv2_matches_finite_differences() {
        let g = KnotGrid::new(0.0, 1.0, vec![0.2, 0.45, 0.8], 3).unwrap();
        let c = [0.3, -1.2, 0.7, 2.0, -0.4, 1.1, 0.9];
        let h = 1e-4;
        let f = |u: f64| spline_eval(u, &g, &c).unwrap();
        // one-sided second differences at the endpoints, central ones slightly inside
        let fd_left = (f(0.0) - 2.0 * f(h) + f(2.0 * h)) / (h * h);
        let fd_right = (f(1.0) - 2.0 * f(1.0 - h) + f(1.0 - 2.0 * h)) / (h * h);
        let left = spline_deriv2_at_boundary(&g, &c, Side::Left).unwrap();
        let right = spline_deriv2_at_boundary(&g, &c, Side::Right).unwrap();
        // one-sided differences carry an O(h) bias of s'''·h
        let s3l = spline_deriv(0.0, &g, &c, 3).unwrap();
        let s3r = spline_deriv(1.0, &g, &c, 3).unwrap();
        assert!(((fd_left - s3l * h) - left).abs() <= 1e-4 * left.abs().max(1.0));
        assert!(((fd_right + s3r * h) - right).abs() <= 1e-4 * right.abs().max(1.0));
        let u = 0.3;
        let central = (f(u + h) - 2.0 * f(u) + f(u - h)) / (h * h);
        let exact = spline_deriv(u, &g, &c, 2).unwrap();
        assert!((central - exact).abs() <= 1e-4 * exact.abs().max(1.0));
    }

    #[test]
    fn natural_map_dimensions_and_constraints() {
        let g0 = KnotGrid::new(0.0, 1.0, vec![], 3).unwrap();
        let nm = natural_cubic_map(&g0).unwrap();
        assert_eq!(nm.reduction().rows(), 4);
        assert_eq!(nm.reduced_len(), 2);
        // with no interior knots the natural space is the affine functions
        let c = nm.full_coeffs(&[1.0, 3.0]);
        for &u in &[0.0, 0.25, 0.6, 1.0] {
            assert!((spline_eval(u, &g0, &c).unwrap() - (1.0 + 2.0 * u)).abs() < 1e-12);
        }

        let g2 = cubic_thirds();
        let nm = natural_cubic_map(&g2).unwrap();
        assert_eq!((nm.reduction().rows(), nm.reduced_len()), (6, 4));
        assert_eq!(nm.reduction().rank(1e-10), 4);
        assert!(natural_cubic_map(&g2.with_degree(2).unwrap()).is_err());
    }

    #[test]
    fn first_derivative_matches_central_differences() {
        let g = KnotGrid::new(-1.0, 3.0, vec![0.0, 0.5, 2.2], 3).unwrap();
        let c = [1.0, 0.2, -0.5, 2.0, 1.5, -1.0, 0.3];
        for &u in &[-0.7, 0.25, 1.3, 2.9] {
            let h = 1e-6;
            let fd = (spline_eval(u + h, &g, &c).unwrap() - spline_eval(u - h, &g, &c).unwrap())
                / (2.0 * h);
            let exact = spline_deriv(u, &g, &c, 1).unwrap();
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0));
        }
    }

    fn arb_grid() -> impl Strategy<Value = KnotGrid> {
        (0usize..=3, 0usize..=6, -5.0f64..5.0, 0.5f64..10.0).prop_flat_map(|(d, m, a, w)| {
            proptest::collection::vec(0.01f64..1.0, m + 1).prop_map(move |gaps| {
                let total: f64 = gaps.iter().sum();
                let mut acc = 0.0;
                let interior = gaps[..m]
                    .iter()
                    .map(|g| {
                        acc += g;
                        a + w * acc / total
                    })
                    .collect();
                KnotGrid::new(a, a + w, interior, d).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_nonnegativity(grid in arb_grid(), s in 0.0f64..=1.0) {
            let u = grid.a() + s * (grid.b() - grid.a());
            let v = grid.basis_eval(u).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn agrees_with_recursive_oracle(grid in arb_grid(), s in 0.0f64..=1.0,
                                        coeffs in proptest::collection::vec(-3.0f64..3.0, 11)) {
            let u = grid.a() + s * (grid.b() - grid.a());
            let got = grid.basis_eval(u).unwrap();
            let want = oracle_all(&grid, u);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-12);
            }
            let c = &coeffs[..grid.basis_len()];
            let direct: f64 = want.iter().zip(c).map(|(n, c)| n * c).sum();
            prop_assert!((spline_eval(u, &grid, c).unwrap() - direct).abs() < 1e-12);
        }

        #[test]
        fn local_support(grid in arb_grid(), s in 0.0f64..1.0) {
            let u = grid.a() + s * (grid.b() - grid.a());
            let v = grid.basis_eval(u).unwrap();
            let t = grid.knot_vector();
            let d = grid.degree();
            for (i, &x) in v.iter().enumerate() {
                if u < t[i] || u > t[i + d + 1] {
                    prop_assert_eq!(x, 0.0);
                }
            }
        }

        #[test]
        fn natural_image_has_zero_boundary_curvature(
            m in 0usize..6,
            reduced in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let grid = KnotGrid::uniform(0.0, 2.0, m, 3).unwrap();
            let nm = natural_cubic_map(&grid).unwrap();
            let c = nm.full_coeffs(&reduced[..m + 2]);
            for side in [Side::Left, Side::Right] {
                prop_assert!(spline_deriv2_at_boundary(&grid, &c, side).unwrap().abs() < 1e-10);
            }
        }
    }
}
