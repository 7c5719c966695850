//! Clamped B-spline curves in 3D and least-squares fitting.

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;

/// Control-point count used when none is given: `max(4, ⌈points/3⌉)`.
pub fn default_control_count(points: usize) -> usize {
    points.div_ceil(3).max(4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BSpline {
    degree: usize,
    control_points: Vec<Vector3<f64>>,
    knots: Vec<f64>,
}

impl BSpline {
    pub fn new(degree: usize, control_points: Vec<Vector3<f64>>, knots: Vec<f64>) -> Result<Self> {
        if degree == 0 || control_points.len() < degree + 1 {
            return Err(Error::InsufficientPoints { needed: degree + 1, got: control_points.len() });
        }
        if knots.len() != control_points.len() + degree + 1 {
            return Err(Error::Config(format!(
                "knot count {} != control count {} + degree {} + 1",
                knots.len(),
                control_points.len(),
                degree
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Config("knot vector must be non-decreasing".into()));
        }
        let clamped =
            knots[..=degree].iter().all(|&k| k == 0.0) && knots[knots.len() - degree - 1..].iter().all(|&k| k == 1.0);
        if !clamped {
            return Err(Error::Config("knot vector must be clamped to [0, 1]".into()));
        }
        Ok(Self { degree, control_points, knots })
    }

    /// Clamped spline over [0, 1] with uniformly spaced interior knots.
    pub fn with_uniform_knots(degree: usize, control_points: Vec<Vector3<f64>>) -> Result<Self> {
        let knots = clamped_uniform_knots(control_points.len().max(degree + 1), degree);
        Self::new(degree, control_points, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.control_points
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Evaluates the curve at `u ∈ [0, 1]` with de Boor's algorithm.
    pub fn eval(&self, u: f64) -> Result<Vector3<f64>> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::OutOfRange { value: u, lo: 0.0, hi: 1.0 });
        }
        let p = self.degree;
        let k = find_span(&self.knots, self.control_points.len(), p, u);
        let mut d: Vec<Vector3<f64>> = (0..=p).map(|j| self.control_points[j + k - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + k - p;
                let denom = self.knots[i + p + 1 - r] - self.knots[i];
                let alpha = if denom > 0.0 { (u - self.knots[i]) / denom } else { 0.0 };
                d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
            }
        }
        Ok(d[p])
    }

    /// Upper bound on `|dC/du|` from the hodograph's control polygon.
    pub fn speed_bound(&self) -> f64 {
        let p = self.degree as f64;
        self.control_points
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let span = self.knots[i + self.degree + 1] - self.knots[i + 1];
                if span > 0.0 {
                    p * (w[1] - w[0]).norm() / span
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// Least-squares clamped spline through `points` using chord-length parameters.
    pub fn fit(points: &[Vector3<f64>], degree: usize, n_control: usize) -> Result<Self> {
        let params = chord_length_params(points)?;
        Self::fit_with_params(points, &params, degree, n_control)
    }

    /// Least-squares fit at caller-chosen parameters (uniform interior knots).
    pub fn fit_with_params(points: &[Vector3<f64>], params: &[f64], degree: usize, n_control: usize) -> Result<Self> {
        if degree == 0 || n_control < degree + 1 {
            return Err(Error::InsufficientPoints { needed: degree + 1, got: n_control });
        }
        if points.len() < n_control {
            return Err(Error::InsufficientPoints { needed: n_control, got: points.len() });
        }
        if params.len() != points.len() {
            return Err(Error::Dimension(format!("{} parameters for {} points", params.len(), points.len())));
        }
        if let Some(&u) = params.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::OutOfRange { value: u, lo: 0.0, hi: 1.0 });
        }
        let knots = clamped_uniform_knots(n_control, degree);
        let m = points.len();
        let mut design = DMatrix::<f64>::zeros(m, n_control);
        for (row, &u) in params.iter().enumerate() {
            let span = find_span(&knots, n_control, degree, u);
            let basis = basis_functions(&knots, span, degree, u);
            for (j, b) in basis.iter().enumerate() {
                design[(row, span - degree + j)] = *b;
            }
        }
        let rhs = DMatrix::<f64>::from_fn(m, 3, |i, j| points[i][j]);

        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::RankDeficient);
        }
        let sol = svd.solve(&rhs, 0.0).map_err(|_| Error::RankDeficient)?;
        let control = (0..n_control).map(|i| Vector3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)])).collect();
        Self::new(degree, control, knots)
    }
}

/// Cumulative chord length normalized to [0, 1].
pub fn chord_length_params(points: &[Vector3<f64>]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: points.len() });
    }
    let mut acc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        total += (w[1] - w[0]).norm();
        acc.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::RankDeficient);
    }
    let last = acc.len() - 1;
    for (i, v) in acc.iter_mut().enumerate() {
        *v = if i == last { 1.0 } else { *v / total };
    }
    Ok(acc)
}

pub fn clamped_uniform_knots(n_control: usize, degree: usize) -> Vec<f64> {
    let interior = n_control - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    knots.extend((1..=interior).map(|i| i as f64 / (interior + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

fn find_span(knots: &[f64], n_control: usize, degree: usize, u: f64) -> usize {
    if u >= knots[n_control] {
        return n_control - 1;
    }
    let (mut lo, mut hi) = (degree, n_control);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Nonzero basis functions `N_{span-p..=span, p}(u)`.
fn basis_functions(knots: &[f64], span: usize, degree: usize, u: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct Cox–de Boor recursion, independent of the span/de Boor code paths.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, u: f64, n_control: usize) -> f64 {
        if p == 0 {
            let last = i == n_control - 1;
            return if (knots[i] <= u && u < knots[i + 1]) || (last && u == knots[i + 1]) { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (u - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, u, n_control);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - u) / d2 * cox_de_boor(knots, i + 1, p - 1, u, n_control);
        }
        v
    }

    fn random_spline(rng: &mut ChaCha8Rng, n: usize) -> BSpline {
        let ctrl = (0..n)
            .map(|_| Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect();
        BSpline::with_uniform_knots(3, ctrl).unwrap()
    }

    #[test]
    fn linear_two_point_fit_hits_midpoint() {
        let a = Vector3::new(0.0, 1.0, 2.0);
        let b = Vector3::new(4.0, -1.0, 0.0);
        let s = BSpline::fit(&[a, b], 1, 2).unwrap();
        assert!((s.eval(0.5).unwrap() - (a + b) / 2.0).norm() < 1e-12);
    }

    #[test]
    fn endpoints_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spline(&mut rng, 7);
        assert!((s.eval(0.0).unwrap() - s.control_points()[0]).norm() < 1e-12);
        assert!((s.eval(1.0).unwrap() - s.control_points()[6]).norm() < 1e-12);
    }

    #[test]
    fn de_boor_matches_cox_de_boor_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_spline(&mut rng, 9);
        for k in 0..=50 {
            let u = k as f64 / 50.0;
            let direct: Vector3<f64> = (0..9).map(|i| s.control_points()[i] * cox_de_boor(s.knots(), i, 3, u, 9)).sum();
            assert!((s.eval(u).unwrap() - direct).norm() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn out_of_range_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_spline(&mut rng, 4);
        assert!(matches!(s.eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(s.eval(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn exact_round_trip_at_generating_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_spline(&mut rng, 8);
        let params: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let pts: Vec<_> = params.iter().map(|&u| truth.eval(u).unwrap()).collect();
        let fit = BSpline::fit_with_params(&pts, &params, 3, 8).unwrap();
        for (p, &u) in pts.iter().zip(&params) {
            assert!((fit.eval(u).unwrap() - p).norm() < 1e-8);
        }
    }

    #[test]
    fn interpolates_when_points_equal_control_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_spline(&mut rng, 6);
        let pts: Vec<_> = (0..6).map(|i| truth.eval(i as f64 / 5.0).unwrap()).collect();
        let fit = BSpline::fit(&pts, 3, 6).unwrap();
        let params = chord_length_params(&pts).unwrap();
        for (p, &u) in pts.iter().zip(&params) {
            assert!((fit.eval(u).unwrap() - p).norm() < 1e-8);
        }
    }

    #[test]
    fn noisy_arc_residual_is_bounded_by_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = 0.01;
        let pts: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 / 99.0 * 2.0;
                Vector3::new(
                    3.0 * t.cos() + rng.gen_range(-noise..noise),
                    rng.gen_range(-noise..noise),
                    3.0 * t.sin() + rng.gen_range(-noise..noise),
                )
            })
            .collect();
        let fit = BSpline::fit(&pts, 3, default_control_count(pts.len())).unwrap();
        let params = chord_length_params(&pts).unwrap();
        let max_res = pts.iter().zip(&params).map(|(p, &u)| (fit.eval(u).unwrap() - p).norm()).fold(0.0, f64::max);
        assert!(max_res < 3.0 * noise, "max residual {max_res}");
    }

    #[test]
    fn adjacent_samples_respect_speed_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_spline(&mut rng, 10);
        let bound = s.speed_bound() / 29.0;
        let samples: Vec<_> = (0..30).map(|i| s.eval(i as f64 / 29.0).unwrap()).collect();
        for w in samples.windows(2) {
            assert!((w[1] - w[0]).norm() <= bound + 1e-12);
        }
    }

    #[test]
    fn fit_errors() {
        let p = Vector3::new(1.0, 1.0, 1.0);
        assert!(matches!(BSpline::fit(&[p, p * 2.0], 3, 4), Err(Error::InsufficientPoints { .. })));
        assert!(matches!(BSpline::fit(&[p; 6], 3, 4), Err(Error::RankDeficient)));
        // Parameters collapsed onto one knot span cannot determine all controls.
        let pts: Vec<_> = (0..6).map(|i| p * i as f64).collect();
        let params = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05];
        assert!(matches!(BSpline::fit_with_params(&pts, &params, 3, 6), Err(Error::RankDeficient)));
    }

    #[test]
    fn default_control_counts() {
        assert_eq!(default_control_count(3), 4);
        assert_eq!(default_control_count(30), 10);
        assert_eq!(default_control_count(31), 11);
    }
}
