//! Signed curvature along closed contours.
//!
//! Contours are resampled at uniform arc length through a periodic cubic
//! spline, then differentiated with central differences. Resampling the raw
//! polyline instead would put all the turning into spikes at its vertices.

use serde::{Deserialize, Serialize};

use super::contour::{dist, Contour};
use crate::error::{Error, Result};

/// Resampled points per native vertex.
pub const RESAMPLE_FACTOR: usize = 4;

/// Fewest distinct vertices a contour needs for a curvature estimate.
pub const MIN_VERTICES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    /// Uniformly spaced points, not repeated at the end.
    pub points: Vec<[f64; 2]>,
    /// Arc length at each point from the first.
    pub s: Vec<f64>,
    pub kappa: Vec<f64>,
    pub spacing: f64,
}

impl CurvatureProfile {
    /// `∮ κ ds`; `±2π` for a simple closed curve.
    pub fn total_turning(&self) -> f64 {
        self.kappa.iter().sum::<f64>() * self.spacing
    }

    /// Index and value of the most negative curvature.
    pub fn most_concave(&self) -> (usize, f64) {
        self.kappa
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, k)| if k < best.1 { (i, k) } else { best })
    }

    /// Polar angle of every point about `centre`, in `[0, 2π)`.
    pub fn polar_angles(&self, centre: [f64; 2]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                let a = (p[1] - centre[1]).atan2(p[0] - centre[0]).rem_euclid(std::f64::consts::TAU);
                // rem_euclid rounds tiny negative angles up to 2π
                if a >= std::f64::consts::TAU {
                    0.0
                } else {
                    a
                }
            })
            .collect()
    }
}

/// Curvature at `RESAMPLE_FACTOR` times the contour's vertex count.
pub fn contour_curvature(contour: &Contour) -> Result<CurvatureProfile> {
    curvature_with(contour, RESAMPLE_FACTOR * contour.vertex_count())
}

/// Curvature at `samples` uniformly spaced points. Counterclockwise
/// curves have positive curvature where convex.
pub fn curvature_with(contour: &Contour, samples: usize) -> Result<CurvatureProfile> {
    let n = contour.vertex_count();
    if n < MIN_VERTICES {
        return Err(Error::TooCoarse(n));
    }
    if contour.points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("contour point".into()));
    }
    let pts = &contour.points[..n];
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(0.0);
    for i in 0..n {
        let h = dist(pts[i], pts[(i + 1) % n]);
        if h == 0.0 {
            return Err(Error::Shape("contour has repeated consecutive points".into()));
        }
        knots.push(knots[i] + h);
    }
    let sx = PeriodicSpline::new(&knots, &pts.iter().map(|p| p[0]).collect::<Vec<_>>());
    let sy = PeriodicSpline::new(&knots, &pts.iter().map(|p| p[1]).collect::<Vec<_>>());

    // arc length of the spline, tabulated on a dense parameter grid
    const SUB: usize = 16;
    let mut table_t = Vec::with_capacity(n * SUB + 1);
    let mut table_s = Vec::with_capacity(n * SUB + 1);
    let mut prev = [sx.eval(0.0), sy.eval(0.0)];
    let mut acc = 0.0;
    table_t.push(0.0);
    table_s.push(0.0);
    for i in 0..n {
        for k in 1..=SUB {
            let t = knots[i] + (knots[i + 1] - knots[i]) * k as f64 / SUB as f64;
            let p = [sx.eval(t), sy.eval(t)];
            acc += dist(prev, p);
            prev = p;
            table_t.push(t);
            table_s.push(acc);
        }
    }
    let total = acc;
    let m = samples.max(MIN_VERTICES);
    let ds = total / m as f64;
    let mut points = Vec::with_capacity(m);
    let mut s = Vec::with_capacity(m);
    for k in 0..m {
        let target = k as f64 * ds;
        let idx = table_s.partition_point(|&v| v < target).clamp(1, table_s.len() - 1);
        let (s0, s1) = (table_s[idx - 1], table_s[idx]);
        let f = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
        let t = table_t[idx - 1] + f * (table_t[idx] - table_t[idx - 1]);
        points.push([sx.eval(t), sy.eval(t)]);
        s.push(target);
    }
    let kappa = (0..m)
        .map(|i| {
            let a = points[(i + m - 1) % m];
            let b = points[i];
            let c = points[(i + 1) % m];
            let d1 = [(c[0] - a[0]) / (2.0 * ds), (c[1] - a[1]) / (2.0 * ds)];
            let d2 = [(c[0] - 2.0 * b[0] + a[0]) / (ds * ds), (c[1] - 2.0 * b[1] + a[1]) / (ds * ds)];
            (d1[0] * d2[1] - d1[1] * d2[0]) / (d1[0] * d1[0] + d1[1] * d1[1]).powf(1.5)
        })
        .collect();
    Ok(CurvatureProfile {
        points,
        s,
        kappa,
        spacing: ds,
    })
}

/// Interpolating cubic spline with periodic end conditions.
struct PeriodicSpline {
    knots: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl PeriodicSpline {
    /// `knots` has one more entry than `y`; the last closes the loop.
    fn new(knots: &[f64], y: &[f64]) -> Self {
        let n = y.len();
        let h = |i: usize| knots[i + 1] - knots[i];
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let hp = h((i + n - 1) % n);
            let hi = h(i);
            sub[i] = hp;
            diag[i] = 2.0 * (hp + hi);
            sup[i] = hi;
            rhs[i] = 6.0 * ((y[(i + 1) % n] - y[i]) / hi - (y[i] - y[(i + n - 1) % n]) / hp);
        }
        let m = solve_cyclic(&sub, &diag, &sup, &rhs);
        Self {
            knots: knots.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.y.len();
        let period = self.knots[n];
        let t = t.rem_euclid(period);
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1).min(n - 1);
        let h = self.knots[i + 1] - self.knots[i];
        let u = t - self.knots[i];
        let w = h - u;
        let (mi, mj) = (self.m[i], self.m[(i + 1) % n]);
        let (yi, yj) = (self.y[i], self.y[(i + 1) % n]);
        mi * w * w * w / (6.0 * h) + mj * u * u * u / (6.0 * h) + (yi / h - mi * h / 6.0) * w + (yj / h - mj * h / 6.0) * u
    }
}

/// Solves a cyclic tridiagonal system. `sub[0]` couples row 0 to the last
/// unknown and `sup[n-1]` couples the last row to the first.
fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= sub[0] * sup[n - 1] / gamma;
    let x = solve_tridiagonal(sub, &d, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = sup[n - 1];
    let z = solve_tridiagonal(sub, &d, sup, &u);
    let fact = (x[0] + sub[0] * x[n - 1] / gamma) / (1.0 + z[0] + sub[0] * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(a, b)| a - fact * b).collect()
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / den;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn polygon(pts: Vec<[f64; 2]>) -> Contour {
        let mut points = pts;
        points.push(points[0]);
        Contour { points, level: 0.5 }
    }

    fn circle(r: f64, n: usize) -> Contour {
        polygon((0..n).map(|k| {
            let a = TAU * k as f64 / n as f64;
            [r * a.cos(), r * a.sin()]
        }).collect())
    }

    #[test]
    fn circle_has_constant_curvature() {
        let c = circle(0.7, 64);
        let p = curvature_with(&c, 256).unwrap();
        for k in &p.kappa {
            assert!((k * 0.7 - 1.0).abs() < 0.02, "{k}");
        }
        assert!((p.total_turning() - TAU).abs() < 0.01 * TAU);
    }

    #[test]
    fn clockwise_circle_is_negative() {
        let mut c = circle(2.0, 40);
        c.points.reverse();
        let p = contour_curvature(&c).unwrap();
        assert!(p.kappa.iter().all(|&k| (k * 2.0 + 1.0).abs() < 0.02));
    }

    #[test]
    fn straight_sides_are_flat() {
        // long thin rectangle: curvature on the sides vanishes away from the ends
        let h = 0.05;
        let mut pts = Vec::new();
        for i in 0..=100 {
            pts.push([i as f64 * h, 0.0]);
        }
        for i in (0..=100).rev() {
            pts.push([i as f64 * h, 1.0]);
        }
        pts.dedup();
        let p = contour_curvature(&polygon(pts)).unwrap();
        let mid: Vec<f64> = p
            .points
            .iter()
            .zip(&p.kappa)
            .filter(|(q, _)| q[0] > 1.0 && q[0] < 4.0)
            .map(|(_, k)| k.abs())
            .collect();
        assert!(!mid.is_empty());
        assert!(mid.iter().all(|&k| k < 0.05 / h), "{:?}", mid.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn too_coarse_is_rejected() {
        let c = circle(1.0, 7);
        assert!(matches!(contour_curvature(&c), Err(Error::TooCoarse(7))));
        assert!(contour_curvature(&circle(1.0, 8)).is_ok());
    }

    #[test]
    fn ellipse_extremes() {
        let (a, b) = (2.0, 1.0);
        let c = polygon((0..200).map(|k| {
            let t = TAU * k as f64 / 200.0;
            [a * t.cos(), b * t.sin()]
        }).collect());
        let p = contour_curvature(&c).unwrap();
        let max = p.kappa.iter().cloned().fold(f64::MIN, f64::max);
        let min = p.kappa.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - a / (b * b)).abs() < 0.02 * a / (b * b));
        assert!((min - b / (a * a)).abs() < 0.02 * b / (a * a));
        let ang = p.polar_angles([0.0, 0.0]);
        assert!(ang.iter().all(|&t| (0.0..TAU).contains(&t)));
        assert!(ang[0] < PI / 100.0);
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 6;
        let sub: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let sup: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 * 0.2).collect();
        let diag: Vec<f64> = (0..n).map(|i| 5.0 + i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_cyclic(&sub, &diag, &sup, &rhs);
        for i in 0..n {
            let r = sub[i] * x[(i + n - 1) % n] + diag[i] * x[i] + sup[i] * x[(i + 1) % n];
            assert!((r - rhs[i]).abs() < 1e-12);
        }
    }
}
