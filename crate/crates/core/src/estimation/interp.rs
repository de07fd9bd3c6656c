//! One-dimensional cubic Hermite and linear interpolation weights.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpOrder {
    Linear,
    /// Cubic Hermite. Along the innermost grid axis slopes use the
    /// Fritsch–Carlson monotone limiter, which keeps the interpolant from
    /// ringing across the jump at the safe-set boundary; along outer axes
    /// slopes are centred differences so that the interpolant stays linear in
    /// the data and its mixed derivatives are exact.
    Cubic,
}

/// Value and first two derivatives of a scalar function at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Cell index `i` with `nodes[i] <= q <= nodes[i + 1]`, clamped to the end
/// cells. Requires at least two nodes.
pub fn cell(nodes: &[f64], q: f64) -> usize {
    let n = nodes.len();
    match nodes.partition_point(|&x| x <= q) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    }
}

struct Hermite {
    h00: f64,
    h10: f64,
    h01: f64,
    h11: f64,
}

/// Hermite basis at local coordinate `t` in a cell of width `h`, returned for
/// the value, first and second derivative in the global coordinate.
fn hermite_basis(t: f64, h: f64) -> [Hermite; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        Hermite {
            h00: 2.0 * t3 - 3.0 * t2 + 1.0,
            h10: (t3 - 2.0 * t2 + t) * h,
            h01: -2.0 * t3 + 3.0 * t2,
            h11: (t3 - t2) * h,
        },
        Hermite {
            h00: (6.0 * t2 - 6.0 * t) / h,
            h10: 3.0 * t2 - 4.0 * t + 1.0,
            h01: (-6.0 * t2 + 6.0 * t) / h,
            h11: 3.0 * t2 - 2.0 * t,
        },
        Hermite {
            h00: (12.0 * t - 6.0) / (h * h),
            h10: (6.0 * t - 4.0) / h,
            h01: (-12.0 * t + 6.0) / (h * h),
            h11: (6.0 * t - 2.0) / h,
        },
    ]
}

/// Linear weights `(node, w, w', w'')` of the interpolant at `q`; the
/// interpolated value is `Σ w·y[node]`.
pub fn weights(nodes: &[f64], q: f64, order: InterpOrder) -> Vec<(usize, [f64; 3])> {
    let n = nodes.len();
    if n == 1 {
        return vec![(0, [1.0, 0.0, 0.0])];
    }
    let i = cell(nodes, q);
    let h = nodes[i + 1] - nodes[i];
    let t = (q - nodes[i]) / h;
    match order {
        InterpOrder::Linear => vec![(i, [1.0 - t, -1.0 / h, 0.0]), (i + 1, [t, 1.0 / h, 0.0])],
        InterpOrder::Cubic => {
            let basis = hermite_basis(t, h);
            // Slope at node j as weights over neighbouring nodes.
            let slope = |j: usize| -> Vec<(usize, f64)> {
                if j == 0 {
                    let d = nodes[1] - nodes[0];
                    vec![(0, -1.0 / d), (1, 1.0 / d)]
                } else if j == n - 1 {
                    let d = nodes[n - 1] - nodes[n - 2];
                    vec![(n - 2, -1.0 / d), (n - 1, 1.0 / d)]
                } else {
                    let d = nodes[j + 1] - nodes[j - 1];
                    vec![(j - 1, -1.0 / d), (j + 1, 1.0 / d)]
                }
            };
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(n - 1);
            let mut out: Vec<(usize, [f64; 3])> = (lo..=hi).map(|k| (k, [0.0; 3])).collect();
            for (d, b) in basis.iter().enumerate() {
                out[i - lo].1[d] += b.h00;
                out[i + 1 - lo].1[d] += b.h01;
                for (k, c) in slope(i) {
                    out[k - lo].1[d] += b.h10 * c;
                }
                for (k, c) in slope(i + 1) {
                    out[k - lo].1[d] += b.h11 * c;
                }
            }
            out
        }
    }
}

/// Fritsch–Carlson monotone slope at node `j` from the data `y`.
fn monotone_slope(x: &[f64], y: &[f64], j: usize) -> f64 {
    let n = x.len();
    let delta = |k: usize| (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
    if n == 2 {
        return delta(0);
    }
    let end_slope = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if d.signum() != d0.signum() || d0 == 0.0 {
            0.0
        } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            d
        }
    };
    if j == 0 {
        return end_slope(x[1] - x[0], x[2] - x[1], delta(0), delta(1));
    }
    if j == n - 1 {
        return end_slope(
            x[n - 1] - x[n - 2],
            x[n - 2] - x[n - 3],
            delta(n - 2),
            delta(n - 3),
        );
    }
    let (d0, d1) = (delta(j - 1), delta(j));
    if d0 == 0.0 || d1 == 0.0 || d0.signum() != d1.signum() {
        return 0.0;
    }
    let (h0, h1) = (x[j] - x[j - 1], x[j + 1] - x[j]);
    let w1 = 2.0 * h1 + h0;
    let w2 = h1 + 2.0 * h0;
    (w1 + w2) / (w1 / d0 + w2 / d1)
}

/// Interpolates `y(x)` at `q` with value and derivatives. For the cubic order
/// `y` is read only on the four-node stencil around the cell, so callers may
/// pass a full line of data.
pub fn interpolate_line(x: &[f64], y: &[f64], q: f64, order: InterpOrder) -> Jet {
    let n = x.len();
    if n == 1 {
        return Jet {
            v: y[0],
            d1: 0.0,
            d2: 0.0,
        };
    }
    let i = cell(x, q);
    let h = x[i + 1] - x[i];
    let t = (q - x[i]) / h;
    match order {
        InterpOrder::Linear => {
            let s = (y[i + 1] - y[i]) / h;
            Jet {
                v: if t == 0.0 {
                    y[i]
                } else if t == 1.0 {
                    y[i + 1]
                } else {
                    y[i] + t * (y[i + 1] - y[i])
                },
                d1: s,
                d2: 0.0,
            }
        }
        InterpOrder::Cubic => {
            let (m0, m1) = (monotone_slope(x, y, i), monotone_slope(x, y, i + 1));
            let [b0, b1, b2] = hermite_basis(t, h);
            let eval = |b: &Hermite| b.h00 * y[i] + b.h10 * m0 + b.h01 * y[i + 1] + b.h11 * m1;
            Jet {
                v: eval(&b0),
                d1: eval(&b1),
                d2: eval(&b2),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        vec![0.0, 0.5, 1.2, 2.0, 2.1, 3.5]
    }

    #[test]
    fn nodes_are_reproduced_exactly() {
        let x = grid();
        let y = [0.3, -1.0, 2.5, 0.0, 7.0, 1.0];
        for order in [InterpOrder::Linear, InterpOrder::Cubic] {
            for (k, &q) in x.iter().enumerate() {
                assert_eq!(interpolate_line(&x, &y, q, order).v, y[k]);
                let w = weights(&x, q, order);
                let v: f64 = w.iter().map(|(j, c)| c[0] * y[*j]).sum();
                assert_eq!(v, y[k]);
            }
        }
    }

    #[test]
    fn linear_data_gives_constant_slope() {
        let x = grid();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        for q in [0.1, 0.77, 1.5, 2.05, 3.4] {
            for order in [InterpOrder::Linear, InterpOrder::Cubic] {
                let j = interpolate_line(&x, &y, q, order);
                assert!((j.d1 - 3.0).abs() < 1e-9);
                assert!((j.v - (3.0 * q - 1.0)).abs() < 1e-9);
                let w = weights(&x, q, order);
                let d: f64 = w.iter().map(|(k, c)| c[1] * y[*k]).sum();
                assert!((d - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn monotone_data_stays_monotone_across_a_jump() {
        let x: Vec<f64> = (0..21).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| if v < 1.0 { 0.0 } else { 0.4 + 0.3 * (v - 1.0) })
            .collect();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let q = k as f64 * 0.005;
            let j = interpolate_line(&x, &y, q, InterpOrder::Cubic);
            assert!(j.v >= prev - 1e-12);
            assert!(j.d1 >= -1e-12);
            prev = j.v;
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let x = grid();
        let y = [0.1, 0.4, 0.45, 0.9, 0.95, 1.0];
        let h = 1e-6;
        for q in [0.2, 0.9, 1.7, 2.06, 3.0] {
            let j = interpolate_line(&x, &y, q, InterpOrder::Cubic);
            let p = interpolate_line(&x, &y, q + h, InterpOrder::Cubic);
            let m = interpolate_line(&x, &y, q - h, InterpOrder::Cubic);
            assert!(((p.v - m.v) / (2.0 * h) - j.d1).abs() < 1e-6 * (1.0 + j.d1.abs()));
            assert!(((p.d1 - m.d1) / (2.0 * h) - j.d2).abs() < 1e-6 * (1.0 + j.d2.abs()));
        }
    }
}
