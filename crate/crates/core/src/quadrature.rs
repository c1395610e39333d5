//! Reference quadrature rules: symmetric rules on the triangle (in barycentric
//! coordinates, weights summing to 1) and Gauss-Legendre on `[0, 1]`.

use crate::mesh::Point;

/// Barycentric point with weight; weights of a rule sum to one.
type BaryPoint = ([f64; 3], f64);

fn orbit3(a: f64, w: f64) -> [BaryPoint; 3] {
    let b = 1.0 - 2.0 * a;
    [([a, a, b], w), ([a, b, a], w), ([b, a, a], w)]
}

fn orbit6(a: f64, b: f64, w: f64) -> [BaryPoint; 6] {
    let c = 1.0 - a - b;
    [
        ([a, b, c], w),
        ([a, c, b], w),
        ([b, a, c], w),
        ([b, c, a], w),
        ([c, a, b], w),
        ([c, b, a], w),
    ]
}

/// Smallest available triangle rule exact for polynomials of `degree`.
/// Supported up to degree 6; higher requests return `None`.
pub fn triangle_rule(degree: usize) -> Option<Vec<BaryPoint>> {
    let third = 1.0 / 3.0;
    Some(match degree {
        0 | 1 => vec![([third, third, third], 1.0)],
        2 => {
            let t = 1.0 / 6.0;
            orbit3(t, third).to_vec()
        }
        3 | 4 => {
            // Dunavant, 6 points.
            let mut r = orbit3(0.445948490915965, 0.223381589678011).to_vec();
            r.extend(orbit3(0.091576213509771, 0.109951743655322));
            r
        }
        5 | 6 => {
            // Dunavant, 12 points.
            let mut r = orbit3(0.249286745170910, 0.116786275726379).to_vec();
            r.extend(orbit3(0.063089014491502, 0.050844906370207));
            r.extend(orbit6(
                0.053145049844817,
                0.310352451033784,
                0.082851075618374,
            ));
            r
        }
        _ => return None,
    })
}

/// Maps a reference triangle rule onto the physical triangle `tri`,
/// appending points and weights (scaled by the triangle area).
pub fn map_triangle_rule(
    rule: &[BaryPoint],
    tri: &[Point; 3],
    points: &mut Vec<Point>,
    weights: &mut Vec<f64>,
) {
    let area = crate::mesh::signed_area(tri[0], tri[1], tri[2]).abs();
    for (l, w) in rule {
        points.push([
            l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
            l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
        ]);
        weights.push(w * area);
    }
}

/// Gauss-Legendre rule with `n` points on `[0, 1]` (weights sum to 1).
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Number of Gauss points exact for polynomials of `degree` on a segment.
pub fn gauss_points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    // Exact integral of x^a y^b over the reference triangle (0,0),(1,0),(0,1).
    fn monomial_oracle(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn triangle_rules_exact_up_to_degree() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for degree in [1usize, 2, 4, 6] {
            let rule = triangle_rule(degree).unwrap();
            assert!((rule.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-14);
            let (mut p, mut w) = (vec![], vec![]);
            map_triangle_rule(&rule, &tri, &mut p, &mut w);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let q: f64 = p
                        .iter()
                        .zip(&w)
                        .map(|(x, w)| w * x[0].powi(a as i32) * x[1].powi(b as i32))
                        .sum();
                    let exact = monomial_oracle(a, b);
                    assert!(
                        (q - exact).abs() < 1e-14,
                        "deg {degree} x^{a} y^{b}: {q} vs {exact}"
                    );
                }
            }
        }
        assert!(triangle_rule(7).is_none());
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=6 {
            let rule = gauss_legendre_unit(n);
            for k in 0..(2 * n) as i32 {
                let q: f64 = rule.iter().map(|(x, w)| w * x.powi(k)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
        assert_eq!(gauss_points_for_degree(4), 3);
        assert_eq!(gauss_points_for_degree(6), 4);
    }
}
