//! Symmetric triangle rules and Gauss–Legendre rules on `[0, 1]`.

/// Quadrature rule on a triangle in barycentric coordinates; weights sum to one
/// and must be scaled by the element area.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

fn orbit3(a: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>) {
    let b = 1.0 - 2.0 * a;
    for p in [[b, a, a], [a, b, a], [a, a, b]] {
        pts.push(p);
        ws.push(w);
    }
}

fn orbit6(a: f64, b: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>) {
    let c = 1.0 - a - b;
    for p in [
        [a, b, c],
        [a, c, b],
        [b, a, c],
        [b, c, a],
        [c, a, b],
        [c, b, a],
    ] {
        pts.push(p);
        ws.push(w);
    }
}

impl TriangleRule {
    pub fn centroid() -> Self {
        TriangleRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Six-point rule exact for polynomials of degree four.
    pub fn degree4() -> Self {
        let (mut p, mut w) = (Vec::new(), Vec::new());
        orbit3(
            0.445_948_490_915_964_886,
            0.223_381_589_678_011_466,
            &mut p,
            &mut w,
        );
        orbit3(
            0.091_576_213_509_770_743,
            0.109_951_743_655_321_868,
            &mut p,
            &mut w,
        );
        TriangleRule {
            points: p,
            weights: w,
            degree: 4,
        }
    }

    /// Twelve-point rule exact for polynomials of degree six.
    pub fn degree6() -> Self {
        let (mut p, mut w) = (Vec::new(), Vec::new());
        orbit3(
            0.249_286_745_170_910_421,
            0.116_786_275_726_379_366,
            &mut p,
            &mut w,
        );
        orbit3(
            0.063_089_014_491_502_228,
            0.050_844_906_370_206_817,
            &mut p,
            &mut w,
        );
        orbit6(
            0.053_145_049_844_816_947,
            0.310_352_451_033_784_405,
            0.082_851_075_618_373_575,
            &mut p,
            &mut w,
        );
        TriangleRule {
            points: p,
            weights: w,
            degree: 6,
        }
    }

    /// Smallest built-in rule exact to `degree`; higher requests get a conical
    /// product rule.
    pub fn exact_to(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2..=4 => Self::degree4(),
            5 | 6 => Self::degree6(),
            d => Self::conical(d),
        }
    }

    /// Collapsed Gauss rule exact to `degree` (not symmetric).
    pub fn conical(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let g = GaussRule::new(n + 1);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (s, ws) in g.points.iter().zip(&g.weights) {
            for (t, wt) in g.points.iter().zip(&g.weights) {
                // (x, y) = (s, t (1 - s)), Jacobian (1 - s), reference area 1/2
                let x = *s;
                let y = t * (1.0 - s);
                points.push([1.0 - x - y, x, y]);
                weights.push(2.0 * ws * wt * (1.0 - s));
            }
        }
        TriangleRule {
            points,
            weights,
            degree,
        }
    }
}

/// Gauss–Legendre rule on `[0, 1]` with weights summing to one.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Newton iteration on P_n from the Chebyshev-like initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        GaussRule { points, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Integral of x^a y^b over the reference triangle divided by its area.
    fn monomial_mean(a: u32, b: u32) -> f64 {
        2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    fn check(rule: &TriangleRule) {
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                    .sum();
                let exact = monomial_mean(a, b);
                assert!(
                    (q - exact).abs() < 1e-14,
                    "degree ({a},{b}): {q} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn triangle_rules_are_exact() {
        check(&TriangleRule::centroid());
        check(&TriangleRule::degree4());
        check(&TriangleRule::degree6());
        check(&TriangleRule::conical(9));
    }

    #[test]
    fn gauss_rules_are_exact() {
        for n in 1..8 {
            let g = GaussRule::new(n);
            for k in 0..(2 * n) as i32 {
                let q: f64 = g
                    .points
                    .iter()
                    .zip(&g.weights)
                    .map(|(x, w)| w * x.powi(k))
                    .sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }
}
