//! Coefficients, data and exact solutions of a second-order elliptic problem
//!
//! `-div(A grad u - f) + b . grad u + c u = f` with mixed boundary conditions,
//! or the quasi-linear variant with `A = mu(|grad u|^2) I`.

use std::sync::Arc;

use crate::error::{AfemError, Result};

pub type Point = [f64; 2];
pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
pub type TensorFn = Arc<dyn Fn(Point) -> [[f64; 2]; 2] + Send + Sync>;
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar coefficient. `ElementConstant` fields are sampled at the element
/// centroid, so jumps must lie on edges of the initial mesh.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    ElementConstant(ScalarFn),
    Smooth { value: ScalarFn },
}

impl ScalarField {
    pub fn eval(&self, x: Point, centroid: Point) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::ElementConstant(f) => f(centroid),
            ScalarField::Smooth { value } => value(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Constant(c) if *c == 0.0)
    }
}

/// A vector field with its divergence. A field without divergence is treated
/// as elementwise divergence-free.
#[derive(Clone)]
pub enum VectorField {
    Constant([f64; 2]),
    ElementConstant(VectorFn),
    Smooth {
        value: VectorFn,
        div: Option<ScalarFn>,
    },
}

impl VectorField {
    pub fn eval(&self, x: Point, centroid: Point) -> [f64; 2] {
        match self {
            VectorField::Constant(c) => *c,
            VectorField::ElementConstant(f) => f(centroid),
            VectorField::Smooth { value, .. } => value(x),
        }
    }

    pub fn div(&self, x: Point) -> f64 {
        match self {
            VectorField::Smooth { div: Some(d), .. } => d(x),
            _ => 0.0,
        }
    }
}

/// Symmetric diffusion tensor.
#[derive(Clone)]
pub enum Diffusion {
    Scalar(f64),
    /// Scalar coefficient, constant on every element.
    PiecewiseScalar(ScalarFn),
    Tensor([[f64; 2]; 2]),
    /// Smooth tensor; `div` returns the row-wise divergence.
    Smooth {
        value: TensorFn,
        div: VectorFn,
    },
}

impl Diffusion {
    pub fn eval(&self, x: Point, centroid: Point) -> [[f64; 2]; 2] {
        match self {
            Diffusion::Scalar(a) => [[*a, 0.0], [0.0, *a]],
            Diffusion::PiecewiseScalar(f) => {
                let a = f(centroid);
                [[a, 0.0], [0.0, a]]
            }
            Diffusion::Tensor(t) => *t,
            Diffusion::Smooth { value, .. } => value(x),
        }
    }

    pub fn div(&self, x: Point) -> [f64; 2] {
        match self {
            Diffusion::Smooth { div, .. } => div(x),
            _ => [0.0, 0.0],
        }
    }
}

/// Scalar nonlinearity `mu(t)` of a quasi-linear problem, with `t = |grad u|^2`.
#[derive(Clone)]
pub struct Nonlinearity {
    pub mu: RealFn,
    /// Derivative of `mu`, needed for the volume residual of higher-order elements.
    pub dmu: RealFn,
    /// Closed-form `int_0^s mu(t) dt`; adaptive quadrature is used when absent.
    pub antiderivative: Option<RealFn>,
    /// Lower growth constant.
    pub alpha: f64,
    /// Upper growth constant.
    pub lipschitz: f64,
}

impl Nonlinearity {
    /// `int_a^b mu(t) dt`, evaluated without forming two large antiderivatives.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if let Some(m) = &self.antiderivative {
            // closed forms are fine when the difference is not tiny
            let d = m(b) - m(a);
            if (b - a).abs() > 1e-6 * (1.0 + a.abs().max(b.abs())) {
                return d;
            }
        }
        adaptive_gauss(&*self.mu, a, b, 1e-13, 40)
    }
}

fn adaptive_gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    // five-point Gauss on each panel, bisected until two levels agree
    fn gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        const X: [f64; 5] = [
            0.0,
            0.538_469_310_105_683_1,
            -0.538_469_310_105_683_1,
            0.906_179_845_938_664,
            -0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * X.iter().zip(W).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (gauss(f, a, m), gauss(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= tol * (1.0 + (l + r).abs()) {
            l + r
        } else {
            rec(f, a, m, l, tol, depth - 1) + rec(f, m, b, r, tol, depth - 1)
        }
    }
    rec(f, a, b, gauss(f, a, b), tol, depth)
}

#[derive(Clone)]
pub struct DirichletData {
    pub value: ScalarFn,
    /// Gradient of an extension of the data; enables the boundary oscillation term.
    pub gradient: Option<VectorFn>,
}

#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarFn,
    pub gradient: VectorFn,
}

/// Goal functional `G(v) = int g v + gvec . grad v`.
#[derive(Clone)]
pub struct GoalData {
    pub g: Option<ScalarField>,
    pub g_vec: Option<VectorField>,
    /// Reference value `G(u*)`.
    pub reference: Option<f64>,
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub diffusion: Option<Diffusion>,
    pub nonlinearity: Option<Nonlinearity>,
    pub convection: Option<VectorField>,
    pub reaction: Option<ScalarField>,
    pub f: Option<ScalarField>,
    pub f_vec: Option<VectorField>,
    /// `None` means homogeneous Dirichlet data.
    pub dirichlet: Option<DirichletData>,
    pub exact: Option<ExactSolution>,
    pub goal: Option<GoalData>,
}

impl ProblemSpec {
    /// `-div(A grad u) = 0` with homogeneous data; extend with the builder methods.
    pub fn new(name: impl Into<String>, diffusion: Diffusion) -> Self {
        ProblemSpec {
            name: name.into(),
            diffusion: Some(diffusion),
            nonlinearity: None,
            convection: None,
            reaction: None,
            f: None,
            f_vec: None,
            dirichlet: None,
            exact: None,
            goal: None,
        }
    }

    pub fn poisson(name: impl Into<String>, f: f64) -> Self {
        ProblemSpec::new(name, Diffusion::Scalar(1.0)).with_source(ScalarField::Constant(f))
    }

    pub fn quasi_linear(name: impl Into<String>, mu: Nonlinearity) -> Self {
        let mut p = ProblemSpec::new(name, Diffusion::Scalar(1.0));
        p.diffusion = None;
        p.nonlinearity = Some(mu);
        p
    }

    pub fn with_source(mut self, f: ScalarField) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_vector_source(mut self, f: VectorField) -> Self {
        self.f_vec = Some(f);
        self
    }

    pub fn with_convection(mut self, b: VectorField) -> Self {
        self.convection = Some(b);
        self
    }

    pub fn with_reaction(mut self, c: ScalarField) -> Self {
        self.reaction = Some(c);
        self
    }

    pub fn with_dirichlet(mut self, d: DirichletData) -> Self {
        self.dirichlet = Some(d);
        self
    }

    pub fn with_exact(mut self, e: ExactSolution) -> Self {
        self.exact = Some(e);
        self
    }

    pub fn with_goal(mut self, g: GoalData) -> Self {
        self.goal = Some(g);
        self
    }

    /// True when the bilinear form is symmetric (no convection, linear).
    pub fn is_symmetric(&self) -> bool {
        self.convection.is_none() && self.nonlinearity.is_none()
    }

    pub fn is_nonlinear(&self) -> bool {
        self.nonlinearity.is_some()
    }

    /// Principal part used for the energy norm: `A`, or the identity for quasi-linear problems.
    pub fn energy_diffusion(&self) -> Diffusion {
        self.diffusion.clone().unwrap_or(Diffusion::Scalar(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.diffusion, &self.nonlinearity) {
            (Some(_), Some(_)) => {
                return Err(AfemError::Problem(
                    "set either a diffusion tensor or a nonlinearity, not both".into(),
                ))
            }
            (None, None) => return Err(AfemError::Problem("missing principal part".into())),
            _ => {}
        }
        if let Some(mu) = &self.nonlinearity {
            if !(mu.alpha > 0.0 && mu.alpha <= mu.lipschitz / 3.0) {
                return Err(AfemError::Problem(format!(
                    "growth constants must satisfy 0 < alpha <= L/3, got alpha={} L={}",
                    mu.alpha, mu.lipschitz
                )));
            }
            if self.convection.is_some() || self.reaction.is_some() {
                return Err(AfemError::Problem(
                    "quasi-linear problems take no lower-order terms".into(),
                ));
            }
        }
        if let Some(Diffusion::Tensor(t)) = &self.diffusion {
            let (a, b, c) = (t[0][0], 0.5 * (t[0][1] + t[1][0]), t[1][1]);
            if (t[0][1] - t[1][0]).abs() > 1e-14 * a.abs().max(c.abs())
                || a <= 0.0
                || a * c - b * b <= 0.0
            {
                return Err(AfemError::Problem(
                    "diffusion tensor must be symmetric positive definite".into(),
                ));
            }
        }
        if let Some(Diffusion::Scalar(a)) = &self.diffusion {
            if *a <= 0.0 {
                return Err(AfemError::Problem(
                    "diffusion coefficient must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_matches_closed_form() {
        let mu = Nonlinearity {
            mu: Arc::new(|t| 2.0 + 1.0 / (1.0 + t).powi(2)),
            dmu: Arc::new(|t| -2.0 / (1.0 + t).powi(3)),
            antiderivative: None,
            alpha: 1.75,
            lipschitz: 9.0,
        };
        let exact = |s: f64| 2.0 * s - 1.0 / (1.0 + s) + 1.0;
        for (a, b) in [(0.0, 1.0), (0.3, 7.5), (2.0, 2.0 + 1e-9)] {
            assert!((mu.integral(a, b) - (exact(b) - exact(a))).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_growth() {
        let mu = Nonlinearity {
            mu: Arc::new(|_| 1.0),
            dmu: Arc::new(|_| 0.0),
            antiderivative: None,
            alpha: 2.0,
            lipschitz: 3.0,
        };
        assert!(ProblemSpec::quasi_linear("x", mu).validate().is_err());
        assert!(ProblemSpec::poisson("p", 1.0).validate().is_ok());
    }
}
