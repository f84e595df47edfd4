//! Leray–Lions coefficients `a(x, λ, ξ)` and the Lipschitz drift `f`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient regularization used by the singular (`p < 2`) p-Laplacian.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Vector field `a(x, λ, ξ)` with values in `ℝ²`; one-dimensional problems
/// use only the first component and pass `ξ = [ξ₁, 0]`.
pub trait Flux: Send + Sync + fmt::Debug {
    fn eval(&self, x: [f64; 2], lambda: f64, xi: [f64; 2]) -> [f64; 2];

    /// Returns `(∂a/∂ξ, ∂a/∂λ)`. The default uses central differences.
    fn jacobian(&self, x: [f64; 2], lambda: f64, xi: [f64; 2]) -> ([[f64; 2]; 2], [f64; 2]) {
        let mut d_xi = [[0.0; 2]; 2];
        for k in 0..2 {
            let step = 1e-6 * (1.0 + xi[k].abs());
            let mut plus = xi;
            let mut minus = xi;
            plus[k] += step;
            minus[k] -= step;
            let (ap, am) = (self.eval(x, lambda, plus), self.eval(x, lambda, minus));
            for r in 0..2 {
                d_xi[r][k] = (ap[r] - am[r]) / (2.0 * step);
            }
        }
        let step = 1e-6 * (1.0 + lambda.abs());
        let (ap, am) = (self.eval(x, lambda + step, xi), self.eval(x, lambda - step, xi));
        let d_l = [(ap[0] - am[0]) / (2.0 * step), (ap[1] - am[1]) / (2.0 * step)];
        (d_xi, d_l)
    }
}

fn norm2(xi: [f64; 2]) -> f64 {
    xi[0] * xi[0] + xi[1] * xi[1]
}

/// `(|ξ|^{p−2}ξ, ∂/∂ξ)`, regularized as `(|ξ|² + ε²)^{(p−2)/2} ξ` when `p < 2`.
fn p_laplace(p: f64, xi: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let s = if p < 2.0 {
        norm2(xi) + SINGULAR_EPS * SINGULAR_EPS
    } else {
        norm2(xi)
    };
    if s == 0.0 {
        // only reachable for p >= 2
        let d = if p == 2.0 { 1.0 } else { 0.0 };
        return ([0.0, 0.0], [[d, 0.0], [0.0, d]]);
    }
    let w = s.powf(0.5 * (p - 2.0));
    let a = [w * xi[0], w * xi[1]];
    let c = (p - 2.0) * w / s;
    let d = [
        [w + c * xi[0] * xi[0], c * xi[0] * xi[1]],
        [c * xi[1] * xi[0], w + c * xi[1] * xi[1]],
    ];
    (a, d)
}

/// `a(ξ) = |ξ|^{p−2} ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PLaplace {
    pub p: f64,
}

impl Flux for PLaplace {
    fn eval(&self, _x: [f64; 2], _lambda: f64, xi: [f64; 2]) -> [f64; 2] {
        p_laplace(self.p, xi).0
    }

    fn jacobian(&self, _x: [f64; 2], _lambda: f64, xi: [f64; 2]) -> ([[f64; 2]; 2], [f64; 2]) {
        (p_laplace(self.p, xi).1, [0.0, 0.0])
    }
}

/// `a(λ, ξ) = |ξ|^{p−2} ξ − b sin(λ)`: p-Laplacian plus a bounded convection term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvectivePLaplace {
    pub p: f64,
    pub b: [f64; 2],
}

impl Flux for ConvectivePLaplace {
    fn eval(&self, _x: [f64; 2], lambda: f64, xi: [f64; 2]) -> [f64; 2] {
        let (a, _) = p_laplace(self.p, xi);
        let s = lambda.sin();
        [a[0] - self.b[0] * s, a[1] - self.b[1] * s]
    }

    fn jacobian(&self, _x: [f64; 2], lambda: f64, xi: [f64; 2]) -> ([[f64; 2]; 2], [f64; 2]) {
        let c = lambda.cos();
        (p_laplace(self.p, xi).1, [-self.b[0] * c, -self.b[1] * c])
    }
}

/// Flux given by a closure; its Jacobian falls back to finite differences.
#[derive(Clone)]
pub struct CustomFlux {
    label: String,
    f: Arc<dyn Fn([f64; 2], f64, [f64; 2]) -> [f64; 2] + Send + Sync>,
}

impl CustomFlux {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn([f64; 2], f64, [f64; 2]) -> [f64; 2] + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for CustomFlux {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFlux({})", self.label)
    }
}

impl Flux for CustomFlux {
    fn eval(&self, x: [f64; 2], lambda: f64, xi: [f64; 2]) -> [f64; 2] {
        (self.f)(x, lambda, xi)
    }
}

/// Spatially varying data such as `κ`, `g` and `h` in the structure conditions.
pub type SpatialFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

fn constant(c: f64) -> SpatialFn {
    Arc::new(move |_| c)
}

/// A Leray–Lions coefficient with the constants of its structure conditions:
///
/// * monotonicity: `(a(x,λ,ξ) − a(x,λ,η))·(ξ − η) ≥ 0`
/// * coercivity: `a·ξ ≥ κ(x) + C₁|ξ|^p − C₂|λ|^ν`
/// * growth: `|a| ≤ C₃|ξ|^{p−1} + C₄|λ|^{p−1} + g(x)`
/// * λ-continuity: `|a(x,λ₁,ξ) − a(x,λ₂,ξ)| ≤ (C₅|ξ|^{p−1} + h(x))|λ₁ − λ₂|`
#[derive(Clone)]
pub struct LerayLionsCoeff {
    pub p: f64,
    pub nu: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub kappa: SpatialFn,
    pub g: SpatialFn,
    pub h: SpatialFn,
    pub flux: Arc<dyn Flux>,
}

impl fmt::Debug for LerayLionsCoeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LerayLionsCoeff")
            .field("p", &self.p)
            .field("nu", &self.nu)
            .field("c", &[self.c1, self.c2, self.c3, self.c4, self.c5])
            .field("flux", &self.flux)
            .finish()
    }
}

fn check_p(p: f64) -> Result<()> {
    // p > max{1, 2d/(d+2)} reduces to p > 1 for d <= 2
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("coefficient.p", format!("must exceed 1, got {p}")));
    }
    Ok(())
}

impl LerayLionsCoeff {
    /// The p-Laplacian `a = |ξ|^{p−2}ξ` (`C₁ = C₃ = 1`, all other data zero).
    pub fn p_laplace(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Self {
            p,
            nu: 1.0,
            c1: 1.0,
            c2: 0.0,
            c3: 1.0,
            c4: 0.0,
            c5: 0.0,
            kappa: constant(0.0),
            g: constant(0.0),
            h: constant(0.0),
            flux: Arc::new(PLaplace { p }),
        })
    }

    /// `a = |ξ|^{p−2}ξ − b sin λ`. Young's inequality gives `C₁ = 1/2` with
    /// `κ = −|b|(1 − 1/p) r*`, `r* = (2|b|/p)^{1/(p−1)}`; `g = h = |b|`.
    pub fn convective(p: f64, b: [f64; 2]) -> Result<Self> {
        check_p(p)?;
        let bn = norm2(b).sqrt();
        let r_star = (2.0 * bn / p).powf(1.0 / (p - 1.0));
        let kappa = -bn * (1.0 - 1.0 / p) * r_star;
        Ok(Self {
            p,
            nu: 1.0,
            c1: 0.5,
            c2: 0.0,
            c3: 1.0,
            c4: 0.0,
            c5: 0.0,
            kappa: constant(kappa),
            g: constant(bn),
            h: constant(bn),
            flux: Arc::new(ConvectivePLaplace { p, b }),
        })
    }

    /// Arbitrary flux with user-supplied constants (all data taken constant).
    #[allow(clippy::too_many_arguments)]
    pub fn custom(p: f64, nu: f64, c: [f64; 5], kappa: f64, g: f64, h: f64, flux: Arc<dyn Flux>) -> Result<Self> {
        check_p(p)?;
        let coeff = Self {
            p,
            nu,
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
            c5: c[4],
            kappa: constant(kappa),
            g: constant(g),
            h: constant(h),
            flux,
        };
        coeff.validate()?;
        Ok(coeff)
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if !(self.nu >= 1.0 && self.nu < self.p) {
            return Err(Error::invalid(
                "coefficient.nu",
                format!("must lie in [1, p) = [1, {}), got {}", self.p, self.nu),
            ));
        }
        if !(self.c1 > 0.0) {
            return Err(Error::invalid("coefficient.c1", "must be positive"));
        }
        for (name, c) in [("c2", self.c2), ("c3", self.c3), ("c4", self.c4), ("c5", self.c5)] {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("coefficient.{name}"), "must be non-negative"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2], lambda: f64, xi: [f64; 2]) -> [f64; 2] {
        self.flux.eval(x, lambda, xi)
    }

    /// Samples `samples` random points `(x, λ, λ', ξ, η)` in `D × [−4,4]² ×
    /// [−4,4]^{2d}` and records the worst margin of every structure condition.
    /// Margins are non-negative when a condition holds.
    pub fn check_structure_conditions<R: Rng>(&self, dim: usize, samples: usize, rng: &mut R) -> StructureReport {
        const RANGE: f64 = 4.0;
        let p = self.p;
        let mut worst = [f64::INFINITY; 4];
        let mut ok = [true; 4];
        let tol = |scale: f64| 1e-9 * (1.0 + scale);
        let vec = |rng: &mut R| {
            let mut v = [rng.gen_range(-RANGE..RANGE), 0.0];
            if dim == 2 {
                v[1] = rng.gen_range(-RANGE..RANGE);
            }
            v
        };
        for _ in 0..samples.max(1) {
            let x = [
                rng.gen_range(0.0..1.0),
                if dim == 2 { rng.gen_range(0.0..1.0) } else { 0.0 },
            ];
            let l1: f64 = rng.gen_range(-RANGE..RANGE);
            let l2: f64 = rng.gen_range(-RANGE..RANGE);
            let xi = vec(rng);
            let eta = vec(rng);
            let a_xi = self.eval(x, l1, xi);
            let a_eta = self.eval(x, l1, eta);
            let abs_xi = norm2(xi).sqrt();

            let mono = (a_xi[0] - a_eta[0]) * (xi[0] - eta[0]) + (a_xi[1] - a_eta[1]) * (xi[1] - eta[1]);
            let mono_scale = (norm2(a_xi).sqrt() + norm2(a_eta).sqrt()) * (abs_xi + norm2(eta).sqrt());
            record(&mut worst[0], &mut ok[0], mono, tol(mono_scale));

            let axi = a_xi[0] * xi[0] + a_xi[1] * xi[1];
            let coercive = axi - (self.kappa)(x) - self.c1 * abs_xi.powf(p) + self.c2 * l1.abs().powf(self.nu);
            record(&mut worst[1], &mut ok[1], coercive, tol(axi.abs() + abs_xi.powf(p)));

            let growth_rhs = self.c3 * abs_xi.powf(p - 1.0) + self.c4 * l1.abs().powf(p - 1.0) + (self.g)(x);
            let growth = growth_rhs - norm2(a_xi).sqrt();
            record(&mut worst[2], &mut ok[2], growth, tol(growth_rhs));

            let a_l2 = self.eval(x, l2, xi);
            let diff = norm2([a_xi[0] - a_l2[0], a_xi[1] - a_l2[1]]).sqrt();
            let cont_rhs = (self.c5 * abs_xi.powf(p - 1.0) + (self.h)(x)) * (l1 - l2).abs();
            record(&mut worst[3], &mut ok[3], cont_rhs - diff, tol(cont_rhs + diff));
        }
        StructureReport {
            samples: samples.max(1),
            monotonicity_margin: worst[0],
            coercivity_margin: worst[1],
            growth_margin: worst[2],
            continuity_margin: worst[3],
            monotonicity_pass: ok[0],
            coercivity_pass: ok[1],
            growth_pass: ok[2],
            continuity_pass: ok[3],
            pass: ok.iter().all(|&b| b),
        }
    }
}

fn record(worst: &mut f64, ok: &mut bool, margin: f64, tol: f64) {
    *worst = worst.min(margin);
    if margin < -tol {
        *ok = false;
    }
}

/// Worst sampled margins of the structure conditions.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StructureReport {
    pub samples: usize,
    pub monotonicity_margin: f64,
    pub coercivity_margin: f64,
    pub growth_margin: f64,
    pub continuity_margin: f64,
    pub monotonicity_pass: bool,
    pub coercivity_pass: bool,
    pub growth_pass: bool,
    pub continuity_pass: bool,
    pub pass: bool,
}

/// Bounded Lipschitz drift `f` with `f(0) = 0`.
#[derive(Clone)]
pub struct DriftSpec {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    l_f: f64,
    sup: f64,
    label: String,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("label", &self.label)
            .field("l_f", &self.l_f)
            .field("sup", &self.sup)
            .finish()
    }
}

impl DriftSpec {
    pub fn new<F, D>(label: impl Into<String>, l_f: f64, sup: f64, f: F, df: D) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(l_f >= 0.0 && l_f.is_finite()) {
            return Err(Error::invalid("drift.l_f", "must be finite and non-negative"));
        }
        if !(sup >= 0.0 && sup.is_finite()) {
            return Err(Error::invalid("drift.sup", "must be finite and non-negative"));
        }
        Ok(Self {
            f: Arc::new(f),
            df: Arc::new(df),
            l_f,
            sup,
            label: label.into(),
        })
    }

    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| 0.0),
            df: Arc::new(|_| 0.0),
            l_f: 0.0,
            sup: 0.0,
            label: "zero".into(),
        }
    }

    /// `f(λ) = c sin λ`; a negative `c` pushes the state away from zero.
    pub fn sine(c: f64) -> Result<Self> {
        Self::new(
            format!("sine({c})"),
            c.abs(),
            c.abs(),
            move |l: f64| c * l.sin(),
            move |l: f64| c * l.cos(),
        )
    }

    #[inline]
    pub fn eval(&self, lambda: f64) -> f64 {
        (self.f)(lambda)
    }

    #[inline]
    pub fn derivative(&self, lambda: f64) -> f64 {
        (self.df)(lambda)
    }

    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_zero(&self) -> bool {
        self.label == "zero"
    }

    /// Checks `f(0) = 0`, the Lipschitz bound and the sup bound on all sampled pairs.
    pub fn check(&self, lambdas: &[f64]) -> bool {
        if self.eval(0.0).abs() > 1e-12 {
            return false;
        }
        lambdas.iter().enumerate().all(|(i, &a)| {
            let fa = self.eval(a);
            fa.abs() <= self.sup * (1.0 + 1e-12) + 1e-12
                && lambdas[i + 1..]
                    .iter()
                    .all(|&b| (fa - self.eval(b)).abs() <= self.l_f * (a - b).abs() * (1.0 + 1e-12) + 1e-12)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prototypes_satisfy_structure_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &p in &[1.5, 2.0, 2.5, 4.0] {
            for dim in [1, 2] {
                let rep = LerayLionsCoeff::p_laplace(p)
                    .unwrap()
                    .check_structure_conditions(dim, 20_000, &mut rng);
                assert!(rep.pass, "p={p} d={dim}: {rep:?}");
            }
        }
        let conv = LerayLionsCoeff::convective(2.5, [0.7, -0.3]).unwrap();
        for dim in [1, 2] {
            let rep = conv.check_structure_conditions(dim, 20_000, &mut rng);
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn p4_monotonicity_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep = LerayLionsCoeff::p_laplace(4.0)
            .unwrap()
            .check_structure_conditions(1, 100_000, &mut rng);
        assert!(rep.monotonicity_pass);
        assert!(rep.monotonicity_margin >= 0.0);
    }

    #[test]
    fn broken_flux_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let broken = LerayLionsCoeff::custom(
            2.0,
            1.0,
            [1.0, 0.0, 1.0, 0.0, 0.0],
            0.0,
            0.0,
            0.0,
            Arc::new(CustomFlux::new("negative", |_, _, xi| [-xi[0], -xi[1]])),
        )
        .unwrap();
        let rep = broken.check_structure_conditions(1, 1000, &mut rng);
        assert!(!rep.monotonicity_pass);
        assert!(!rep.pass);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let flux = ConvectivePLaplace { p: 2.7, b: [0.4, 0.9] };
        let numeric = CustomFlux::new("copy", move |x, l, xi| flux.eval(x, l, xi));
        for &(l, xi) in &[(0.3, [0.5, -1.2]), (-2.0, [1.5, 0.1]), (1.0, [-0.2, 0.0])] {
            let (da, dl) = flux.jacobian([0.5, 0.5], l, xi);
            let (na, nl) = numeric.jacobian([0.5, 0.5], l, xi);
            for r in 0..2 {
                assert!((dl[r] - nl[r]).abs() < 1e-6);
                for c in 0..2 {
                    assert!((da[r][c] - na[r][c]).abs() < 1e-5, "{da:?} vs {na:?}");
                }
            }
        }
    }

    #[test]
    fn singular_flux_is_finite_at_zero() {
        let f = PLaplace { p: 1.5 };
        let a = f.eval([0.0; 2], 0.0, [0.0, 0.0]);
        assert_eq!(a, [0.0, 0.0]);
        let (d, _) = f.jacobian([0.0; 2], 0.0, [0.0, 0.0]);
        assert!(d[0][0].is_finite());
        assert_eq!(PLaplace { p: 3.0 }.jacobian([0.0; 2], 0.0, [0.0; 2]).0, [[0.0; 2]; 2]);
    }

    #[test]
    fn validation() {
        assert!(LerayLionsCoeff::p_laplace(1.0).is_err());
        assert!(LerayLionsCoeff::custom(
            2.0,
            2.5,
            [1.0, 0.0, 1.0, 0.0, 0.0],
            0.0,
            0.0,
            0.0,
            Arc::new(PLaplace { p: 2.0 })
        )
        .is_err());
        assert!(LerayLionsCoeff::custom(
            2.0,
            1.0,
            [0.0, 0.0, 1.0, 0.0, 0.0],
            0.0,
            0.0,
            0.0,
            Arc::new(PLaplace { p: 2.0 })
        )
        .is_err());
    }

    #[test]
    fn drift_checks() {
        let pts: Vec<f64> = (-30..=30).map(|k| k as f64 * 0.2).collect();
        assert!(DriftSpec::sine(-1.0).unwrap().check(&pts));
        assert!(DriftSpec::zero().check(&pts));
        let bad = DriftSpec::new("steep", 0.5, 1.0, |l: f64| l.sin(), |l: f64| l.cos()).unwrap();
        assert!(!bad.check(&pts));
        let shifted = DriftSpec::new("shift", 1.0, 2.0, |l: f64| 1.0 + l.sin(), |l: f64| l.cos()).unwrap();
        assert!(!shifted.check(&pts));
    }
}
