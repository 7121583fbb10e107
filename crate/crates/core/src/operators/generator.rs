//! The parabolic generator of a diffusion and its square-field operators.
//!
//! `apply_a` maps a test function to
//! `d_t phi + (1/2) sum_ij alpha_ij d_ij phi + sum_i mu_i d_i phi`.
//!
//! The square field comes in two independently computed routes that must
//! agree and are deliberately kept separate as a cross-check on each other:
//! the defining combination `a(fg) - f a(g) - g a(f)` and the direct
//! contraction `sum_ij alpha_ij d_i f d_j g`.

use std::sync::Arc;

use crate::error::Result;
use crate::forward::DiffusionModel;
use crate::operators::psi::PsiSystem;
use crate::operators::test_function::TestFunction;

/// A pointwise operator image: evaluation can fail (finite differences near
/// a pole), hence the `Result`.
pub type OpFn = Arc<dyn Fn(f64, &[f64]) -> Result<f64> + Send + Sync>;
pub type VecOpFn = Arc<dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// Generator image `a(phi)` of a test function under the given diffusion.
pub fn apply_a(model: &DiffusionModel, phi: &TestFunction) -> OpFn {
    let model = model.clone();
    let phi = phi.clone();
    Arc::new(move |t, x: &[f64]| {
        let dt = phi.time_derivative(t, x)?;
        let grad = phi.gradient(t, x)?;
        let hess = phi.hessian(t, x)?;
        let alpha = model.alpha(t, x);
        let mu = model.mu(t, x);
        let d = model.dim;
        let mut acc = dt;
        let mut second = 0.0;
        for i in 0..d {
            for j in 0..d {
                second += alpha[(i, j)] * hess[(i, j)];
            }
        }
        acc += 0.5 * second;
        for i in 0..d {
            acc += mu[i] * grad[i];
        }
        Ok(acc)
    })
}

/// Square field by its defining combination `a(fg) - f a(g) - g a(f)`.
pub fn carre_du_champ(model: &DiffusionModel, f: &TestFunction, g: &TestFunction) -> OpFn {
    let a_fg = apply_a(model, &TestFunction::product(f, g));
    let a_f = apply_a(model, f);
    let a_g = apply_a(model, g);
    let (f, g) = (f.clone(), g.clone());
    Arc::new(move |t, x: &[f64]| {
        Ok(a_fg(t, x)? - f.eval(t, x) * a_g(t, x)? - g.eval(t, x) * a_f(t, x)?)
    })
}

/// Square field by the direct contraction `sum_ij alpha_ij d_i f d_j g`.
/// For smooth functions this must agree with [`carre_du_champ`]; both are
/// kept so that one can audit the other.
pub fn carre_du_champ_direct(
    model: &DiffusionModel,
    f: &TestFunction,
    g: &TestFunction,
) -> OpFn {
    let model = model.clone();
    let (f, g) = (f.clone(), g.clone());
    Arc::new(move |t, x: &[f64]| {
        let gf = f.gradient(t, x)?;
        let gg = g.gradient(t, x)?;
        let alpha = model.alpha(t, x);
        let d = model.dim;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += alpha[(i, j)] * gf[i] * gg[j];
            }
        }
        Ok(acc)
    })
}

/// Vector square field against a psi system:
/// component `i` is `a(phi psi_i) - phi a(psi_i) - psi_i a(phi)`, using the
/// system's recorded generator images `a(psi_i)`.
pub fn gamma_psi(model: &DiffusionModel, system: &PsiSystem, phi: &TestFunction) -> VecOpFn {
    let a_phi = apply_a(model, phi);
    let a_products: Vec<OpFn> = (0..system.len())
        .map(|i| apply_a(model, &TestFunction::product(phi, system.psi(i))))
        .collect();
    let system = system.clone();
    let phi = phi.clone();
    Arc::new(move |t, x: &[f64]| {
        let aphi = a_phi(t, x)?;
        let phi_v = phi.eval(t, x);
        let mut out = Vec::with_capacity(system.len());
        for i in 0..system.len() {
            let psi_v = system.psi(i).eval(t, x);
            out.push(a_products[i](t, x)? - phi_v * system.a_psi(i, t, x) - psi_v * aphi);
        }
        Ok(out)
    })
}

/// `alpha * grad(phi)`: for the coordinate psi system the vector square
/// field must reduce to this, which makes it the natural cross-check.
pub fn alpha_grad(model: &DiffusionModel, phi: &TestFunction) -> VecOpFn {
    let model = model.clone();
    let phi = phi.clone();
    Arc::new(move |t, x: &[f64]| {
        let grad = phi.gradient(t, x)?;
        let alpha = model.alpha(t, x);
        let d = model.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                out[i] += alpha[(i, j)] * grad[j];
            }
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::test_function::Growth;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brownian() -> DiffusionModel {
        DiffusionModel::brownian(1).unwrap()
    }

    fn drifted(mu0: f64) -> DiffusionModel {
        DiffusionModel::scalar(move |_, _| mu0, |_, _| 1.0, mu0.abs() + 1.0, 1.0).unwrap()
    }

    #[test]
    fn coordinate_image_under_brownian_motion_vanishes_exactly() {
        let a = apply_a(&brownian(), &TestFunction::coordinate(1, 0));
        for &x in &[-3.0, 0.0, 0.7, 11.0] {
            assert_eq!(a(0.3, &[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn squared_coordinate_image_under_brownian_motion_is_one_exactly() {
        let x2 = TestFunction::polynomial(1, vec![(1.0, vec![2])]);
        let a = apply_a(&brownian(), &x2);
        for &x in &[-3.0, 0.0, 0.7, 11.0] {
            assert_eq!(a(0.0, &[x]).unwrap(), 1.0);
        }
    }

    #[test]
    fn time_coordinate_product_image_matches_the_closed_form() {
        // phi = t*x under drift mu0 and unit diffusion: a(phi) = x + mu0*t.
        let mu0 = 0.75;
        let phi = TestFunction::with_derivatives(
            1,
            Arc::new(|t, x: &[f64]| t * x[0]),
            Arc::new(|_, x: &[f64]| x[0]),
            Arc::new(|t, _: &[f64]| vec![t]),
            Arc::new(|_, _: &[f64]| DMatrix::zeros(1, 1)),
            Growth::Polynomial(1),
        );
        let a = apply_a(&drifted(mu0), &phi);
        for &(t, x) in &[(0.0, 2.0), (0.5, -1.0), (1.0, 0.25)] {
            let got = a(t, &[x]).unwrap();
            assert!((got - (x + mu0 * t)).abs() <= 1e-12, "{got}");
        }
        // The same image through numeric differentiation only.
        let phi_numeric =
            TestFunction::new(1, Arc::new(|t, x: &[f64]| t * x[0]), Growth::Polynomial(1));
        let a_num = apply_a(&drifted(mu0), &phi_numeric);
        for &(t, x) in &[(0.0, 2.0), (0.5, -1.0), (1.0, 0.25)] {
            let got = a_num(t, &[x]).unwrap();
            assert!((got - (x + mu0 * t)).abs() <= 1e-7, "{got}");
        }
    }

    #[test]
    fn square_field_of_the_coordinate_with_itself_is_the_diffusion_exactly() {
        let x = TestFunction::coordinate(1, 0);
        let gamma = carre_du_champ(&brownian(), &x, &x);
        for &p in &[-2.0, 0.0, 1.5] {
            assert_eq!(gamma(0.2, &[p]).unwrap(), 1.0);
        }
    }

    #[test]
    fn square_field_against_a_constant_vanishes_exactly() {
        // Dyadic constants keep every intermediate a power-of-two scaling of
        // the same expression, so the cancellation is exact in floating point.
        let x2 = TestFunction::polynomial(1, vec![(1.0, vec![2])]);
        for &c in &[1.0, 2.0] {
            let gamma = carre_du_champ(&drifted(0.5), &x2, &TestFunction::constant(1, c));
            for &p in &[-2.0, 0.0, 1.5, 3.25] {
                assert_eq!(gamma(0.7, &[p]).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn square_field_of_coordinate_and_its_square_is_twice_the_point() {
        let x = TestFunction::coordinate(1, 0);
        let x2 = TestFunction::polynomial(1, vec![(1.0, vec![2])]);
        let defining = carre_du_champ(&brownian(), &x, &x2);
        let direct = carre_du_champ_direct(&brownian(), &x, &x2);
        for &p in &[-2.0, -0.5, 0.0, 1.0, 3.0] {
            let a = defining(0.0, &[p]).unwrap();
            let b = direct(0.0, &[p]).unwrap();
            assert!((a - 2.0 * p).abs() <= 1e-12, "defining route {a}");
            assert!((b - 2.0 * p).abs() <= 1e-12, "direct route {b}");
        }
    }

    #[test]
    fn square_field_routes_agree_on_random_polynomials() {
        let mut rng = StdRng::seed_from_u64(2024);
        let model = DiffusionModel::new(
            2,
            Arc::new(|t, x: &[f64]| vec![(x[1] + t).sin(), x[0].cos() * 0.5]),
            Arc::new(|t, x: &[f64]| {
                let b = 0.4 * (x[0] + t).sin();
                DMatrix::from_row_slice(2, 2, &[1.2 + b, 0.3, 0.3, 0.9 - 0.4 * x[1].tanh()])
            }),
            2.0,
            2.0,
        )
        .unwrap();
        let random_poly = |rng: &mut StdRng| {
            let mut terms = Vec::new();
            for p0 in 0..=2u32 {
                for p1 in 0..=2u32 {
                    if p0 + p1 <= 3 {
                        terms.push((rng.gen_range(-1.0..1.0), vec![p0, p1]));
                    }
                }
            }
            TestFunction::polynomial(2, terms)
        };
        for _ in 0..20 {
            let f = random_poly(&mut rng);
            let g = random_poly(&mut rng);
            let defining = carre_du_champ(&model, &f, &g);
            let direct = carre_du_champ_direct(&model, &f, &g);
            for _ in 0..100 {
                let t = rng.gen_range(0.0..1.0);
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let a = defining(t, &x).unwrap();
                let b = direct(t, &x).unwrap();
                let tol = 1e-6 * (1.0 + a.abs().max(b.abs()));
                assert!((a - b).abs() <= tol, "routes disagree at (t={t}, x={x:?}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn square_field_is_bilinear() {
        let mut rng = StdRng::seed_from_u64(7);
        let model = drifted(0.3);
        let f1 = TestFunction::polynomial(1, vec![(0.7, vec![3]), (-0.2, vec![1])]);
        let f2 = TestFunction::polynomial(1, vec![(1.1, vec![2]), (0.4, vec![0])]);
        let g = TestFunction::polynomial(1, vec![(0.9, vec![2]), (0.25, vec![1])]);
        let (a, b) = (1.7, -2.3);
        let combo = TestFunction::linear_combination(a, &f1, b, &f2);
        let lhs = carre_du_champ(&model, &combo, &g);
        let rhs1 = carre_du_champ(&model, &f1, &g);
        let rhs2 = carre_du_champ(&model, &f2, &g);
        for _ in 0..50 {
            let t = rng.gen_range(0.0..1.0);
            let x = [rng.gen_range(-2.0..2.0)];
            let lhs_v = lhs(t, &x).unwrap();
            let rhs_v = a * rhs1(t, &x).unwrap() + b * rhs2(t, &x).unwrap();
            assert!(
                (lhs_v - rhs_v).abs() <= 1e-10 * (1.0 + lhs_v.abs()),
                "bilinearity defect at (t={t}, x={x:?}): {lhs_v} vs {rhs_v}"
            );
        }
    }

    #[test]
    fn vector_square_field_against_a_constant_vanishes_exactly() {
        let model = drifted(0.6);
        let system = PsiSystem::coordinates(&model);
        let g = gamma_psi(&model, &system, &TestFunction::constant(1, 1.0));
        for &p in &[-1.0, 0.0, 2.5] {
            assert_eq!(g(0.4, &[p]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn vector_square_field_matches_diffusion_times_gradient() {
        // alpha = 2, phi = x: component must be exactly 2; phi = x^2: 2*2x.
        let model = DiffusionModel::scalar(|_, _| 0.0, |_, _| 2.0, 1.0, 2.0).unwrap();
        let system = PsiSystem::coordinates(&model);
        let phi_x = TestFunction::coordinate(1, 0);
        let gp = gamma_psi(&model, &system, &phi_x);
        let ag = alpha_grad(&model, &phi_x);
        for &p in &[-1.5, 0.0, 0.5, 4.0] {
            let got = gp(0.0, &[p]).unwrap();
            assert!((got[0] - 2.0).abs() <= 1e-12, "{}", got[0]);
            assert_eq!(ag(0.0, &[p]).unwrap()[0], 2.0);
        }
        let phi_x2 = TestFunction::polynomial(1, vec![(1.0, vec![2])]);
        let gp = gamma_psi(&model, &system, &phi_x2);
        let ag = alpha_grad(&model, &phi_x2);
        for &p in &[-1.5, 0.0, 0.5, 4.0] {
            let got = gp(0.0, &[p]).unwrap()[0];
            let reference = ag(0.0, &[p]).unwrap()[0];
            assert!((got - 2.0 * (2.0 * p)).abs() <= 1e-12, "{got}");
            assert!((got - reference).abs() <= 1e-12);
        }
    }

    #[test]
    fn vector_square_field_cross_checks_in_two_dimensions() {
        let mut rng = StdRng::seed_from_u64(99);
        let model = DiffusionModel::new(
            2,
            Arc::new(|_, x: &[f64]| vec![0.1 * x[1], -0.2 * x[0]]),
            Arc::new(|_, x: &[f64]| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[1.0 + 0.2 * x[0].tanh(), 0.15, 0.15, 0.8],
                )
            }),
            1.0,
            1.5,
        )
        .unwrap();
        let system = PsiSystem::coordinates(&model);
        let phi = TestFunction::polynomial(
            2,
            vec![(0.5, vec![2, 0]), (-0.3, vec![1, 1]), (0.2, vec![0, 3])],
        );
        let gp = gamma_psi(&model, &system, &phi);
        let ag = alpha_grad(&model, &phi);
        for _ in 0..50 {
            let t = rng.gen_range(0.0..1.0);
            let x = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let got = gp(t, &x).unwrap();
            let reference = ag(t, &x).unwrap();
            for i in 0..2 {
                let tol = 1e-6 * (1.0 + reference[i].abs());
                assert!(
                    (got[i] - reference[i]).abs() <= tol,
                    "component {i} at (t={t}, x={x:?}): {} vs {}",
                    got[i],
                    reference[i]
                );
            }
        }
    }
}
