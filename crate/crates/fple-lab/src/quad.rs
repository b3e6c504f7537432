//! Shared quadrature primitives: fixed Gauss–Legendre rules, an adaptive
//! 1-D integrator, and sphere-area / Beta-function constants.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("adaptive quadrature did not reach tolerance {tol:e} within depth {depth}")]
    DidNotConverge { tol: f64, depth: usize },
}

/// Gauss–Legendre nodes (positive half) and weights on [-1, 1], n = 8.
const GL8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_80, 0.362_683_783_378_361_98),
    (0.525_532_409_916_328_99, 0.313_706_645_877_887_29),
    (0.796_666_477_413_626_74, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_23, 0.101_228_536_290_376_26),
];

/// Gauss–Legendre nodes (positive half) and weights on [-1, 1], n = 16.
const GL16: [(f64, f64); 8] = [
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_50),
    (0.281_603_550_779_258_91, 0.182_603_415_044_923_59),
    (0.458_016_777_657_227_39, 0.169_156_519_395_002_54),
    (0.617_876_244_402_643_75, 0.149_595_988_816_576_73),
    (0.755_404_408_355_003_03, 0.124_628_971_255_533_87),
    (0.865_631_202_387_831_74, 0.095_158_511_682_492_78),
    (0.944_575_023_073_232_58, 0.062_253_523_938_647_89),
    (0.989_400_934_991_649_93, 0.027_152_459_411_754_09),
];

fn gauss_rule<F: Fn(f64) -> f64>(table: &[(f64, f64)], f: &F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for &(x, w) in table {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}

/// 8-point Gauss–Legendre rule on [a, b].
pub fn gauss8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    gauss_rule(&GL8, &f, a, b)
}

/// 16-point Gauss–Legendre rule on [a, b].
pub fn gauss16<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    gauss_rule(&GL16, &f, a, b)
}

/// 8-point Gauss–Legendre nodes and weights mapped to [a, b], in ascending
/// node order. Used to freeze tail-quadrature points into kernel tables.
pub fn gauss8_points(a: f64, b: f64) -> Vec<(f64, f64)> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut pts: Vec<(f64, f64)> = GL8
        .iter()
        .flat_map(|&(x, w)| {
            [(mid - half * x, w * half), (mid + half * x, w * half)]
        })
        .collect();
    pts.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
    pts
}

/// Adaptive integration of `f` over [a, b] to relative tolerance `rel_tol`,
/// by recursive bisection with an embedded GL8/GL16 error estimate.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64, QuadError> {
    let coarse = gauss_rule(&GL16, &f, a, b);
    let tol_abs = rel_tol * coarse.abs().max(1e-300);
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        tol_abs: f64,
        depth: usize,
    ) -> Result<f64, QuadError> {
        let i8v = gauss_rule(&GL8, f, a, b);
        let i16v = gauss_rule(&GL16, f, a, b);
        // the relative floor keeps sharp-peak subdivision from chasing
        // tolerances below machine precision
        let floor = 32.0 * f64::EPSILON * i16v.abs();
        if (i16v - i8v).abs() <= tol_abs.max(floor) || (b - a).abs() < 1e-300 {
            return Ok(i16v);
        }
        if depth >= 48 {
            return Err(QuadError::DidNotConverge {
                tol: tol_abs,
                depth,
            });
        }
        let mid = 0.5 * (a + b);
        let left = rec(f, a, mid, 0.5 * tol_abs, depth + 1)?;
        let right = rec(f, mid, b, 0.5 * tol_abs, depth + 1)?;
        Ok(left + right)
    }
    rec(&f, a, b, tol_abs, 0)
}

/// Surface area of the unit sphere S^{n-1} in R^n: 2 π^{n/2} / Γ(n/2).
pub fn unit_sphere_area(n: u32) -> f64 {
    let nh = 0.5 * n as f64;
    2.0 * std::f64::consts::PI.powf(nh) / statrs::function::gamma::gamma(nh)
}

/// Surface area of S^{n-2} (the angular factor of the radial kernel
/// reduction in dimension n >= 2).
pub fn sub_sphere_area(n: u32) -> f64 {
    assert!(n >= 2, "sub_sphere_area needs n >= 2");
    unit_sphere_area(n - 1)
}

/// Euler Beta function B(a, b) through log-gamma (stable for large args).
pub fn beta_fn(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss16_integrates_moderate_polynomials_exactly() {
        let v = gauss16(|x| x.powi(9), 0.0, 1.0);
        assert_relative_eq!(v, 0.1, max_relative = 1e-14);
    }

    #[test]
    fn gauss8_points_reproduce_the_rule() {
        let pts = gauss8_points(0.25, 3.0);
        let direct = gauss8(|x| x.ln(), 0.25, 3.0);
        let via_points: f64 = pts.iter().map(|&(x, w)| w * x.ln()).sum();
        assert_relative_eq!(direct, via_points, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_handles_smooth_and_peaked_integrands() {
        let v = adaptive(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-10).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-10);
        // integrable singularity at the left endpoint
        let v = adaptive(|x: f64| x.powf(-0.5), 1e-12, 1.0, 1e-8).unwrap();
        assert_relative_eq!(v, 2.0 * (1.0 - 1e-6), max_relative = 1e-6);
    }

    #[test]
    fn sphere_areas_match_closed_forms() {
        assert_relative_eq!(unit_sphere_area(1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(
            unit_sphere_area(2),
            2.0 * std::f64::consts::PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            unit_sphere_area(3),
            4.0 * std::f64::consts::PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(sub_sphere_area(2), 2.0, max_relative = 1e-14);
        assert_relative_eq!(
            sub_sphere_area(3),
            2.0 * std::f64::consts::PI,
            max_relative = 1e-14
        );
    }

    #[test]
    fn beta_matches_factorial_identity() {
        assert_relative_eq!(beta_fn(2.0, 3.0), 1.0 / 12.0, max_relative = 1e-13);
    }
}
