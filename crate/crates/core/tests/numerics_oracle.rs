//! Special functions against frozen 40-digit reference values.

use mlmi::numerics::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn regularized_upper_gamma() {
    let cases = [
        (0.5, 0.01, 0.8875370839817152),
        (0.5, 2.0, 0.04550026389635842),
        (2.5, 1.0, 0.8491450360846097),
        (12.0, 3.0, 0.9999286133710258),
        (12.0, 30.0, 6.387702539927337e-05),
        (100.0, 90.0, 0.8417790108135699),
        (100.0, 130.0, 0.002750408367306526),
        (0.1, 5.0, 0.000143938965846734),
        (3.0, 0.0001, 0.9999999999998334),
        (12.0, 12.0, 0.4615973330636182),
    ];
    for (a, z, want) in cases {
        let got = regularized_gamma_q(a, z).unwrap();
        assert!(close(got, want, 1e-12), "Q({a}, {z}) = {got}, want {want}");
        let p = regularized_gamma_p(a, z).unwrap();
        assert!((p + got - 1.0).abs() < 1e-14);
    }
}

#[test]
fn log_tail_beyond_underflow() {
    for (a, z, want) in [(12.0, 1200.0, -1139.5022614809307), (2.0, 800.0, -793.3141390529316)] {
        let got = ln_regularized_gamma_q(a, z).unwrap();
        assert!(close(got, want, 1e-13), "{got} vs {want}");
    }
}

#[test]
fn upper_gamma_nonpositive_shape() {
    let cases = [
        (0.0, 0.5, 0.5597735947761608),
        (0.0, 3.0, 0.013048381094197037),
        (-0.5, 0.2, 1.7929924720994257),
        (-0.5, 4.0, 0.0017335001273888456),
        (-1.0, 0.3, 1.563717417263213),
        (-2.5, 0.7, 0.35118296608911354),
        (-2.5, 2.0, 0.004836452009702693),
        (-3.0, 0.05, 2475.95595203544),
        (-0.5, 2.0, 0.030098757100186467),
    ];
    for (a, z, want) in cases {
        let got = upper_incomplete_gamma(a, z).unwrap();
        assert!(close(got, want, 1e-12), "Γ({a}, {z}) = {got}, want {want}");
    }
}

#[test]
fn inverse_upper_gamma() {
    let cases = [
        (0.5, 0.3, 0.5370970854287926),
        (2.0, 0.01, 6.638352067993813),
        (12.0, 0.5, 11.668363153044766),
        (12.0, 0.999, 4.042440790424585),
        (50.0, 1e-10, 108.85710156915461),
    ];
    for (a, p, want) in cases {
        let got = inverse_regularized_gamma_q(a, p).unwrap();
        assert!(close(got, want, 1e-12), "Q⁻¹({a}, {p}) = {got}, want {want}");
    }
}

#[test]
fn chi_square_quantiles() {
    let cases = [
        (1, 0.95, 3.841458820694124),
        (2, 0.5, 1.386294361119891),
        (4, 0.975, 11.143286781877796),
        (24, 0.5, 23.336726306089535),
        (30, 0.025, 16.79077226556663),
    ];
    for (df, p, want) in cases {
        let got = chi_square_quantile(df, p).unwrap();
        assert!(close(got, want, 1e-12), "χ²_{df}({p}) = {got}, want {want}");
    }
}

#[test]
fn normal_cdf_and_quantile() {
    let cases = [
        (-8.0, 6.220960574271784e-16),
        (-3.0, 0.0013498980316300946),
        (-1.0, 0.15865525393145705),
        (0.0, 0.5),
        (0.5, 0.6914624612740131),
        (2.0, 0.9772498680518208),
        (6.0, 0.9999999990134123),
        (1.96, 0.9750021048517795),
    ];
    for (x, want) in cases {
        let got = std_normal_cdf(x);
        assert!(close(got, want, 1e-13), "Φ({x}) = {got}, want {want}");
    }
    let quantiles = [
        (0.001, -3.0902323061678136),
        (0.02425, -1.9729610513118852),
        (0.1, -1.2815515655446008),
        (0.3, -0.5244005127080409),
        (0.975, 1.959963984540054),
        (0.99999, 4.264890793923841),
    ];
    for (p, want) in quantiles {
        let got = normal_quantile(p);
        assert!(close(got, want, 1e-14), "Φ⁻¹({p}) = {got}, want {want}");
    }
}

#[test]
fn inverse_round_trip_grid() {
    for a in [0.5, 2.0, 12.0, 50.0] {
        for i in 0..=200 {
            let z = 1e-3 * (1e5f64).powf(i as f64 / 200.0);
            let q = regularized_gamma_q(a, z).unwrap();
            if q <= 0.0 {
                continue;
            }
            let back = inverse_regularized_gamma_q(a, q).unwrap();
            // Where Q rounds towards 1 the input itself only pins z down to
            // about eps / density.
            let density = ((a - 1.0) * z.ln() - z - ln_gamma(a)).exp();
            let tol = 1e-8 * z.max(1.0) + 4.0 * f64::EPSILON * q / density;
            assert!((back - z).abs() <= tol, "a={a} z={z} back={back}");
        }
    }
}

#[test]
fn chi_square_quantile_increasing() {
    for df in [1, 2, 4, 24, 99] {
        let mut prev = 0.0;
        for i in 1..1000 {
            let q = chi_square_quantile(df, i as f64 / 1000.0).unwrap();
            assert!(q > prev, "df={df} step {i}");
            prev = q;
        }
    }
}

/// Real roots of `x³ + b·x² + c·x + d` when all three are real
/// (trigonometric form), descending.
fn cubic_roots(b: f64, c: f64, d: f64) -> [f64; 3] {
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    if p.abs() < 1e-300 {
        let r = (-q).cbrt() + shift;
        return [r, r, r];
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
    let theta = arg.acos() / 3.0;
    let mut r = [0.0; 3];
    for (k, slot) in r.iter_mut().enumerate() {
        *slot = m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift;
    }
    r.sort_by(|x, y| y.partial_cmp(x).unwrap());
    r
}

proptest! {
    #[test]
    fn incomplete_gamma_recurrence(a in -3.0f64..20.0, z in 0.01f64..40.0) {
        let lhs = upper_incomplete_gamma(a + 1.0, z).unwrap();
        let rhs = a * upper_incomplete_gamma(a, z).unwrap() + z.powf(a) * (-z).exp();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs(), "a={} z={} {} vs {}", a, z, lhs, rhs);
    }

    #[test]
    fn pair_eigen_matches_characteristic_polynomial(
        wa in prop::collection::vec(-2.0f64..2.0, 9),
        ba in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let a = DMatrix::from_row_slice(3, 3, &wa);
        let c = DMatrix::from_row_slice(3, 3, &ba);
        let w = SpdMatrix::symmetrized(&a * a.transpose() + DMatrix::identity(3, 3) * 0.5);
        let b = SpdMatrix::symmetrized(&c * c.transpose());
        let m = w.as_matrix().clone().try_inverse().unwrap() * b.as_matrix();
        let tr = m.trace();
        let c2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
            + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
            + m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
        let det = m.determinant();
        let roots = cubic_roots(-tr, c2, -det);
        let e = pair_eigen(&w, &b).unwrap();
        let scale = 1.0 + roots[0].abs();
        for (got, want) in e.values.iter().zip(roots.iter()) {
            prop_assert!((got - want).abs() <= 1e-8 * scale, "{:?} vs {:?}", e.values, roots);
        }
    }

    #[test]
    fn gamma_inverse_round_trip(a in 0.05f64..200.0, p in 1e-12f64..1.0) {
        let z = inverse_regularized_gamma_q(a, p).unwrap();
        let back = regularized_gamma_q(a, z).unwrap();
        prop_assert!((back - p).abs() <= 1e-10 * p, "a={} p={} z={} back={}", a, p, z, back);
    }

    #[test]
    fn pair_eigen_reconstructs_product(
        k in 1usize..5,
        wa in prop::collection::vec(-2.0f64..2.0, 16),
        ba in prop::collection::vec(-2.0f64..2.0, 16),
    ) {
        let a = DMatrix::from_row_slice(k, k, &wa[..k * k]);
        let c = DMatrix::from_row_slice(k, k, &ba[..k * k]);
        let w = SpdMatrix::symmetrized(&a * a.transpose() + DMatrix::identity(k, k) * 0.2);
        let b = SpdMatrix::symmetrized(&c * c.transpose());
        let e = pair_eigen(&w, &b).unwrap();
        let target = w.as_matrix().clone().try_inverse().unwrap() * b.as_matrix();
        let rebuilt = e.reconstruct(&e.values);
        prop_assert!((&rebuilt - &target).amax() <= 1e-9 * (1.0 + target.amax()));
        prop_assert!(e.values.windows(2).all(|v| v[0] >= v[1]));
        prop_assert!(e.values.iter().all(|&v| v > -1e-10 * (1.0 + e.values[0].abs())));
        let ident = &e.vectors * &e.inverse;
        prop_assert!((ident - DMatrix::identity(k, k)).amax() < 1e-9);
    }
}
