use approx::assert_relative_eq;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use lago::model::{Arm, Center, FittedModel, Link, StageRecord};
use lago::power::special::{chisq_power, gamma_p};
use lago::power::{
    chisq_critical, conditional_constraint_slack, conditional_power, final_test, lambda_min, noncentral_chisq_cdf,
    normal_cdf, normal_quantile, t_statistic, unconditional_lambda, wald_statistic, z_statistic, ArmSummary,
    ArmTotals, PlannedStage, TestKind, VarianceForm,
};
use lago::optimizer::Direction;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

#[test]
fn normal_cdf_matches_statrs() {
    // statrs' erf is itself good to a few 1e-11 absolute.
    let n = std_normal();
    for i in -80..=80 {
        let x = i as f64 * 0.1;
        assert_relative_eq!(normal_cdf(x), n.cdf(x), epsilon = 5e-11);
    }
}

#[test]
fn normal_cdf_reference_values() {
    for (x, v) in [
        (-1.0, 0.158_655_253_931_457_05),
        (-2.15, 0.015_777_607_391_090_465),
        (-4.2, 1.334_574_901_590_630_9e-5),
        (-6.0, 9.865_876_450_376_98e-10),
        (-10.0, 7.619_853_024_160_527e-24),
    ] {
        assert!((normal_cdf(x) - v).abs() <= 1e-15, "x = {x}");
        assert_relative_eq!(normal_cdf(x), v, max_relative = 1e-9);
    }
}

#[test]
fn normal_quantile_matches_statrs() {
    let n = std_normal();
    for p in [1e-10, 1e-6, 0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999, 1.0 - 1e-9] {
        assert_relative_eq!(normal_quantile(p), n.inverse_cdf(p), max_relative = 1e-9);
    }
}

#[test]
fn chisq_critical_matches_statrs() {
    for df in [1.0, 2.0, 3.0, 5.0, 10.0] {
        for alpha in [0.01, 0.05, 0.1] {
            let c = chisq_critical(alpha, df);
            assert_relative_eq!(ChiSquared::new(df).unwrap().cdf(c), 1.0 - alpha, epsilon = 1e-10);
        }
    }
}

#[test]
fn central_case_of_noncentral_cdf() {
    for df in [1.0, 2.0, 4.0] {
        let c = ChiSquared::new(df).unwrap();
        for k in [0.5, 2.0, 3.84, 9.0] {
            assert_relative_eq!(noncentral_chisq_cdf(k, df, 0.0), c.cdf(k), epsilon = 1e-12);
        }
    }
}

#[test]
fn one_df_noncentral_cdf_closed_form() {
    // P((Z + μ)² ≤ k) = Φ(√k − μ) − Φ(−√k − μ)
    let n = std_normal();
    for lambda in [0.1f64, 1.0, 4.0, 7.85, 20.0, 60.0] {
        let mu: f64 = lambda.sqrt();
        for k in [0.3f64, 1.0, 3.841459, 8.0, 25.0] {
            let r: f64 = k.sqrt();
            let want = n.cdf(r - mu) - n.cdf(-r - mu);
            assert_relative_eq!(noncentral_chisq_cdf(k, 1.0, lambda), want, epsilon = 1e-10);
        }
    }
}

#[test]
fn two_df_noncentral_cdf_by_quadrature() {
    // Rician radius: P(R² ≤ k), R = |(Z₁ + √λ, Z₂)|, integrated over the disc in polar form.
    let lambda: f64 = 3.0;
    let k: f64 = 5.0;
    let mu = lambda.sqrt();
    let (nr, nt) = (2000, 2000);
    let rmax = k.sqrt();
    let mut sum = 0.0;
    for i in 0..nr {
        let r = (i as f64 + 0.5) * rmax / nr as f64;
        for j in 0..nt {
            let t = (j as f64 + 0.5) * std::f64::consts::TAU / nt as f64;
            let (x, y) = (r * t.cos() - mu, r * t.sin());
            sum += r * (-(x * x + y * y) / 2.0).exp();
        }
    }
    let want = sum * (rmax / nr as f64) * (std::f64::consts::TAU / nt as f64) / std::f64::consts::TAU;
    assert_relative_eq!(noncentral_chisq_cdf(k, 2.0, lambda), want, epsilon = 1e-6);
}

#[test]
fn lambda_min_attains_power_goal() {
    for df in [1usize, 2, 3] {
        for pi in [0.5, 0.8, 0.9, 0.95] {
            let l = lambda_min(0.05, pi, df);
            assert_relative_eq!(chisq_power(0.05, df as f64, l), pi, epsilon = 1e-8);
        }
    }
}

#[test]
fn gamma_p_matches_statrs_chisq() {
    let c = ChiSquared::new(7.0).unwrap();
    assert_relative_eq!(gamma_p(3.5, 4.0), c.cdf(8.0), epsilon = 1e-12);
}

#[test]
fn z_statistics_by_hand() {
    let t = ArmTotals::binary(30.0, 50.0, 20.0, 50.0);
    // unpooled: 0.2 / sqrt(0.6·0.4/50 + 0.4·0.6/50)
    assert_relative_eq!(z_statistic(&t, false).unwrap(), 0.2 / (0.0096f64).sqrt(), epsilon = 1e-12);
    // pooled: p̂ = 0.5
    assert_relative_eq!(z_statistic(&t, true).unwrap(), 0.2 / (0.25f64 * 0.04).sqrt(), epsilon = 1e-12);
}

#[test]
fn t_statistics_by_hand() {
    let y1 = [1.0, 2.0, 3.0, 4.0];
    let y0 = [0.5, 1.0, 1.5];
    let t = ArmTotals {
        n1: 4.0,
        s1: 10.0,
        ss1: y1.iter().map(|v| v * v).sum(),
        n0: 3.0,
        s0: 3.0,
        ss0: y0.iter().map(|v| v * v).sum(),
    };
    let (v1, v0) = (5.0 / 3.0, 0.25);
    assert_relative_eq!(t_statistic(&t, false).unwrap(), 1.5 / (v1 / 4.0 + v0 / 3.0f64).sqrt(), epsilon = 1e-12);
    let sp = (3.0 * v1 + 2.0 * v0) / 5.0;
    assert_relative_eq!(t_statistic(&t, true).unwrap(), 1.5 / (sp * (0.25 + 1.0 / 3.0f64)).sqrt(), epsilon = 1e-12);
}

#[test]
fn zero_variance_is_an_error() {
    let t = ArmTotals::binary(0.0, 10.0, 0.0, 10.0);
    assert!(z_statistic(&t, false).is_err());
}

#[test]
fn wald_statistic_by_adjugate() {
    let model = FittedModel {
        beta: vec![0.1, 0.4, -0.2],
        link: Link::Logit,
        covariance: vec![vec![0.5, 0.0, 0.0], vec![0.0, 0.04, 0.01], vec![0.0, 0.01, 0.09]],
        n_used: 200.0,
    };
    let (a, b, d) = (0.04 * 200.0, 0.01 * 200.0, 0.09 * 200.0);
    let det = a * d - b * b;
    let (x, y) = (0.4, -0.2);
    let quad = (d * x * x - 2.0 * b * x * y + a * y * y) / det;
    assert_relative_eq!(wald_statistic(&model, 200.0).unwrap(), 200.0 * quad, epsilon = 1e-10);
}

#[test]
fn final_z_test_p_value() {
    let rec = StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Intervention, vec![1.0], 100.0, 60.0),
            Center::from_counts(Arm::Control, vec![0.0], 100.0, 45.0),
        ],
    )
    .unwrap();
    let f = final_test(&[rec], TestKind::ZUnpooled, 0.05, &Link::Logit).unwrap();
    let z = 0.15 / (0.6 * 0.4 / 100.0 + 0.45 * 0.55 / 100.0f64).sqrt();
    assert_relative_eq!(f.statistic, z, epsilon = 1e-12);
    assert_relative_eq!(f.p_value, 2.0 * (1.0 - std_normal().cdf(z)), epsilon = 1e-10);
    assert_eq!(f.reject, z > 1.959964);
}

fn fixture() -> (FittedModel, ArmSummary) {
    let beta = vec![0.1, 0.3, 0.15];
    let model = FittedModel::from_beta(beta, Link::Logit);
    let rec = StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Control, vec![0.0, 0.0], 40.0, 22.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 0.0], 40.0, 24.0),
            Center::from_counts(Arm::Intervention, vec![0.0, 4.0], 40.0, 27.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 4.0], 40.0, 29.0),
        ],
    )
    .unwrap();
    (model, ArmSummary::new(vec![rec], vec![PlannedStage::balanced(2, 2, 40.0)]))
}

#[test]
fn pooled_test_rescales_critical_value() {
    let (model, summary) = fixture();
    let u = unconditional_lambda(&[1.0, 4.0], &model, &summary, TestKind::ZPooled).unwrap();
    assert!(u.critical_scale > 0.0);
    let plain = unconditional_lambda(&[1.0, 4.0], &model, &summary, TestKind::ZUnpooled).unwrap();
    assert_eq!(plain.critical_scale, 1.0);
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(x in -7.5f64..3.0) {
        prop_assert!((normal_quantile(normal_cdf(x)) - x).abs() < 1e-7);
    }

    #[test]
    fn noncentral_cdf_decreases_in_lambda(k in 0.1f64..30.0, df in 1usize..5, l in 0.0f64..30.0, dl in 0.01f64..5.0) {
        let a = noncentral_chisq_cdf(k, df as f64, l);
        let b = noncentral_chisq_cdf(k, df as f64, l + dl);
        prop_assert!(b <= a + 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn conditional_slack_sign_matches_power(x1 in 0.0f64..2.0, x2 in 0.0f64..8.0, pi in 0.05f64..0.95) {
        let (model, summary) = fixture();
        let x = [x1, x2];
        let s = conditional_constraint_slack(&x, &model, &summary, TestKind::ZUnpooled, 0.05, pi, Direction::Increase, VarianceForm::StandardDeviation).unwrap();
        let p = conditional_power(&x, &model, &summary, TestKind::ZUnpooled, 0.05, Direction::Increase, VarianceForm::StandardDeviation).unwrap();
        if s.abs() > 1e-9 {
            prop_assert_eq!(s <= 0.0, p >= pi, "slack {} power {} pi {}", s, p, pi);
        }
    }

    #[test]
    fn unconditional_power_rises_with_package(x1 in 0.0f64..1.9, x2 in 0.0f64..7.9) {
        let (model, summary) = fixture();
        let a = unconditional_lambda(&[x1, x2], &model, &summary, TestKind::ZUnpooled).unwrap();
        let b = unconditional_lambda(&[x1 + 0.1, x2 + 0.1], &model, &summary, TestKind::ZUnpooled).unwrap();
        prop_assert!(b.drift.unwrap() > a.drift.unwrap());
    }
}
