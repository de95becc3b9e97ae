#![allow(clippy::needless_range_loop)]

use approx::assert_relative_eq;
use proptest::prelude::*;

use lago::data::read_stage_csv;
use lago::model::{
    binary_sandwich_covariance, expit, fit_binary, fit_continuous, logit, predict, Arm, Bounds, Center, Link,
    StageRecord,
};
use lago::LagoError;

/// Dense Gauss–Jordan solve of a small system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| solve(a.to_vec(), (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

fn z(c: &Center) -> Vec<f64> {
    std::iter::once(1.0).chain(c.package.iter().copied()).collect()
}

fn info_at(centers: &[Center], beta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = beta.len();
    let mut g = vec![0.0; k];
    let mut h = vec![vec![0.0; k]; k];
    for c in centers {
        let zz = z(c);
        let p = expit(zz.iter().zip(beta).map(|(a, b)| a * b).sum());
        for i in 0..k {
            g[i] += zz[i] * (c.sum - c.n * p);
            for j in 0..k {
                h[i][j] += zz[i] * zz[j] * c.n * p * (1.0 - p);
            }
        }
    }
    (g, h)
}

/// Plain Newton–Raphson on the logistic score, no safeguards.
fn newton_oracle(centers: &[Center]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = centers[0].package.len() + 1;
    let mut beta = vec![0.0; k];
    for _ in 0..100 {
        let (g, h) = info_at(centers, &beta);
        let step = solve(h, g);
        for i in 0..k {
            beta[i] += step[i];
        }
    }
    let (_, h) = info_at(centers, &beta);
    (beta.clone(), inverse(&h))
}

fn scenario_record() -> StageRecord {
    StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Control, vec![0.0, 0.0], 40.0, 21.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 0.0], 40.0, 25.0),
            Center::from_counts(Arm::Intervention, vec![0.0, 4.0], 40.0, 26.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 4.0], 40.0, 31.0),
            Center::from_counts(Arm::Intervention, vec![0.5, 2.0], 35.0, 22.0),
        ],
    )
    .unwrap()
}

#[test]
fn logistic_fit_matches_newton_oracle() {
    let rec = scenario_record();
    let fit = fit_binary(std::slice::from_ref(&rec)).unwrap();
    let (beta, cov) = newton_oracle(&rec.centers);
    for i in 0..3 {
        assert_relative_eq!(fit.beta[i], beta[i], epsilon = 1e-9);
        for j in 0..3 {
            assert_relative_eq!(fit.covariance[i][j], cov[i][j], epsilon = 1e-9);
        }
    }
    assert_eq!(fit.n_used, 195.0);
}

#[test]
fn saturated_two_arm_fit_reproduces_log_odds() {
    let rec = StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Control, vec![0.0], 100.0, 30.0),
            Center::from_counts(Arm::Intervention, vec![2.0], 100.0, 55.0),
        ],
    )
    .unwrap();
    let fit = fit_binary(&[rec]).unwrap();
    assert_relative_eq!(fit.beta[0], logit(0.3), epsilon = 1e-10);
    assert_relative_eq!(fit.beta[1], (logit(0.55) - logit(0.3)) / 2.0, epsilon = 1e-10);
    // Var(log odds) = 1/(n p (1-p)) per arm
    assert_relative_eq!(fit.covariance[0][0], 1.0 / (100.0 * 0.3 * 0.7), epsilon = 1e-10);
}

#[test]
fn identity_fit_matches_normal_equations() {
    let raw: Vec<(Arm, Vec<f64>, Vec<f64>)> = vec![
        (Arm::Control, vec![0.0, 0.0], vec![1.0, 1.4, 0.7, 1.1]),
        (Arm::Intervention, vec![1.0, 0.0], vec![1.9, 2.2, 1.6]),
        (Arm::Intervention, vec![0.0, 3.0], vec![2.5, 2.9, 3.3, 2.8, 2.6]),
        (Arm::Intervention, vec![2.0, 1.0], vec![3.1, 3.6, 2.7]),
    ];
    let centers: Vec<Center> = raw.iter().map(|(a, x, y)| Center::continuous(*a, x.clone(), y).unwrap()).collect();
    let fit = fit_continuous(&[StageRecord::new(1, centers).unwrap()], &Link::Identity).unwrap();

    let mut xtx = vec![vec![0.0; 3]; 3];
    let mut xty = vec![0.0; 3];
    for (_, x, ys) in &raw {
        let row = [1.0, x[0], x[1]];
        for y in ys {
            for i in 0..3 {
                xty[i] += row[i] * y;
                for j in 0..3 {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
    }
    let ols = solve(xtx, xty);
    for i in 0..3 {
        assert_relative_eq!(fit.beta[i], ols[i], epsilon = 1e-8);
    }
}

#[test]
fn sandwich_matches_participant_level_expansion() {
    let rec = scenario_record();
    let fit = fit_binary(std::slice::from_ref(&rec)).unwrap();
    let got = binary_sandwich_covariance(std::slice::from_ref(&rec), &fit).unwrap();

    let k = 3;
    let mut bread = vec![vec![0.0; k]; k];
    let mut meat = vec![vec![0.0; k]; k];
    for c in &rec.centers {
        let zz = z(c);
        let p = predict(&fit, &c.package);
        let ones = c.sum.round() as usize;
        for i in 0..c.n as usize {
            let y = if i < ones { 1.0 } else { 0.0 };
            for a in 0..k {
                for b in 0..k {
                    bread[a][b] += zz[a] * zz[b] * p * (1.0 - p);
                    meat[a][b] += zz[a] * zz[b] * (y - p) * (y - p);
                }
            }
        }
    }
    let bi = inverse(&bread);
    let mul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..k).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
    };
    let want = mul(&mul(&bi, &meat), &bi);
    for i in 0..k {
        for j in 0..k {
            assert_relative_eq!(got[i][j], want[i][j], epsilon = 1e-10);
        }
    }
}

#[test]
fn separation_is_reported() {
    let rec = StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Control, vec![0.0], 20.0, 0.0),
            Center::from_counts(Arm::Intervention, vec![1.0], 20.0, 20.0),
        ],
    )
    .unwrap();
    let err = fit_binary(&[rec]).unwrap_err();
    assert!(matches!(err, LagoError::Separation { .. } | LagoError::NoConvergence(_)), "{err:?}");
    assert!(!err.is_validation());
}

#[test]
fn rank_deficient_design_is_reported() {
    // x₂ = 2x₁ everywhere
    let rec = StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Control, vec![0.0, 0.0], 20.0, 8.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 2.0], 20.0, 11.0),
            Center::from_counts(Arm::Intervention, vec![2.0, 4.0], 20.0, 14.0),
        ],
    )
    .unwrap();
    assert_eq!(fit_binary(&[rec]).unwrap_err(), LagoError::RankDeficient);
}

#[test]
fn input_validation() {
    assert!(Center::binary(Arm::Intervention, vec![1.0], &[0.0, 2.0]).unwrap_err().is_validation());
    assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    let bad_control = StageRecord::new(1, vec![Center::from_counts(Arm::Control, vec![1.0], 10.0, 3.0)]);
    assert!(bad_control.unwrap_err().is_validation());
}

#[test]
fn csv_groups_participants_into_centers() {
    let csv = "stage,center,arm,x_1,x_2,y\n\
               1,a,control,0,0,1\n\
               1,a,control,0,0,0\n\
               1,b,intervention,1,4,1\n\
               1,b,intervention,1,4,1\n\
               1,b,intervention,1,4,0\n\
               2,c,1,0.5,3,1\n\
               2,d,0,0,0,0\n";
    let stages = read_stage_csv(csv.as_bytes(), true).unwrap();
    assert_eq!(stages.len(), 2);
    assert_eq!(stages[0].centers.len(), 2);
    let b = &stages[0].centers[1];
    assert_eq!((b.arm, b.n, b.sum), (Arm::Intervention, 3.0, 2.0));
    assert_eq!(b.package, vec![1.0, 4.0]);
    assert_eq!(stages[1].stage, 2);
    assert!(read_stage_csv("stage,center,arm,x_1,y\n1,a,control,0,3\n".as_bytes(), true).is_err());
    assert!(read_stage_csv("stage,arm,y\n1,control,1\n".as_bytes(), true).is_err());
}

proptest! {
    #[test]
    fn logit_inverts_expit(eta in -15.0f64..15.0) {
        prop_assert!((logit(expit(eta)) - eta).abs() < 1e-6 * eta.abs().max(1.0));
    }

    #[test]
    fn logistic_score_vanishes_at_fit(
        s in prop::collection::vec(3u32..37, 4),
    ) {
        let packages = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 4.0], vec![1.0, 4.0]];
        let centers: Vec<Center> = packages
            .iter()
            .zip(&s)
            .map(|(x, &k)| {
                let arm = if x.iter().all(|&v| v == 0.0) { Arm::Control } else { Arm::Intervention };
                Center::from_counts(arm, x.clone(), 40.0, k as f64)
            })
            .collect();
        let fit = fit_binary(&[StageRecord::new(1, centers.clone()).unwrap()]).unwrap();
        let (g, _) = info_at(&centers, &fit.beta);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-7), "{:?}", g);
    }
}
