use cbrnet_core::autodiff::Tape;
use cbrnet_core::ipm::{self, Bandwidth, IpmKind};
use cbrnet_core::matrix::pairwise_sq_dist;
use cbrnet_core::rng::Rng;
use cbrnet_core::Matrix;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

fn gaussian(n: usize, dim: usize, mean: &[f64], sd: f64, rng: &mut Rng) -> Matrix {
    let data = (0..n * dim)
        .map(|k| mean[k % dim] + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(n, dim, data).unwrap()
}

/// Exact optimal transport between equal-size uniform samples by
/// enumerating every assignment.
fn brute_force_ot(cost: &Matrix) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, cost: &Matrix, best: &mut f64) {
        let n = perm.len();
        if k == n {
            let c: f64 = (0..n).map(|i| cost[(i, perm[i])]).sum();
            *best = best.min(c / n as f64);
            return;
        }
        for j in k..n {
            perm.swap(k, j);
            permute(k + 1, perm, cost, best);
            perm.swap(k, j);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..cost.rows()).collect(), cost, &mut best);
    best
}

#[test]
fn sinkhorn_matches_assignment_oracle() {
    let a = Matrix::column(&[0.0, 1.0]);
    let b = Matrix::column(&[0.5, 1.5]);
    let cost = pairwise_sq_dist(&a, &b).unwrap();
    let exact = brute_force_ot(&cost.map(|c| c / cost.max()));
    let kind = IpmKind::Wasserstein {
        epsilon: 0.01,
        iterations: 200,
    };
    let got = ipm::ipm_value(&kind, &a, &b).unwrap();
    assert!((got - exact).abs() <= 0.1 * exact, "{got} vs {exact}");
}

#[test]
fn sinkhorn_on_identical_samples() {
    // separated support at the default epsilon
    let two = Matrix::column(&[0.0, 1.0]);
    let v = ipm::ipm_value(&IpmKind::sinkhorn_default(), &two, &two).unwrap();
    assert!((0.0..=1e-3).contains(&v), "{v}");

    // dense samples: entropic bias shrinks with epsilon
    let mut rng = Rng::seed_from_u64(3);
    let g = gaussian(30, 2, &[0.0, 0.0], 1.0, &mut rng);
    let mut last = f64::INFINITY;
    for epsilon in [0.1, 0.01, 0.001] {
        let kind = IpmKind::Wasserstein {
            epsilon,
            iterations: 500,
        };
        let v = ipm::ipm_value(&kind, &g, &g).unwrap();
        assert!(v >= 0.0 && v < last, "{epsilon}: {v}");
        last = v;
    }
    assert!(last <= 1e-3, "{last}");
    let far = ipm::ipm_value(&IpmKind::sinkhorn_default(), &g, &g.map(|v| v + 3.0)).unwrap();
    assert!(far > ipm::ipm_value(&IpmKind::sinkhorn_default(), &g, &g).unwrap());
}

#[test]
fn sinkhorn_rejects_tiny_epsilon_gracefully() {
    let a = Matrix::column(&[0.0, 1.0, 2.0]);
    let b = Matrix::column(&[5.0, 6.0]);
    let kind = IpmKind::Wasserstein {
        epsilon: 1e-5,
        iterations: 50,
    };
    match ipm::ipm_value(&kind, &a, &b) {
        Ok(v) => assert!(v.is_finite()),
        Err(e) => assert!(e.to_string().contains("larger epsilon")),
    }
}

#[test]
fn rbf_far_apart_gaussians() {
    // unit-variance samples whose means are far apart relative to the
    // kernel width: cross terms vanish, self terms stay near one
    let mut rng = Rng::seed_from_u64(5);
    let sigma = 1.0;
    let a = gaussian(500, 1, &[0.0], 0.1 * sigma, &mut rng);
    let b = gaussian(500, 1, &[10.0 * sigma], 0.1 * sigma, &mut rng);
    let kind = IpmKind::MmdRbf {
        bandwidth: Bandwidth::Fixed(sigma),
    };
    let v = ipm::ipm_value(&kind, &a, &b).unwrap();
    assert!((v - 2.0).abs() <= 0.2, "{v}");
}

#[test]
fn linear_mmd_hand_value() {
    let v = ipm::ipm_value(&IpmKind::MmdLinear, &Matrix::from_rows(&[[0.0, 0.0]]), &Matrix::from_rows(&[[3.0, 4.0]]))
        .unwrap();
    assert_eq!(v, 25.0);
}

#[test]
fn balance_loss_three_clusters() {
    let mut rng = Rng::seed_from_u64(9);
    let per = 300;
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (c, mx) in [0.0, 1.0, 2.0].iter().enumerate() {
        let g = gaussian(per, 2, &[*mx, 0.0], 0.3, &mut rng);
        rows.extend(g.row_iter().map(|r| r.to_vec()));
        ids.extend(std::iter::repeat(c).take(per));
    }
    let mut t = Tape::new();
    let reps = t.constant(Matrix::from_rows(&rows));
    let loss = ipm::cluster_balance_loss(&mut t, reps, &ids, &IpmKind::MmdLinear, 2).unwrap();
    let v = t.value(loss).item();
    assert!((v - 2.5).abs() <= 0.15 * 2.5, "{v}");
}

#[test]
fn balance_loss_degenerate_and_identical() {
    let mut rng = Rng::seed_from_u64(10);
    let g = gaussian(20, 3, &[0.0, 0.0, 0.0], 1.0, &mut rng);
    let mut t = Tape::new();
    let reps = t.constant(g.clone());
    let one = ipm::cluster_balance_loss(&mut t, reps, &[4; 20], &IpmKind::rbf_median(), 4).unwrap();
    assert_eq!(t.value(one).item(), 0.0);

    // two clusters holding the same rows
    let rows: Vec<&[f64]> = g.row_iter().chain(g.row_iter()).collect();
    let both = t.constant(Matrix::from_rows(&rows));
    let ids: Vec<usize> = (0..40).map(|i| i / 20).collect();
    for kind in [IpmKind::MmdLinear, IpmKind::rbf_median()] {
        let l = ipm::cluster_balance_loss(&mut t, both, &ids, &kind, 0).unwrap();
        assert!(t.value(l).item().abs() <= 1e-12);
    }
}

#[test]
fn symmetric_exactly() {
    let mut rng = Rng::seed_from_u64(11);
    let a = gaussian(17, 4, &[0.0; 4], 1.0, &mut rng);
    let b = gaussian(23, 4, &[0.5; 4], 2.0, &mut rng);
    for kind in [IpmKind::MmdLinear, IpmKind::rbf_median()] {
        assert_eq!(
            ipm::ipm_value(&kind, &a, &b).unwrap(),
            ipm::ipm_value(&kind, &b, &a).unwrap()
        );
    }
}
