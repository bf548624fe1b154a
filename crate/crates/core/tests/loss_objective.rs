use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use privpred::loss::{
    erm_objective, mc_logistic_grad, mc_logistic_hessian, mc_logistic_loss, perturbed_objective, softmax,
};
use privpred::noise::RngStream;
use privpred::trainer::predict_logits;
use privpred::{Dataset64, LabelOneHot, LogitVector, Matrix64, ParamMatrix64};

/// `lse(a) − a_y` at 50 significant digits, inputs read as decimal literals.
const HIGH_PRECISION: [([f64; 5], usize, f64); 8] = [
    ([-2.857, 3.586, 25.453, -2.061, 0.47], 4, 24.983000000334384327),
    ([-18.606, 18.234, -1.454, 6.838, -18.83], 3, 11.396011243109116264),
    ([-11.796, -24.56, 18.579, 11.606, -27.487], 3, 6.9739363996124005156),
    ([27.885, 9.235, 6.934, -20.55, -29.1], 4, 56.985000008747082495),
    ([-26.21, -27.861, 22.774, 5.977, 16.687], 2, 0.0022696883708703447361),
    ([-3.568, 20.546, 1.147, 8.418, -0.014], 0, 24.114005410961819858),
    ([-2.56, -13.31, 29.859, 29.741, 20.413], 2, 0.63592850126387278982),
    ([-11.083, -16.22, -12.658, -25.787, 15.977], 3, 41.764000000002146893),
];

#[test]
fn loss_matches_extended_precision() {
    for (a, y, want) in HIGH_PRECISION {
        let got = mc_logistic_loss(&LogitVector::new(a.to_vec()).unwrap(), &LabelOneHot::new(y, 5).unwrap()).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-10);
    }
}

fn random_data(rng: &mut RngStream, n: usize, d: usize, c: usize) -> Dataset64 {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt() / rng.gen::<f64>();
            v.into_iter().map(|x| x / r).collect()
        })
        .collect();
    let y = (0..n).map(|_| rng.gen_range(0..c)).collect();
    Dataset64::new(Matrix64::from_rows(&rows).unwrap(), y, c).unwrap()
}

fn random_params(rng: &mut RngStream, d: usize, c: usize, scale: f64) -> ParamMatrix64 {
    ParamMatrix64::from_matrix(Matrix64::from_fn(d, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))).unwrap()
}

/// Worst relative error between an analytic gradient and central differences.
fn fd_error(f: impl Fn(&ParamMatrix64) -> (f64, ParamMatrix64), theta: &ParamMatrix64) -> f64 {
    let h = 1e-6;
    let (_, g) = f(theta);
    let mut fd = g.matrix().clone();
    for i in 0..fd.as_slice().len() {
        let mut hi = theta.clone();
        let mut lo = theta.clone();
        hi.matrix_mut().as_mut_slice()[i] += h;
        lo.matrix_mut().as_mut_slice()[i] -= h;
        fd.as_mut_slice()[i] = (f(&hi).0 - f(&lo).0) / (2.0 * h);
    }
    fd.sub(g.matrix()).frobenius() / g.matrix().frobenius()
}

#[test]
fn erm_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(21, 0);
    for _ in 0..20 {
        let data = random_data(&mut rng, 30, 4, 3);
        let theta = random_params(&mut rng, 4, 3, 1.0);
        let lambda = rng.gen_range(0.0..1.0);
        let err = fd_error(|t| erm_objective(t, &data, lambda).unwrap(), &theta);
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn perturbed_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(22, 0);
    for _ in 0..20 {
        let data = random_data(&mut rng, 25, 3, 4);
        let theta = random_params(&mut rng, 3, 4, 1.0);
        let noise = random_params(&mut rng, 3, 4, 5.0);
        let err = fd_error(|t| perturbed_objective(t, &data, 2.0, &noise, 0.7).unwrap(), &theta);
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn objective_reductions() {
    let mut rng = RngStream::new(23, 0);
    let data = random_data(&mut rng, 40, 5, 4);
    let zero = ParamMatrix64::zeros(5, 4);
    let (j, _) = erm_objective(&zero, &data, 0.3).unwrap();
    assert_relative_eq!(j, 4f64.ln(), max_relative = 1e-14);
    let (jp, _) = perturbed_objective(&zero, &data, 0.3, &random_params(&mut rng, 5, 4, 3.0), 2.0).unwrap();
    assert_relative_eq!(jp, 4f64.ln(), max_relative = 1e-14);

    let theta = random_params(&mut rng, 5, 4, 1.0);
    let lambda = 0.05;
    let (a, ga) = erm_objective(&theta, &data, lambda).unwrap();
    let (b, gb) = perturbed_objective(&theta, &data, lambda * 40.0, &zero, 0.0).unwrap();
    assert_relative_eq!(a, b, max_relative = 1e-13);
    assert!(ga.matrix().sub(gb.matrix()).frobenius() < 1e-13);

    // the regularizer dominates for huge λ
    let (_, g) = erm_objective(&theta, &data, 1e8).unwrap();
    let mut reg = theta.matrix().clone();
    reg.scale(1e8);
    assert!(g.matrix().sub(&reg).frobenius() / reg.frobenius() < 1e-7);
}

#[test]
fn logits_match_naive_loops() {
    let mut rng = RngStream::new(24, 0);
    for _ in 0..50 {
        let (d, c) = (rng.gen_range(1..12), rng.gen_range(2..8));
        let theta = random_params(&mut rng, d, c, 2.0);
        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        x.iter_mut().for_each(|v| *v /= r);
        let got = predict_logits(&theta, &x).unwrap();
        for k in 0..c {
            let mut want = 0.0;
            for i in 0..d {
                want += theta.matrix()[(i, k)] * x[i];
            }
            assert!((got.0[k] - want).abs() < 1e-12);
        }
    }
}

fn logits_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..12).prop_flat_map(|c| (prop::collection::vec(-500.0f64..500.0, c), 0..c))
}

proptest! {
    #[test]
    fn softmax_is_a_distribution((a, _) in logits_strategy(), shift in -1e3f64..1e3) {
        let p = softmax(&LogitVector::new(a.clone()).unwrap()).unwrap();
        let s: f64 = p.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let q = softmax(&LogitVector::new(a.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        for (x, y) in p.as_slice().iter().zip(q.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_gradient_and_hessian_bounds((a, y) in logits_strategy()) {
        let c = a.len();
        let a = LogitVector::new(a).unwrap();
        let label = LabelOneHot::new(y, c).unwrap();
        prop_assert!(mc_logistic_loss(&a, &label).unwrap() >= 0.0);
        let g = mc_logistic_grad(&a, &label).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        prop_assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 2f64.sqrt() + 1e-12);
        let h = mc_logistic_hessian(&a).unwrap();
        for i in 0..c {
            let row: f64 = (0..c).map(|j| h[(i, j)]).sum();
            prop_assert!(row.abs() < 1e-12);
            // Gershgorin: every eigenvalue is at most max_i 2·p_i(1 − p_i) ≤ ½
            prop_assert!(2.0 * h[(i, i)] <= 0.5 + 1e-12);
        }
    }
}
