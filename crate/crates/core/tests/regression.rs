use nalgebra::DMatrix;
use proptest::prelude::*;

use psim_core::regression::ridge_fit;
use psim_core::RffMap;

fn normal_equations(z: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let d = z.ncols();
    let za = z.clone().insert_column(d, 1.0);
    let mut gram = za.transpose() * &za;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    gram.lu().solve(&(za.transpose() * y)).unwrap().transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_matches_dense_solve(
        (n, d, p, zs, ys) in (2usize..30, 1usize..6, 1usize..3).prop_flat_map(|(n, d, p)| (
            Just(n), Just(d), Just(p),
            prop::collection::vec(-3.0f64..3.0, n * d),
            prop::collection::vec(-3.0f64..3.0, n * p),
        )),
        log_lambda in -3.0f64..1.0,
    ) {
        let z = DMatrix::from_row_slice(n, d, &zs);
        let y = DMatrix::from_row_slice(n, p, &ys);
        let lambda = 10f64.powf(log_lambda);
        let model = ridge_fit(&z, &y, lambda).unwrap();
        let reference = normal_equations(&z, &y, lambda);
        prop_assert!((model.weights() - &reference).norm() <= 1e-9 * reference.norm().max(1.0));
    }
}

#[test]
fn ridge_unpenalized_bias_fits_constant_offset() {
    let z = DMatrix::from_fn(20, 2, |i, j| (i * (j + 1)) as f64 * 0.1);
    let y = DMatrix::from_fn(20, 1, |i, _| 1e4 + 2.0 * z[(i, 0)] - z[(i, 1)]);
    let model = ridge_fit(&z, &y, 1e-9).unwrap();
    let w = model.weights();
    assert!((w[(0, 2)] - 1e4).abs() < 1e-4, "{w}");
}

#[test]
fn rff_approximates_gaussian_kernel() {
    let points: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            (0..3)
                .map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.5 - 1.0)
                .collect()
        })
        .collect();
    let sigma = 1.5;
    let map = RffMap::new(3, 4000, sigma, 17).unwrap();
    let feats: Vec<Vec<f64>> = points.iter().map(|x| map.transform(x).unwrap()).collect();
    for i in 0..points.len() {
        for j in 0..points.len() {
            let dot: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum();
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let k = (-d2 / (2.0 * sigma * sigma)).exp();
            assert!((dot - k).abs() <= 0.06, "({i},{j}): {dot} vs {k}");
        }
    }
}

#[test]
fn rff_is_reproducible_from_seed() {
    let a = RffMap::new(4, 64, 1.0, 3).unwrap();
    let b = RffMap::new(4, 64, 1.0, 3).unwrap();
    let c = RffMap::new(4, 64, 1.0, 4).unwrap();
    let x = [0.1, -0.2, 0.3, 0.4];
    assert_eq!(a.transform(&x).unwrap(), b.transform(&x).unwrap());
    assert_ne!(a.transform(&x).unwrap(), c.transform(&x).unwrap());
}
