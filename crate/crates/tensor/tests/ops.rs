use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smae_tensor::{Graph, Tensor, TensorError, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: f64, b: f64) -> f64 {
    // Entries whose gradient is essentially zero are compared absolutely.
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the analytic gradient of `f` with respect to each input against
/// central differences with step `h`. Returns the worst relative error.
fn grad_check(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    h: f64,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[which][e], numeric));
        }
    }
    worst
}

/// Weighted sum so every output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(random(&shape, &mut rng));
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

#[test]
fn matmul_identity_and_zero_row() {
    let mut g = Graph::new();
    let i2 = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let m = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let y = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);

    let a = g.constant(t(&[2, 2], &[1., 0., 0., 0.]));
    let b = g.constant(t(&[2, 1], &[0., 5.]));
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y).data(), &[0., 0.]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g: Graph<f64> = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    match g.matmul(a, b) {
        Err(TensorError::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[3, 3], &mut rng);
    let b = random(&[3, 3], &mut rng);
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.matmul(v[0], v[1]).unwrap();
        g.sum(y).unwrap()
    };
    // sum(A·B) is bilinear, so the central difference is exact up to rounding.
    assert!(grad_check(&[a, b], &f, 1e-5) < 1e-7);
}

#[test]
fn elementwise_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[3, 4], &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let zeros = g.constant(Tensor::zeros_like(&x));
    let ones = g.constant(Tensor::ones_like(&x));
    let a = g.add(xv, zeros).unwrap();
    let m = g.mul(xv, ones).unwrap();
    let s = g.sub(xv, xv).unwrap();
    assert_eq!(g.value(a).data(), x.data());
    assert_eq!(g.value(m).data(), x.data());
    assert!(g.value(s).data().iter().all(|&v| v == 0.0));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[0., 0., 0.]));
    let y = g.softmax(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(t(&[2], &[1000., 0.]));
    let y = g.softmax(x).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.constant(random(&[5, 7], &mut rng));
    let y = g.softmax(x).unwrap();
    for row in g.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn softmax_gradient_on_random_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[4], &mut rng);
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.softmax(v[0]).unwrap();
        weighted_sum(g, y, 11)
    };
    assert!(grad_check(&[x], &f, 1e-5) < 1e-6);
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let gamma = g.constant(Tensor::ones(vec![4]));
    let beta = g.constant(Tensor::zeros(vec![4]));
    let x = g.constant(t(&[1, 4], &[3., 3., 3., 3.]));
    let y = g.layer_norm(x, gamma, beta, 1e-6).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let gamma = g.constant(Tensor::ones(vec![2]));
    let beta = g.constant(Tensor::zeros(vec![2]));
    let x = g.constant(t(&[1, 2], &[1., -1.]));
    let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] + 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_gradient_on_random_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[1, 8], &mut rng);
    let gamma = random(&[8], &mut rng);
    let beta = random(&[8], &mut rng);
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-6).unwrap();
        weighted_sum(g, y, 5)
    };
    assert!(grad_check(&[x, gamma, beta], &f, 1e-5) < 1e-6);
}

#[test]
fn gelu_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[0., 10.]));
    let y = g.gelu(x).unwrap();
    let d = g.value(y).data();
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 10.0).abs() < 1e-6);
}

#[test]
fn gelu_gradient_on_random_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[8], &mut rng);
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.gelu(v[0]).unwrap();
        weighted_sum(g, y, 9)
    };
    assert!(grad_check(&[x], &f, 1e-5) < 1e-6);
}

/// Every differentiable op against finite differences on 100 seeds.
#[test]
fn all_ops_match_finite_differences_on_100_seeds() {
    type Case = (&'static str, Vec<Vec<usize>>, fn(&mut Graph<f64>, &[Var]) -> Var);
    let cases: Vec<Case> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1]).unwrap()),
        ("add", vec![vec![3, 4], vec![4]], |g, v| g.add(v[0], v[1]).unwrap()),
        ("sub", vec![vec![3, 4], vec![3, 4]], |g, v| g.sub(v[0], v[1]).unwrap()),
        ("mul", vec![vec![3, 4], vec![1, 4]], |g, v| g.mul(v[0], v[1]).unwrap()),
        ("scale", vec![vec![5]], |g, v| g.scale(v[0], -1.7).unwrap()),
        ("softmax", vec![vec![3, 5]], |g, v| g.softmax(v[0]).unwrap()),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-6).unwrap()
        }),
        ("gelu", vec![vec![2, 5]], |g, v| g.gelu(v[0]).unwrap()),
        ("transpose", vec![vec![3, 2]], |g, v| g.transpose(v[0]).unwrap()),
        ("gather_rows", vec![vec![4, 3]], |g, v| g.gather_rows(v[0], &[3, 1, 3]).unwrap()),
        ("slice_cols", vec![vec![3, 5]], |g, v| g.slice_cols(v[0], 1, 4).unwrap()),
        ("concat_cols", vec![vec![3, 2], vec![3, 1]], |g, v| g.concat_cols(&[v[0], v[1]]).unwrap()),
        ("reshape", vec![vec![2, 6]], |g, v| g.reshape(v[0], vec![3, 4]).unwrap()),
        ("mean", vec![vec![2, 3]], |g, v| g.mean(v[0]).unwrap()),
    ];
    for (name, shapes, op) in cases {
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            let f = move |g: &mut Graph<f64>, v: &[Var]| {
                let y = op(g, v);
                weighted_sum(g, y, seed)
            };
            worst = worst.max(grad_check(&inputs, &f, 1e-5));
        }
        assert!(worst < 1e-4, "{name}: worst relative error {worst}");
    }
}

proptest! {
    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let c = random(&[n, p], &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }
}
