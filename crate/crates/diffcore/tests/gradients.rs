use diffcore::gradcheck::{analytic_gradients, GradCheckOptions};
use diffcore::{grad_check, Activation, Graph, Mlp, MlpSpec, OutputActivation, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check<F>(f: F, params: &[Tensor], tol: f64, seed: u64)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = grad_check(&f, params, GradCheckOptions::default(), &mut rng).unwrap();
    assert!(report.max_rel_error < tol, "max rel error {:?}", report.worst);
}

fn rand_t(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

/// Reduces any matrix to a scalar with a fixed random projection so that
/// every output coordinate carries a distinct weight.
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(v).dims2();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::uniform(r, c, 1.0, &mut rng));
    let m = g.mul(v, w)?;
    Ok(g.sum(m))
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_t(3, 4, &mut rng);
    let b = rand_t(4, 2, &mut rng);
    let c = rand_t(3, 4, &mut rng);
    let bias = rand_t(1, 4, &mut rng);
    let col = Tensor::matrix(3, 1, vec![0.7, -1.3, 2.1]).unwrap();
    let pos = Tensor::matrix(3, 4, (0..12).map(|i| 0.05 + 0.08 * i as f64).collect()).unwrap();

    type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
    let cases: Vec<(&str, Case, Vec<Tensor>)> = vec![
        ("matmul", Box::new(|g, p| { let y = g.matmul(p[0], p[1])?; project(g, y, 1) }), vec![a.clone(), b.clone()]),
        ("add_row", Box::new(|g, p| { let y = g.add_row(p[0], p[1])?; project(g, y, 2) }), vec![a.clone(), bias.clone()]),
        ("add", Box::new(|g, p| { let y = g.add(p[0], p[1])?; project(g, y, 3) }), vec![a.clone(), c.clone()]),
        ("sub", Box::new(|g, p| { let y = g.sub(p[0], p[1])?; project(g, y, 4) }), vec![a.clone(), c.clone()]),
        ("mul", Box::new(|g, p| { let y = g.mul(p[0], p[1])?; project(g, y, 5) }), vec![a.clone(), c.clone()]),
        ("mul_col", Box::new(|g, p| { let y = g.mul_col(p[0], p[1])?; project(g, y, 6) }), vec![a.clone(), col.clone()]),
        ("div_col", Box::new(|g, p| { let y = g.div_col(p[0], p[1])?; project(g, y, 7) }), vec![a.clone(), col.clone()]),
        ("scale", Box::new(|g, p| { let y = g.scale(p[0], -2.5); project(g, y, 8) }), vec![a.clone()]),
        ("add_scalar", Box::new(|g, p| { let y = g.add_scalar(p[0], 0.3); project(g, y, 9) }), vec![a.clone()]),
        ("tanh", Box::new(|g, p| { let y = g.tanh(p[0]); project(g, y, 10) }), vec![a.clone()]),
        ("relu", Box::new(|g, p| { let y = g.relu(p[0]); project(g, y, 11) }), vec![a.clone()]),
        ("sigmoid", Box::new(|g, p| { let y = g.sigmoid(p[0]); project(g, y, 12) }), vec![a.clone()]),
        ("exp", Box::new(|g, p| { let y = g.exp(p[0]); project(g, y, 13) }), vec![a.clone()]),
        ("clamp", Box::new(|g, p| { let y = g.clamp(p[0], -0.5, 0.5); project(g, y, 14) }), vec![a.clone()]),
        ("xlogx", Box::new(|g, p| { let y = g.xlogx(p[0]); project(g, y, 15) }), vec![pos.clone()]),
        ("square", Box::new(|g, p| { let y = g.square(p[0]); project(g, y, 16) }), vec![a.clone()]),
        ("softmax", Box::new(|g, p| { let y = g.softmax(p[0])?; project(g, y, 17) }), vec![a.clone()]),
        ("mean", Box::new(|g, p| { let y = g.square(p[0]); Ok(g.mean(y)) }), vec![a.clone()]),
        ("row_sum", Box::new(|g, p| { let y = g.row_sum(p[0])?; project(g, y, 18) }), vec![a.clone()]),
        ("segment_sum", Box::new(|g, p| { let y = g.segment_sum(p[0], 2)?; project(g, y, 19) }), vec![rand_t(6, 3, &mut ChaCha8Rng::seed_from_u64(99))]),
        ("gather_rows", Box::new(|g, p| { let y = g.gather_rows(p[0], vec![2, 0, 2, 1])?; project(g, y, 20) }), vec![a.clone()]),
        ("pick_cols", Box::new(|g, p| { let y = g.pick_cols(p[0], vec![3, 0, 2])?; project(g, y, 21) }), vec![a.clone()]),
        ("reshape", Box::new(|g, p| { let y = g.reshape(p[0], 2, 6)?; project(g, y, 22) }), vec![a.clone()]),
        ("concat_cols", Box::new(|g, p| { let y = g.concat_cols(&[p[0], p[1]])?; project(g, y, 23) }), vec![a.clone(), col.clone()]),
        ("concat_rows", Box::new(|g, p| { let y = g.concat_rows(&[p[0], p[1]])?; project(g, y, 24) }), vec![a.clone(), bias.clone()]),
    ];
    for (name, f, params) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = grad_check(&f, &params, GradCheckOptions::default(), &mut rng).unwrap();
        assert!(report.max_rel_error < 1e-4, "{name}: {:?}", report.worst);
    }
}

fn mlp_loss(spec: MlpSpec, x: Tensor) -> impl Fn(&mut Graph, &[Var]) -> Result<Var> {
    move |g, p| {
        let xi = g.constant(x.clone());
        let y = diffcore::mlp_forward(g, &spec, p, xi)?;
        let sq = g.square(y);
        Ok(g.mean(sq))
    }
}

#[test]
fn three_layer_tanh_mlp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = MlpSpec::new(vec![5, 8, 6, 3], Activation::Tanh, OutputActivation::None).unwrap();
    let mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
    let mut params = mlp.params.clone();
    // Non-zero biases so their gradients are exercised away from the origin.
    for p in params.iter_mut().skip(1).step_by(2) {
        p.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    let x = Tensor::uniform(7, 5, 1.0, &mut rng);
    check(mlp_loss(spec, x), &params, 1e-4, 1);
}

#[test]
fn softmax_and_sigmoid_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for out in [OutputActivation::Softmax, OutputActivation::Sigmoid, OutputActivation::Tanh] {
        let spec = MlpSpec::new(vec![4, 6, 3], Activation::Tanh, out).unwrap();
        let mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
        let x = Tensor::uniform(5, 4, 1.0, &mut rng);
        check(mlp_loss(spec, x), &mlp.params, 1e-4, 2);
    }
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let spec = MlpSpec::new(vec![6, 16, 16, 2], Activation::Relu, OutputActivation::None).unwrap();
        let mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
        let x = Tensor::uniform(9, 6, 1.0, &mut rng);
        let f = mlp_loss(spec, x.clone());
        let grads = analytic_gradients(&f, &mlp.params).unwrap();
        let out = mlp.eval(&x).unwrap();
        (out, grads)
    };
    let (o1, g1) = run();
    let (o2, g2) = run();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&o1), bits(&o2));
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(bits(a), bits(b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_relu_mlp_gradients(seed in 0u64..10_000, rows in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::new(vec![3, 7, 4, 2], Activation::Relu, OutputActivation::None).unwrap();
        let mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
        let x = Tensor::uniform(rows, 3, 1.0, &mut rng);
        // Finite differences are meaningless when a hidden pre-activation
        // sits next to the ReLU kink, so such draws are discarded.
        for depth in [2usize, 3] {
            let sub = MlpSpec::new(spec.layer_widths[..depth].to_vec(), Activation::Relu, OutputActivation::None).unwrap();
            let pre = Mlp::from_params(sub, mlp.params[..2 * (depth - 1)].to_vec()).unwrap().eval(&x).unwrap();
            prop_assume!(pre.data().iter().all(|v| v.abs() > 1e-3));
        }
        let f = mlp_loss(spec, x);
        let report = grad_check(&f, &mlp.params, GradCheckOptions::default(), &mut rng).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report.worst);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..10_000, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let a = g.constant(Tensor::uniform(4, 5, scale, &mut rng));
        let s = g.softmax(a).unwrap();
        for r in 0..4 {
            let row = g.value(s).row_slice(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
