use std::sync::Arc;

use rand::Rng;

use super::*;
use crate::rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn sum_of_squares() -> Graph<f64> {
    let mut g = GraphBuilder::new();
    let x = g.input("x", [2]);
    let sq = g.mul(x, x).unwrap();
    let y = g.sum(sq);
    g.output("y", y);
    g.build()
}

#[test]
fn identity_graph() {
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", [2]);
    g.output("y", x);
    let out = g.build().evaluate(&[("x", &t(&[2], &[1.0, 2.0]))]).unwrap();
    assert_eq!(out["y"].data(), &[1.0, 2.0]);
}

#[test]
fn sum_of_squares_value_and_gradient() {
    let g = sum_of_squares();
    let x = t(&[2], &[3.0, 4.0]);
    assert_eq!(g.evaluate_output(&[("x", &x)], "y").unwrap().item(), 25.0);
    assert_eq!(
        g.gradient(&[("x", &x)], "x", "y").unwrap().data(),
        &[6.0, 8.0]
    );
}

#[test]
fn constant_output_has_zero_gradient() {
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", [3]);
    let c = g.constant(Tensor::scalar(4.0));
    g.output("x", x);
    g.output("c", c);
    let g = g.build();
    let grad = g
        .gradient(&[("x", &t(&[3], &[1.0, 2.0, 3.0]))], "x", "c")
        .unwrap();
    assert_eq!(grad.data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn random_graph_matches_straight_line_recomputation() {
    let mut r = rng::stream(11, "diffmath.random-graph");
    for _ in 0..50 {
        let (a, b, c): (f64, f64, f64) = (r.random(), r.random(), r.random());
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut g = GraphBuilder::new();
        let xi = g.input("x", [4]);
        let n1 = g.scale(xi, a);
        let n2 = g.offset(n1, b);
        let n3 = g.mul(n2, xi).unwrap();
        let n4 = g.unary(n3, UnaryFn::Exp);
        let n5 = g.sum(n4);
        let n6 = g.scale(n5, c);
        g.output("y", n6);
        let got = g
            .build()
            .evaluate_output(&[("x", &t(&[4], &x))], "y")
            .unwrap()
            .item();
        let expected = c * x.iter().map(|&v| ((a * v + b) * v).exp()).sum::<f64>();
        assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn finite_differences_exact_for_linear_graph() {
    let mut g = GraphBuilder::new();
    let x = g.input("x", [3]);
    let y = g.scale(x, 2.0);
    let y = g.sum(y);
    g.output("y", y);
    let g = g.build();
    let x = t(&[3], &[0.3, -1.0, 7.0]);
    for step in [1e-3, 1e-5, 0.5] {
        assert!(finite_diff_check(&g, &[("x", &x)], "x", "y", step).unwrap() < 1e-10);
    }
}

#[test]
fn finite_differences_for_cubes() {
    let mut r = rng::stream(3, "diffmath.cubes");
    let mut g = GraphBuilder::new();
    let x = g.input("x", [10]);
    let y = g.power(x, 3.0);
    let y = g.sum(y);
    g.output("y", y);
    let g = g.build();
    let x = Tensor::from_fn([10], |_| r.random_range(0.1..1.0));
    assert!(finite_diff_check(&g, &[("x", &x)], "x", "y", 1e-5).unwrap() < 1e-4);
}

#[test]
fn clamp_interior_points_pass_finite_differences() {
    let mut g = GraphBuilder::new();
    let x = g.input("x", [4]);
    let c = g.clamp(x, 0.0, 1.0);
    let y = g.mul(c, c).unwrap();
    let y = g.sum(y);
    g.output("y", y);
    let g = g.build();
    let x = t(&[4], &[-0.3, 0.2, 0.7, 1.4]);
    assert!(finite_diff_check(&g, &[("x", &x)], "x", "y", 1e-5).unwrap() < 1e-4);
    let grad = g.gradient(&[("x", &x)], "x", "y").unwrap();
    assert_eq!(grad.data()[0], 0.0);
    assert_eq!(grad.data()[3], 0.0);
}

#[test]
fn kink_conventions() {
    let mut g = GraphBuilder::new();
    let x = g.input("x", [3]);
    let r = g.relu(x);
    let c = g.clamp(x, 0.0, 1.0);
    let rs = g.sum(r);
    let cs = g.sum(c);
    g.output("relu", rs);
    g.output("clamp", cs);
    let g = g.build();
    let x = t(&[3], &[0.0, 1.0, -1.0]);
    assert_eq!(
        g.gradient(&[("x", &x)], "x", "relu").unwrap().data(),
        &[1.0, 1.0, 0.0]
    );
    assert_eq!(
        g.gradient(&[("x", &x)], "x", "clamp").unwrap().data(),
        &[1.0, 1.0, 0.0]
    );
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut r = rng::stream(2024, "diffmath.primitives");
    for case in primitive_cases() {
        let worst = check_primitive(&case, &mut r, 100, 1e-5).unwrap();
        assert!(worst < 1e-4, "{} worst relative error {worst:e}", case.name);
    }
}

#[test]
fn backward_pass_is_linear() {
    let mut r = rng::stream(5, "diffmath.linearity");
    for _ in 0..20 {
        let (alpha, beta) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let build = |combine: Option<(f64, f64)>, which: usize| {
            let mut g = GraphBuilder::new();
            let x = g.input("x", [5]);
            let sq = g.mul(x, x).unwrap();
            let f = g.sum(sq);
            let e = g.unary(x, UnaryFn::Exp);
            let gg = g.mean(e);
            let out = match combine {
                Some((a, b)) => {
                    let fa = g.scale(f, a);
                    let gb = g.scale(gg, b);
                    g.add(fa, gb).unwrap()
                }
                None => [f, gg][which],
            };
            g.output("y", out);
            g.build()
        };
        let x = Tensor::from_fn([5], |_| r.random_range(-1.0..1.0));
        let b = [("x", &x)];
        let gc = build(Some((alpha, beta)), 0)
            .gradient(&b, "x", "y")
            .unwrap();
        let gf = build(None, 0).gradient(&b, "x", "y").unwrap();
        let gg = build(None, 1).gradient(&b, "x", "y").unwrap();
        for i in 0..5 {
            let expected = alpha * gf.data()[i] + beta * gg.data()[i];
            assert!(relative_error(gc.data()[i], expected) < 1e-12);
        }
    }
}

#[test]
fn evaluation_is_deterministic_and_does_not_mutate_inputs() {
    let mut r = rng::stream(9, "diffmath.determinism");
    let case = &primitive_cases()[15];
    let (g, x) = (case.build)(&mut r);
    let before = x.clone();
    let a = g.evaluate(&[("x", &x)]).unwrap();
    let b = g.evaluate(&[("x", &x)]).unwrap();
    assert_eq!(a["y"].item().to_bits(), b["y"].item().to_bits());
    assert_eq!(x, before);
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = GraphBuilder::<f64>::new();
    let a = g.input("a", [2]);
    let b = g.input("b", [3]);
    match g.add(a, b) {
        Err(GraphError::ShapeMismatch { node, .. }) => assert!(node.contains("add")),
        other => panic!("unexpected {other:?}"),
    }
    let g = sum_of_squares();
    let err = g
        .evaluate(&[("x", &t(&[3], &[1.0, 2.0, 3.0]))])
        .unwrap_err();
    assert!(matches!(err, GraphError::InputShape { .. }));
    assert!(matches!(
        g.evaluate(&[]).unwrap_err(),
        GraphError::MissingInput(_)
    ));
}

#[test]
fn non_finite_values_are_reported_with_node() {
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", [2]);
    let l = g.unary(x, UnaryFn::Log);
    g.label(l, "log-of-input");
    let y = g.sum(l);
    g.output("y", y);
    let err = g
        .build()
        .evaluate(&[("x", &t(&[2], &[1.0, -1.0]))])
        .unwrap_err();
    match err {
        GraphError::NonFinite { node } => assert!(node.contains("log-of-input"), "{node}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn gradient_argument_errors() {
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", [2]);
    let sq = g.mul(x, x).unwrap();
    g.output("vec", sq);
    let s = g.sum(sq);
    g.output("y", s);
    let g = g.build();
    let x = t(&[2], &[1.0, 2.0]);
    assert!(matches!(
        g.gradient(&[("x", &x)], "x", "vec").unwrap_err(),
        GraphError::NotScalar { .. }
    ));
    assert!(matches!(
        g.gradient(&[("x", &x)], "z", "y").unwrap_err(),
        GraphError::UnknownInput(_)
    ));
}

#[test]
fn sparse_and_bilinear_identity_are_exact() {
    let m = Arc::new(CsrMatrix::from_rows(
        4,
        &[
            vec![(0, 1.0)],
            vec![(1, 1.0)],
            vec![(2, 1.0)],
            vec![(3, 1.0)],
        ],
    ));
    let coords = (0..4).map(|i| ((i / 2) as f64, (i % 2) as f64)).collect();
    let grid = Arc::new(SampleGrid {
        height: 2,
        width: 2,
        coords,
        fill: 0.5,
    });
    let mut g = GraphBuilder::new();
    let x = g.input("x", [2, 2, 3]);
    let s = g.sparse_matvec(x, m, [2, 2, 3]).unwrap();
    let b = g.bilinear_sample(x, grid).unwrap();
    g.output("s", s);
    g.output("b", b);
    let x = Tensor::from_fn([2, 2, 3], |i| (i as f64).sqrt() / 7.0);
    let out = g.build().evaluate(&[("x", &x)]).unwrap();
    assert_eq!(out["s"], x);
    assert_eq!(out["b"], x);
}

#[test]
fn single_precision_graphs_work() {
    let mut g = GraphBuilder::<f32>::new();
    let x = g.input("x", [2]);
    let sq = g.mul(x, x).unwrap();
    let y = g.sum(sq);
    g.output("y", y);
    let x = Tensor::<f32>::from_f64([2], &[3.0, 4.0]).unwrap();
    assert_eq!(
        g.build().gradient(&[("x", &x)], "x", "y").unwrap().data(),
        &[6.0f32, 8.0]
    );
}

#[test]
fn probes_detect_kink_crossings() {
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", [2]);
    let r = g.relu(x);
    let y = g.sum(r);
    g.output("y", y);
    let graph = g.build();
    let near = t(&[2], &[1e-6, 0.5]);
    let far = t(&[2], &[0.3, -0.5]);
    assert!(probes_cross_kink(&graph, &[("x", &near)], "x", "y", 1e-5).unwrap());
    assert!(!probes_cross_kink(&graph, &[("x", &far)], "x", "y", 1e-5).unwrap());
}

#[test]
fn max_pool_pattern_follows_the_winner() {
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", [2, 2, 1]);
    let m = g.maxpool2(x).unwrap();
    let y = g.sum(m);
    g.output("y", y);
    let graph = g.build();
    let pattern = |v: &[f64]| {
        graph
            .kink_pattern(&[("x", &t(&[2, 2, 1], v))], "y")
            .unwrap()
    };
    assert_eq!(pattern(&[0.0, 1.0, 2.0, 3.0]), vec![3]);
    assert_eq!(pattern(&[5.0, 1.0, 2.0, 3.0]), vec![0]);
    assert_eq!(pattern(&[0.0, 4.0, 2.0, 3.0]), vec![1]);
}

mod properties {
    use proptest::collection::vec;
    use proptest::prelude::*;
    use proptest::sample::Index;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tensor_length_must_match_shape(dims in vec(1usize..5, 0..4), extra in 1usize..3) {
            let n: usize = dims.iter().product();
            prop_assert!(Tensor::<f64>::new(dims.clone(), vec![0.0; n]).is_ok());
            prop_assert!(Tensor::<f64>::new(dims.clone(), vec![0.0; n + extra]).is_err());
            prop_assert!(Tensor::<f64>::new(dims, vec![0.0; n - 1]).is_err());
        }

        #[test]
        fn random_graphs_are_ordered_and_finite(
            ops in vec((0u8..6, any::<Index>(), any::<Index>()), 1..24),
            x in vec(-2.0f64..2.0, 3),
        ) {
            let mut g = GraphBuilder::<f64>::new();
            let mut nodes = vec![g.input("x", [3])];
            for (op, a, b) in ops {
                let (a, b) = (*a.get(&nodes), *b.get(&nodes));
                let n = match op {
                    0 => g.add(a, b).unwrap(),
                    1 => g.sub(a, b).unwrap(),
                    2 => {
                        let m = g.mul(a, b).unwrap();
                        g.clamp(m, -2.0, 2.0)
                    }
                    3 => g.relu(a),
                    4 => g.scale(a, 0.5),
                    _ => g.log_softmax(a).unwrap(),
                };
                nodes.push(n);
            }
            let y = g.sum(*nodes.last().unwrap());
            g.output("y", y);
            let graph = g.build();
            for (i, node) in graph.nodes().iter().enumerate() {
                prop_assert!(node.op.parents().iter().all(|p| p.index() < i));
            }
            let x = Tensor::new([3], x).unwrap();
            let (value, grads) = graph.value_and_gradients(&[("x", &x)], &["x"], "y").unwrap();
            prop_assert!(value.is_finite());
            prop_assert!(grads[0].data().iter().all(|v| v.is_finite()));
        }
    }
}
