use numcore::{BatchNormMode, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..5, 1usize..12).prop_flat_map(|(r, k)| tensor(vec![r, k]))) {
        let tape = Tape::<f32>::no_grad();
        let y = tape.softmax(&tape.constant(x.cast())).unwrap();
        let k = x.shape()[1];
        for row in y.data().chunks(k) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn relu_pair_is_abs(x in (1usize..6, 1usize..9).prop_flat_map(|(a, b)| tensor(vec![a, b]))) {
        let tape = Tape::<f64>::no_grad();
        let v = tape.constant(x.clone());
        let neg = tape.scale(&v, -1.0);
        let s = tape.add(&tape.relu(&v), &tape.relu(&neg)).unwrap();
        for (a, b) in s.data().iter().zip(x.data()) {
            prop_assert_eq!(*a, b.abs());
        }
    }

    #[test]
    fn conv_is_linear_in_input(
        (x, y, w) in (1usize..3, 1usize..3, 3usize..7, 3usize..7).prop_flat_map(|(n, c, h, wd)| {
            (tensor(vec![n, c, h, wd]), tensor(vec![n, c, h, wd]), tensor(vec![2, c, 3, 3]))
        }),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let tape = Tape::<f64>::no_grad();
        let w = tape.constant(w);
        let (xv, yv) = (tape.constant(x), tape.constant(y));
        let mix = tape.add(&tape.scale(&xv, a), &tape.scale(&yv, b)).unwrap();
        let lhs = tape.conv2d(&mix, &w, None, stride, pad).unwrap();
        let cx = tape.conv2d(&xv, &w, None, stride, pad).unwrap();
        let cy = tape.conv2d(&yv, &w, None, stride, pad).unwrap();
        let rhs = tape.add(&tape.scale(&cx, a), &tape.scale(&cy, b)).unwrap();
        prop_assert!(lhs.value().max_abs_diff(rhs.value()) < 1e-5);
    }

    #[test]
    fn backward_of_sum_is_sum_of_backwards(x in (1usize..4, 2usize..6).prop_flat_map(|(a, b)| tensor(vec![a, b]))) {
        let f1 = |t: &Tape<f64>, v: &numcore::Var<f64>| t.sum(&t.square(v));
        let f2 = |t: &Tape<f64>, v: &numcore::Var<f64>| t.mean(&t.gelu(v));
        let grad = |both: bool, first: bool| {
            let tape = Tape::new();
            let v = tape.leaf(x.clone(), true);
            let loss = if both {
                tape.add(&f1(&tape, &v), &f2(&tape, &v)).unwrap()
            } else if first {
                f1(&tape, &v)
            } else {
                f2(&tape, &v)
            };
            tape.backward(&loss).unwrap().get(&v).unwrap()
        };
        let joint = grad(true, true);
        let (g1, g2) = (grad(false, true), grad(false, false));
        for ((j, a), b) in joint.data().iter().zip(g1.data()).zip(g2.data()) {
            prop_assert!((j - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_forward_is_bit_deterministic(x in (1usize..3, 1usize..3, 2usize..6).prop_flat_map(|(n, c, h)| tensor(vec![n, c, h, h]))) {
        let c = x.shape()[1];
        let run = || {
            let tape = Tape::<f32>::no_grad();
            let xv = tape.constant(x.cast());
            let w = tape.constant(Tensor::from_fn(&[c, c, 3, 3], |i| ((i * 7 % 11) as f32 - 5.0) * 0.1));
            let h = tape.conv2d(&xv, &w, None, 1, 1).unwrap();
            let gamma = tape.constant(Tensor::ones(&[c]));
            let beta = tape.constant(Tensor::zeros(&[c]));
            let mean = vec![0.1f32; c];
            let var = vec![2.0f32; c];
            let (h, _) = tape.batch_norm2d(&h, &gamma, &beta, BatchNormMode::Eval { mean: &mean, var: &var }, 1e-5).unwrap();
            tape.relu(&h).value().clone()
        };
        prop_assert!(run().bit_eq(&run()));
    }
}
