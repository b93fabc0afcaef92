use lka3d_core::gradcheck::check_gradients;
use lka3d_core::tensor::activation::gelu;
use lka3d_core::tensor::conv::conv3d_direct;
use lka3d_core::tensor::norm::{batch_norm, layer_norm_channels, BatchNormState};
use lka3d_core::tensor::ops::{self, max_rel_err};
use lka3d_core::tensor::reference::conv3d_naive;
use lka3d_core::{ConvSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random projection `Σ r ⊙ y`, so every output element reaches the loss
/// with a distinct weight.
fn project(y: &Tensor<f64>, seed: u64) -> lka3d_core::Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, y.shape());
    Ok(ops::sum(&ops::mul(y, &r)?))
}

fn conv_cases() -> Vec<(usize, usize, [usize; 3], ConvSpec)> {
    vec![
        (3, 4, [5, 4, 6], ConvSpec::cubic(3).padding(1)),
        (2, 3, [7, 6, 5], ConvSpec::cubic(3).stride(2).padding(1)),
        (4, 4, [6, 6, 6], ConvSpec::cubic(3).dilation(2).padding(2).groups(4)),
        (4, 2, [5, 5, 5], ConvSpec::cubic(3).padding(1).groups(2)),
        (3, 5, [4, 3, 5], ConvSpec::pointwise()),
        (2, 3, [3, 4, 3], ConvSpec::cubic(3).stride(2).padding(1).transposed(1)),
        (2, 2, [3, 3, 2], ConvSpec::cubic(2).stride(2).transposed(0)),
        (4, 4, [3, 3, 3], ConvSpec::cubic(3).stride(2).padding(1).groups(2).transposed(1)),
        (3, 2, [9, 9, 9], ConvSpec::cubic(3).dilation(3).padding(3).stride(2)),
    ]
}

#[test]
fn conv_matches_naive_reference_in_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (cin, cout, sp, spec) in conv_cases() {
        let x = rand_tensor(&mut rng, &[2, cin, sp[0], sp[1], sp[2]]);
        let ws = spec.weight_shape(cin, cout);
        let w = rand_tensor(&mut rng, &ws);
        let b = rand_tensor(&mut rng, &[cout]);
        let y = lka3d_core::tensor::conv3d(&x, &w, Some(&b), &spec).unwrap();
        let xs: [usize; 5] = x.shape().try_into().unwrap();
        let (reference, shape) = conv3d_naive(x.data(), xs, w.data(), ws, Some(b.data()), &spec).unwrap();
        assert_eq!(y.shape(), &shape);
        let err = max_rel_err(y.data(), &reference);
        assert!(err < 1e-12, "{spec:?}: rel err {err}");

        if !spec.transpose {
            let yd = conv3d_direct(&x, &w, &spec).unwrap();
            let (plain, _) = conv3d_naive(x.data(), xs, w.data(), ws, None, &spec).unwrap();
            assert!(max_rel_err(yd.data(), &plain) < 1e-12);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (case, (cin, cout, sp, spec)) in conv_cases().into_iter().enumerate() {
        let x = rand_tensor(&mut rng, &[2, cin, sp[0], sp[1], sp[2]]);
        let w = rand_tensor(&mut rng, &spec.weight_shape(cin, cout));
        let b = rand_tensor(&mut rng, &[cout]);
        let report = check_gradients(
            |t| project(&lka3d_core::tensor::conv3d(&t[0], &t[1], Some(&t[2]), &spec)?, 99),
            &[x, w, b],
            1e-5,
            60,
            case as u64,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{spec:?}: {report:?}");
    }
}

#[test]
fn elementwise_and_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [2, 3, 3, 2, 4];
    for inst in 0..5u64 {
        let x = rand_tensor(&mut rng, &shape);
        let y = rand_tensor(&mut rng, &shape);
        let ch = rand_tensor(&mut rng, &[3]);
        let gamma = rand_tensor(&mut rng, &[3]);
        let beta = rand_tensor(&mut rng, &[3]);

        let r = check_gradients(|t| project(&gelu(&ops::scale(&t[0], 2.0)), inst), &[x.clone()], 1e-5, 80, inst).unwrap();
        assert!(r.max_rel_err < 1e-6, "gelu {r:?}");

        let r = check_gradients(
            |t| project(&ops::mul(&ops::add(&t[0], &t[1])?, &t[2])?, inst),
            &[x.clone(), y.clone(), ch.clone()],
            1e-5,
            80,
            inst,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "add/mul {r:?}");

        let r = check_gradients(
            |t| {
                let c = ops::concat_channels(&[t[0].clone(), t[1].clone()])?;
                let s = ops::sum_per_channel(&ops::mul(&c, &c)?)?;
                project(&ops::add(&s, &ops::mean(&t[0]))?, inst)
            },
            &[x.clone(), y.clone()],
            1e-5,
            80,
            inst,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "concat/reductions {r:?}");

        for training in [true, false] {
            let mut state = BatchNormState { running_mean: vec![0.1, -0.2, 0.3], running_var: vec![1.5, 0.7, 2.0] };
            let r = check_gradients(
                |t| {
                    let mut st = state.clone();
                    project(&batch_norm(&t[0], &t[1], &t[2], &mut st, training, 0.1, 1e-5)?, inst)
                },
                &[x.clone(), gamma.clone(), beta.clone()],
                1e-5,
                80,
                inst,
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-6, "batch_norm training={training} {r:?}");
            state.running_mean[0] = 0.0;
        }

        let r = check_gradients(
            |t| project(&layer_norm_channels(&t[0], &t[1], &t[2], 1e-5)?, inst),
            &[x.clone(), gamma.clone(), beta.clone()],
            1e-5,
            80,
            inst,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "layer_norm {r:?}");
    }
}

#[test]
fn conv_is_linear_in_its_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (cin, cout, sp, spec) in conv_cases() {
        let x = rand_tensor(&mut rng, &[1, cin, sp[0], sp[1], sp[2]]);
        let z = rand_tensor(&mut rng, x.shape());
        let w = rand_tensor(&mut rng, &spec.weight_shape(cin, cout));
        let (a, b) = (0.7, -1.9);
        let combo = ops::add(&ops::scale(&x, a), &ops::scale(&z, b)).unwrap();
        let lhs = lka3d_core::tensor::conv3d(&combo, &w, None, &spec).unwrap();
        let cx = lka3d_core::tensor::conv3d(&x, &w, None, &spec).unwrap();
        let cz = lka3d_core::tensor::conv3d(&z, &w, None, &spec).unwrap();
        let rhs = ops::add(&ops::scale(&cx, a), &ops::scale(&cz, b)).unwrap();
        assert!(max_rel_err(lhs.data(), rhs.data()) < 1e-5);

        let xf: Tensor<f32> = combo.cast();
        let wf: Tensor<f32> = w.cast();
        let lf = lka3d_core::tensor::conv3d(&xf, &wf, None, &spec).unwrap();
        let lf64: Vec<f64> = lf.data().iter().map(|&v| v as f64).collect();
        assert!(max_rel_err(&lf64, rhs.data()) < 1e-5);
    }
}

#[test]
fn transpose_conv_is_the_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = [
        (ConvSpec::cubic(3).stride(2).padding(1), [8, 8, 8]),
        (ConvSpec::cubic(2).stride(2), [6, 4, 8]),
        (ConvSpec::cubic(3).padding(1), [5, 6, 7]),
        (ConvSpec::cubic(3).stride(2).padding(1).groups(2), [6, 6, 6]),
    ];
    for (spec, big) in pairs {
        let (cin, cout) = (4, 6);
        let x = rand_tensor(&mut rng, &[1, cin, big[0], big[1], big[2]]);
        let w = rand_tensor(&mut rng, &spec.weight_shape(cin, cout));
        let y_small = lka3d_core::tensor::conv3d(&x, &w, None, &spec).unwrap();
        let y = rand_tensor(&mut rng, y_small.shape());
        // Output padding that restores the large grid.
        let op = {
            let o = y_small.shape()[2];
            let back = (o - 1) * spec.stride[0] + spec.dilation[0] * (spec.kernel[0] - 1) + 1 - 2 * spec.padding[0];
            big[0] - back
        };
        let mut tr = spec.transposed(op);
        tr.groups = spec.groups;
        let xt = lka3d_core::tensor::conv3d(&y, &w, None, &tr).unwrap();
        assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y_small.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!(((lhs - rhs) / rhs.abs().max(1e-12)).abs() < 1e-5, "{spec:?}: {lhs} vs {rhs}");
    }
}

#[test]
fn identical_inputs_give_bitwise_identical_outputs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[2, 3, 6, 6, 6]).requires_grad(true);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3, 3]).requires_grad(true);
        let y = gelu(&lka3d_core::tensor::conv3d(&x, &w, None, &ConvSpec::cubic(3).padding(1)).unwrap());
        ops::sum(&ops::mul(&y, &y).unwrap()).backward().unwrap();
        (y.to_vec(), x.grad().unwrap(), w.grad().unwrap())
    };
    let a = run();
    let b = run();
    assert!(a.0.iter().zip(&b.0).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.2.iter().zip(&b.2).all(|(p, q)| p.to_bits() == q.to_bits()));
}
