use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn grid_sample_identity_grid_reproduces_source() {
    let src = random(&[4, 5, 3], 1);
    let grid = Tensor::from_fn(&[4, 5, 2], |i| {
        let p = i / 2;
        if i % 2 == 0 { (p % 5) as f64 } else { (p / 5) as f64 }
    });
    let mut g = Graph::new();
    let (s, gr) = (g.constant(src.clone()), g.constant(grid));
    let (out, mask) = g.grid_sample_bilinear(s, gr).unwrap();
    assert_eq!(g.value(out), &src);
    assert!(mask.all_true());
}

#[test]
fn grid_sample_center_of_two_by_two_is_corner_average() {
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let gr = g.constant(Tensor::new(&[1, 1, 2], vec![0.5, 0.5]).unwrap());
    let (out, mask) = g.grid_sample_bilinear(s, gr).unwrap();
    assert_eq!(g.value(out).data(), &[1.5]);
    assert!(mask.get(0));
}

#[test]
fn grid_sample_out_of_bounds_is_zero_and_masked() {
    let mut g = Graph::new();
    let s = g.constant(Tensor::ones(&[3, 3, 2]));
    let gr = g.constant(Tensor::new(&[1, 1, 2], vec![-5.0, 0.0]).unwrap());
    let (out, mask) = g.grid_sample_bilinear(s, gr).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    assert!(!mask.get(0));
}

#[test]
fn grid_sample_rejects_grid_without_two_coordinates() {
    let mut g = Graph::new();
    let s = g.constant(Tensor::ones(&[3, 3, 2]));
    let gr = g.constant(Tensor::zeros(&[1, 1, 3]));
    assert!(matches!(g.grid_sample_bilinear(s, gr), Err(NumericsError::Shape(_))));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[64], 0.7));
    let y = g.softmax_lastdim(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 64.0).abs() < 1e-15);
    }

    let x = g.constant(Tensor::new(&[2], vec![0.0, 3f64.ln()]).unwrap());
    let y = g.softmax_lastdim(x).unwrap();
    assert!((g.value(y).data()[0] - 0.25).abs() < 1e-12);
    assert!((g.value(y).data()[1] - 0.75).abs() < 1e-12);

    let base = random(&[3, 7], 4);
    let a = g.constant(base.clone());
    let b = g.constant(base.map(|v| v + 123.0));
    let (ya, yb) = (g.softmax_lastdim(a).unwrap(), g.softmax_lastdim(b).unwrap());
    for (p, q) in g.value(ya).data().iter().zip(g.value(yb).data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn avg_pool_depth_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.avg_pool_depth(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 3.5]);

    let x = g.constant(Tensor::new(&[1, 1, 4], vec![0.0, 0.0, 8.0, 0.0]).unwrap());
    let y = g.avg_pool_depth(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 4.0]);

    let x = g.constant(Tensor::full(&[2, 3, 8], 2.5));
    let y = g.avg_pool_depth(x).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 4]);
    assert!(g.value(y).data().iter().all(|&v| v == 2.5));

    let x = g.constant(Tensor::zeros(&[1, 1, 5]));
    assert!(g.avg_pool_depth(x).is_err());
}

#[test]
fn pointwise_identity_conv_and_identity_matmul() {
    let mut g = Graph::new();
    let xt = random(&[3, 4, 5], 9);
    let x = g.constant(xt.clone());
    let w = g.constant(Tensor::from_fn(&[1, 1, 5, 5], |i| if i / 5 == i % 5 { 1.0 } else { 0.0 }));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &xt);

    let m = g.constant(xt.clone().reshape(&[12, 5]).unwrap());
    let eye = g.constant(Tensor::from_fn(&[5, 5], |i| if i / 5 == i % 5 { 1.0 } else { 0.0 }));
    let y = g.matmul(m, eye).unwrap();
    assert_eq!(g.value(y).data(), xt.data());
}

#[test]
fn three_by_three_ones_kernel_sums_nine_at_interior() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[5, 5, 1]));
    let w = g.constant(Tensor::ones(&[3, 3, 1, 1]));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).get(&[2, 2, 0]), 9.0);
    assert_eq!(g.value(y).get(&[0, 0, 0]), 4.0);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[5, 5, 2]));
    let w = g.constant(Tensor::ones(&[3, 3, 1, 1]));
    assert!(g.conv2d(x, w, None, 1, 1).is_err());
}

#[test]
fn strided_conv_output_size() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[8, 6, 2]));
    let w = g.constant(Tensor::ones(&[3, 3, 2, 4]));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[4, 3, 4]);
}

#[test]
fn non_finite_outputs_are_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
    assert!(matches!(g.reciprocal(x), Err(NumericsError::NonFinite(_))));
}

#[test]
fn fd_grid_sample_interior() {
    // Coordinates kept away from integer cell boundaries.
    let src = random(&[5, 6, 2], 3);
    let grid = Tensor::from_fn(&[3, 3, 2], |i| 0.3 + (i as f64 * 0.37) % 3.4);
    let opts = FdOptions { epsilon: 1e-5, ..Default::default() };
    let r = finite_difference_check(
        |g, v| Ok(g.grid_sample_bilinear(v[0], v[1])?.0),
        &[src, grid],
        &opts,
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn fd_softmax_eight_vector() {
    let r = finite_difference_check(
        |g, v| g.softmax_lastdim(v[0]),
        &[random(&[8], 11)],
        &FdOptions::default(),
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-6, "{r:?}");
}

#[test]
fn fd_conv2d_five_by_five() {
    let r = finite_difference_check(
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
        &[random(&[5, 5, 2], 1), random(&[3, 3, 2, 3], 2), random(&[3], 3)],
        &FdOptions { max_probes: 1000, ..Default::default() },
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-5, "{r:?}");
}

#[test]
fn fd_batch_norm_train_and_eval() {
    let inputs = [random(&[3, 3, 4], 5), random(&[4], 6), random(&[4], 7)];
    let opts = FdOptions { train: true, ..Default::default() };
    let r = finite_difference_check(|g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0), &inputs, &opts)
        .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
    let r = finite_difference_check(
        |g, v| g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.0, 0.3], &[1.0, 0.5, 2.0, 0.1], 1e-5),
        &inputs,
        &FdOptions::default(),
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn fd_gather_linear_lastdim() {
    let vol = random(&[2, 2, 6], 8);
    let pos = Tensor::from_fn(&[2, 2, 3], |i| -0.7 + (i as f64 * 0.61) % 6.2);
    let r = finite_difference_check(|g, v| g.gather_linear_lastdim(v[0], v[1]), &[vol, pos], &FdOptions::default())
        .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn resize_and_pool_shapes() {
    let mut g = Graph::new();
    let x = g.constant(random(&[4, 4, 3], 1));
    let up = g.upsample(x, 4).unwrap();
    assert_eq!(g.shape(up), &[16, 16, 3]);
    let down = g.downsample(up, 4).unwrap();
    assert_eq!(g.shape(down), &[4, 4, 3]);
    let c = g.constant(Tensor::full(&[2, 2, 1], 3.0));
    let up = g.upsample(c, 2).unwrap();
    assert!(g.value(up).data().iter().all(|&v| (v - 3.0).abs() < 1e-15));
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let s = g.sum(z).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[3.0, 5.0]);
}

#[test]
fn detach_stops_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
}

#[test]
fn identical_inputs_give_bit_identical_outputs() {
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(random(&[6, 6, 3], 2));
        let w = g.constant(random(&[3, 3, 3, 4], 3));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        let y = g.softmax_lastdim(y).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let n = values.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[n], values).unwrap());
        let y = g.softmax_lastdim(x).unwrap();
        let s: f64 = g.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(g.value(y).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn grid_sample_is_exact_lookup_at_integers(h in 1usize..6, w in 1usize..6, seed in 0u64..1000) {
        let src = random(&[h, w, 2], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let pts: Vec<(usize, usize)> = (0..5).map(|_| (rng.random_range(0..w), rng.random_range(0..h))).collect();
        let grid = Tensor::new(&[1, 5, 2], pts.iter().flat_map(|&(u, v)| [u as f64, v as f64]).collect()).unwrap();
        let mut g = Graph::new();
        let (s, gr) = (g.constant(src.clone()), g.constant(grid));
        let (out, _) = g.grid_sample_bilinear(s, gr).unwrap();
        for (k, &(u, v)) in pts.iter().enumerate() {
            for c in 0..2 {
                prop_assert_eq!(g.value(out).get(&[0, k, c]), src.get(&[v, u, c]));
            }
        }
    }
}
