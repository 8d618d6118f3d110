use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::nn::{ParamStore, Tape, Tensor, Var};
use stm_core::{Level, StmError, TransformerGrid};

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference check of `f` w.r.t. each input. The scalar loss is
/// `sum(f(inputs) * r)` for a fixed random `r`, so every output element
/// contributes with a distinct weight.
fn fd_check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs);
        rand_tensor(t.value(out).shape(), &mut rng)
    };
    let loss_of = |xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs);
        t.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut t = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|x| t.variable(x.clone())).collect();
    let out = f(&mut t, &vs);
    let r = t.constant(probe.clone());
    let prod = t.mul(out, r).unwrap();
    let loss = t.sum(prod);
    let grads = t.backward(loss).unwrap();

    let h = 1e-5;
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.wrt(vs[k]).expect("input reached by the loss");
        let coords: Vec<usize> = if x.len() <= 20 {
            (0..x.len()).collect()
        } else {
            (0..20).map(|_| rng.gen_range(0..x.len())).collect()
        };
        for i in coords {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let ana = g.data()[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
            assert!(rel <= 1e-4, "input {k} coord {i}: analytic {ana} numeric {num} rel {rel}");
        }
    }
}

#[test]
fn relu_values() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn dot_self_gradient_is_twice_x() {
    let mut t = Tape::<f64>::new();
    let xv = vec![0.3, -1.5, 2.0, 4.25];
    let x = t.variable(Tensor::new(vec![4], xv.clone()).unwrap());
    let sq = t.mul(x, x).unwrap();
    let l = t.sum(sq);
    let g = t.backward(l).unwrap();
    for (a, b) in g.wrt(x).unwrap().data().iter().zip(&xv) {
        assert!((a - 2.0 * b).abs() < 1e-6);
    }
}

#[test]
fn second_backward_is_an_error() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::full(&[2], 1.0));
    let l = t.sum(x);
    t.backward(l).unwrap();
    assert!(matches!(t.backward(l), Err(StmError::Contract(_))));
}

#[test]
fn detached_loss_is_an_error() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(&[2], 1.0));
    let l = t.sum(x);
    assert!(matches!(t.backward(l), Err(StmError::Contract(_))));
}

#[test]
fn zero_weights_upstream_give_zero_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tape::<f64>::new();
    let x = t.variable(rand_tensor(&[5, 3], &mut rng));
    let w = t.constant(Tensor::zeros(&[3, 4]));
    let y = t.linear(x, w, None).unwrap();
    let l = t.sum(y);
    let g = t.backward(l).unwrap();
    assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn uniform_logits_cross_entropy_is_ln_k() {
    for k in [2usize, 10, 37] {
        let mut t = Tape::<f64>::new();
        let x = t.variable(Tensor::full(&[3, k], 0.7));
        let l = t.softmax_xent(x, &[0, 1, (k - 1) as u32], None).unwrap();
        assert!((t.value(l).data()[0] - (k as f64).ln()).abs() < 1e-6);
    }
}

#[test]
fn ignored_labels_are_excluded() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::new(vec![2, 2], vec![0.0, 0.0, 5.0, -5.0]).unwrap());
    let l = t.softmax_xent(x, &[1, 255], Some(255)).unwrap();
    assert!((t.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);
    let g = t.backward(l).unwrap();
    assert_eq!(&g.wrt(x).unwrap().data()[2..], &[0.0, 0.0]);

    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::full(&[1, 2], 0.0));
    assert!(matches!(t.softmax_xent(x, &[255], Some(255)), Err(StmError::EmptyEvaluation)));
}

#[test]
fn batchnorm_train_normalises_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tape::<f32>::new();
    let mut x = Tensor::<f32>::zeros(&[4, 30, 3]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = rng.gen_range(-2.0..2.0) * (1 + i % 3) as f32 + 10.0 * (i % 3) as f32;
    }
    let x = t.constant(x);
    let g = t.constant(Tensor::full(&[3], 1.0));
    let b = t.constant(Tensor::zeros(&[3]));
    let (y, stats) = t.batchnorm_train(x, g, b, 1e-5).unwrap();
    assert_eq!(stats.count, 120);
    let y = t.value(y).data();
    for c in 0..3 {
        let vals: Vec<f64> = y.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-5, "mean {m}");
        assert!((v - 1.0).abs() < 1e-4, "var {v}");
    }
}

#[test]
fn param_is_placed_once_and_buffers_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::full(&[2], 3.0), true);
    let buf = store.add("buf", Tensor::full(&[2], 1.0), false);
    let mut t = Tape::new();
    let a = t.param(&store, w);
    let b = t.param(&store, w);
    assert_eq!(a, b);
    let c = t.param(&store, buf);
    let p = t.mul(a, c).unwrap();
    let l = t.sum(p);
    let g = t.backward(l).unwrap();
    let pg = g.param_grads();
    assert_eq!(pg.len(), 1);
    assert_eq!(pg[0].0, w);
    assert_eq!(pg[0].1.data(), &[1.0, 1.0]);
}

#[test]
fn pool_gradient_routes_one_hot() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = Tape::<f64>::new();
    let x = t.variable(rand_tensor(&[2, 16, 3], &mut rng));
    let y = t.maxpool1x4(x).unwrap();
    let r = t.constant(rand_tensor(&[2, 4, 3], &mut rng));
    let p = t.mul(y, r).unwrap();
    let l = t.sum(p);
    let rv = t.value(r).data().to_vec();
    let g = t.backward(l).unwrap();
    let gx = g.wrt(x).unwrap().data();
    for b in 0..2 {
        for q in 0..4 {
            for c in 0..3 {
                let nz: Vec<f64> = (0..4).map(|k| gx[(b * 16 + 4 * q + k) * 3 + c]).filter(|&v| v != 0.0).collect();
                assert_eq!(nz, vec![rv[(b * 4 + q) * 3 + c]]);
            }
        }
    }
}

#[test]
fn conv1x1_matches_matrix_vector_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, ci, co) = (17, 5, 4);
    let x = rand_tensor(&[1, n, ci], &mut rng);
    let w = rand_tensor(&[ci, co], &mut rng);
    let b = rand_tensor(&[co], &mut rng);
    let mut t = Tape::<f64>::new();
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
    let y = t.conv1x1(xv, wv, Some(bv)).unwrap();
    let y = t.value(y).data();
    for p in 0..n {
        for o in 0..co {
            let mut s = b.data()[o];
            for i in 0..ci {
                s += x.data()[p * ci + i] * w.data()[i * co + o];
            }
            assert!((y[p * co + o] - s).abs() < 1e-6);
        }
    }
}

#[test]
fn conv2d_output_width_for_a_full_level_3_patch() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::full(&[1, 3, 3 * 768, 2], 1.0));
    let w = t.constant(Tensor::full(&[3, 3, 2, 5], 1.0));
    let y = t.conv2d(x, w, None, 1, 3).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 1, 768, 5]);
    assert!(t.value(y).data().iter().all(|&v| v == 18.0));
}

#[test]
fn shape_mismatches_are_contract_errors() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::zeros(&[1, 3, 7, 2]));
    let w = t.constant(Tensor::zeros(&[3, 3, 2, 1]));
    assert!(matches!(t.conv2d(x, w, None, 1, 3), Err(StmError::Contract(_))));
    let x = t.constant(Tensor::zeros(&[4, 3]));
    let w = t.constant(Tensor::zeros(&[2, 3]));
    assert!(t.linear(x, w, None).is_err());
    let x = t.constant(Tensor::zeros(&[1, 6, 3]));
    assert!(t.maxpool1x4(x).is_err());
}

// ---- finite-difference checks, one per differentiable op ----

#[test]
fn fd_add_mul() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let a = rand_tensor(&[6], &mut rng);
    let b = rand_tensor(&[6], &mut rng);
    fd_check(&[a, b], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        t.mul(s, v[1]).unwrap()
    });
}

#[test]
fn fd_relu_reshape() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    fd_check(&[rand_tensor(&[4, 6], &mut rng)], |t, v| {
        let r = t.relu(v[0]);
        t.reshape(r, &[2, 12]).unwrap()
    });
}

#[test]
fn fd_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&[2, 4, 9, 3], &mut rng);
    let w = rand_tensor(&[3, 3, 3, 2], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    fd_check(&[x, w, b], |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 3).unwrap());
}

#[test]
fn fd_spherical_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let grid = TransformerGrid::cached(Level::new(1).unwrap());
    let x = rand_tensor(&[2, 48, 2], &mut rng);
    let w = rand_tensor(&[3, 3, 2, 3], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    fd_check(&[x, w, b], |t, v| t.spherical_conv(v[0], v[1], Some(v[2]), &grid).unwrap());
}

#[test]
fn fd_gather() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let grid: Arc<TransformerGrid> = TransformerGrid::cached(Level::new(1).unwrap());
    fd_check(&[rand_tensor(&[1, 48, 2], &mut rng)], |t, v| t.gather(v[0], &grid).unwrap());
}

#[test]
fn fd_conv1x1_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let x = rand_tensor(&[2, 5, 3], &mut rng);
    let w = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[4], &mut rng);
    fd_check(&[x, w, b], |t, v| t.conv1x1(v[0], v[1], Some(v[2])).unwrap());
    let x = rand_tensor(&[3, 7], &mut rng);
    let w = rand_tensor(&[7, 2], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    fd_check(&[x, w, b], |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap());
}

#[test]
fn fd_maxpool() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    fd_check(&[rand_tensor(&[2, 16, 3], &mut rng)], |t, v| t.maxpool1x4(v[0]).unwrap());
}

#[test]
fn fd_unpool_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let x = rand_tensor(&[2, 3, 2], &mut rng);
    let w = rand_tensor(&[4, 2, 3], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    fd_check(&[x, w, b], |t, v| t.unpool_conv(v[0], v[1], Some(v[2])).unwrap());
}

#[test]
fn fd_batchnorm_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let x = rand_tensor(&[2, 6, 3], &mut rng);
    let g = rand_tensor(&[3], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    fd_check(&[x.clone(), g.clone(), b.clone()], |t, v| t.batchnorm_train(v[0], v[1], v[2], 1e-5).unwrap().0);
    fd_check(&[x, g, b], |t, v| t.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5).unwrap());
}

#[test]
fn fd_concat_global_avg() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let a = rand_tensor(&[2, 4, 3], &mut rng);
    let b = rand_tensor(&[2, 4, 2], &mut rng);
    fd_check(&[a, b], |t, v| {
        let c = t.concat(&[v[0], v[1], v[0]]).unwrap();
        t.global_avg(c).unwrap()
    });
}

#[test]
fn fd_softmax_xent() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    fd_check(&[rand_tensor(&[4, 5], &mut rng)], |t, v| {
        let l = t.softmax_xent(v[0], &[0, 4, 255, 2], Some(255)).unwrap();
        t.reshape(l, &[1]).unwrap()
    });
}
