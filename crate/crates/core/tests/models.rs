use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::healpix::z_rotation_permutation;
use stm_core::models::gradcheck::check_gradients;
use stm_core::models::{
    build_pointwise_classifier, build_smnist, build_unet_spherical, build_vgg11_spherical, Model, Shape,
    SMNIST_WIDTHS,
};
use stm_core::nn::Tensor;
use stm_core::Level;

fn lvl(l: u32) -> Level {
    Level::new(l).unwrap()
}

fn rand_input(b: usize, level: Level, c: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = b * level.n_pixels() * c;
    Tensor::new(vec![b, level.n_pixels(), c], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Applies a pixel permutation to every sample of a `[B, N, C]` batch.
fn permute_batch<T: stm_core::Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(x.shape());
    for s in 0..b {
        for p in 0..n {
            let src = &x.data()[(s * n + p) * c..(s * n + p + 1) * c];
            out.data_mut()[(s * n + perm[p]) * c..(s * n + perm[p] + 1) * c].copy_from_slice(src);
        }
    }
    out
}

#[test]
fn smnist_level4_logits() {
    let spec = build_smnist(lvl(4), 1, &SMNIST_WIDTHS, 10).unwrap();
    let count = spec.count_params().unwrap();
    assert!((29_000..=35_000).contains(&count), "{count}");
    let model = Model::<f32>::new(spec, 1).unwrap();
    assert_eq!(model.store().trainable_count(), count);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_input(3, lvl(4), 1, &mut rng).cast::<f32>();
    let y = model.predict_logits(x).unwrap();
    assert_eq!(y.shape(), &[3, 10]);
}

#[test]
fn smnist_rejects_small_entry_level() {
    assert!(build_smnist(lvl(3), 1, &SMNIST_WIDTHS, 10).is_err());
}

#[test]
fn builders_pass_shape_checks_at_levels_4_and_5() {
    for l in [4, 5] {
        let s = build_smnist(lvl(l), 1, &SMNIST_WIDTHS, 10).unwrap();
        assert_eq!(s.output_shape().unwrap(), Shape::Flat(10));
        let u = build_unet_spherical(lvl(l), 4, &[8, 16, 32, 64], 5).unwrap();
        assert_eq!(u.output_shape().unwrap(), Shape::Sphere { level: lvl(l), channels: 5 });
        let m = Model::<f32>::new(u, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
        let y = m.predict_logits(rand_input(1, lvl(l), 4, &mut rng).cast()).unwrap();
        assert_eq!(y.shape(), &[1, lvl(l).n_pixels(), 5]);
    }
    // VGG-11 pools five times, so it needs entry level 5.
    assert!(build_vgg11_spherical(lvl(4), 6, false, 40).is_err());
    for ar in [false, true] {
        let v = build_vgg11_spherical(lvl(5), 6, ar, 40).unwrap();
        assert_eq!(v.output_shape().unwrap(), Shape::Flat(40));
    }
}

#[test]
fn vgg11_forward_at_level_5() {
    let spec = build_vgg11_spherical(lvl(5), 6, true, 40).unwrap();
    let model = Model::<f32>::new(spec, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = model.predict_logits(rand_input(1, lvl(5), 6, &mut rng).cast()).unwrap();
    assert_eq!(y.shape(), &[1, 40]);
    assert!(y.all_finite());
}

#[test]
fn pointwise_classifier_is_rotation_invariant() {
    let spec = build_pointwise_classifier(lvl(2), 3, &[8, 16], 5).unwrap();
    let model = Model::<f32>::new(spec, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_input(2, lvl(2), 3, &mut rng).cast::<f32>();
    let base = model.predict_logits(x.clone()).unwrap();
    for q in 1..4 {
        let perm = z_rotation_permutation(lvl(2), q).unwrap();
        let y = model.predict_logits(permute_batch(&x, &perm)).unwrap();
        for (a, b) in base.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-5, "q={q}: {a} vs {b}");
        }
    }
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let spec = build_smnist(lvl(4), 1, &SMNIST_WIDTHS, 10).unwrap();
    let a = Model::<f32>::new(spec.clone(), 5).unwrap();
    let b = Model::<f32>::new(spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_input(2, lvl(4), 1, &mut rng).cast::<f32>();
    let ya = a.predict_logits(x.clone()).unwrap();
    let yb = b.predict_logits(x).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ya), bits(&yb));
}

#[test]
fn smnist_gradients_match_finite_differences() {
    let spec = build_smnist(lvl(4), 1, &SMNIST_WIDTHS, 10).unwrap();
    let mut model = Model::<f64>::new(spec, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_input(2, lvl(4), 1, &mut rng);
    let checks = check_gradients(&mut model, &x, &[3, 7], 20, 1e-5, 13).unwrap();
    assert_eq!(checks.len(), 18);
    for c in checks {
        println!("{}: max relative error {:.2e}", c.name, c.max_rel);
        assert!(c.max_rel <= 1e-4, "{}: {}", c.name, c.max_rel);
    }
}
