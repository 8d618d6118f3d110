use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::healpix::{neighbors, z_rotation_permutation, Level};
use stm_core::transformer::{
    gather, spherical_conv, spherical_pool, spherical_unpool_conv, SphericalKernel, SphericalSignal,
    TransformerGrid, UnpoolKernel,
};

fn lv(l: u32) -> Level {
    Level::new(l).unwrap()
}

fn random_signal(level: Level, c: usize, rng: &mut impl Rng) -> SphericalSignal<f64> {
    SphericalSignal::from_fn(level, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_kernel(cin: usize, cout: usize, rng: &mut impl Rng) -> SphericalKernel<f64> {
    let w = (0..9 * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SphericalKernel::new(cin, cout, w, b).unwrap()
}

// Neighbour direction (SW, W, NW, N, NE, E, SE, S) -> (row, col) in the 3x3 patch,
// written out independently of the library's slot table.
const DIRECTION_CELL: [(usize, usize); 8] =
    [(2, 0), (1, 0), (0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1)];

fn brute_force_patch(signal: &SphericalSignal<f64>, p: usize) -> [[Vec<f64>; 3]; 3] {
    let c = signal.channels();
    let mut patch: [[Vec<f64>; 3]; 3] = Default::default();
    for row in patch.iter_mut() {
        for cell in row.iter_mut() {
            *cell = vec![0.0; c];
        }
    }
    patch[1][1] = signal.pixel(p).to_vec();
    for (d, &q) in neighbors(signal.level(), p).unwrap().iter().enumerate() {
        if q >= 0 {
            let (r, col) = DIRECTION_CELL[d];
            patch[r][col] = signal.pixel(q as usize).to_vec();
        }
    }
    patch
}

#[test]
fn gather_matches_per_pixel_loop() {
    let l = lv(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_signal(l, 3, &mut rng);
    let before = s.clone();
    let patches = gather(&s, &TransformerGrid::cached(l)).unwrap();
    assert_eq!(patches.shape(), (3, 3 * 192, 3));
    for p in 0..192 {
        let expect = brute_force_patch(&s, p);
        for r in 0..3 {
            for col in 0..3 {
                for ch in 0..3 {
                    assert_eq!(patches.get(r, 3 * p + col, ch), expect[r][col][ch]);
                }
            }
        }
    }
    assert_eq!(s, before);
}

#[test]
fn center_column_reproduces_signal() {
    let l = lv(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_signal(l, 2, &mut rng);
    let patches = gather(&s, &TransformerGrid::cached(l)).unwrap();
    for p in 0..s.n_pix() {
        assert_eq!(patches.slot(p, 4), s.pixel(p));
    }
}

#[test]
fn conv_matches_nine_term_sum() {
    let l = lv(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cin, cout) = (4, 5);
    let s = random_signal(l, cin, &mut rng);
    let k = random_kernel(cin, cout, &mut rng);
    let out = spherical_conv(&s, &k, &TransformerGrid::cached(l)).unwrap();
    for p in 0..s.n_pix() {
        let patch = brute_force_patch(&s, p);
        for co in 0..cout {
            let mut acc = k.bias[co];
            for r in 0..3 {
                for col in 0..3 {
                    for ci in 0..cin {
                        acc += k.weight(r * 3 + col, ci, co) * patch[r][col][ci];
                    }
                }
            }
            let got = out.get(p, co);
            assert!((got - acc).abs() <= 1e-6 * acc.abs().max(1.0), "p={p} co={co}: {got} vs {acc}");
        }
    }
}

#[test]
fn conv_is_linear() {
    let l = lv(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tg = TransformerGrid::cached(l);
    let zero_bias = |k: SphericalKernel<f64>| SphericalKernel::new(k.cin, k.cout, k.weights, vec![0.0; k.cout]).unwrap();
    let k1 = zero_bias(random_kernel(3, 2, &mut rng));
    let k2 = zero_bias(random_kernel(3, 2, &mut rng));
    let x = random_signal(l, 3, &mut rng);
    let y = random_signal(l, 3, &mut rng);
    let (a, b) = (0.7, -1.3);
    let xy = SphericalSignal::from_fn(l, 3, |p, c| a * x.get(p, c) + b * y.get(p, c));
    let lhs = spherical_conv(&xy, &k1, &tg).unwrap();
    let cx = spherical_conv(&x, &k1, &tg).unwrap();
    let cy = spherical_conv(&y, &k1, &tg).unwrap();
    for i in 0..lhs.data().len() {
        assert!((lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])).abs() < 1e-6);
    }
    // linear in the weights as well
    let ksum = SphericalKernel::new(
        3,
        2,
        k1.weights.iter().zip(&k2.weights).map(|(u, v)| a * u + b * v).collect(),
        vec![0.0; 2],
    )
    .unwrap();
    let lhs = spherical_conv(&x, &ksum, &tg).unwrap();
    let c2 = spherical_conv(&x, &k2, &tg).unwrap();
    for i in 0..lhs.data().len() {
        assert!((lhs.data()[i] - (a * cx.data()[i] + b * c2.data()[i])).abs() < 1e-6);
    }
}

#[test]
fn conv_is_deterministic() {
    let l = lv(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_signal(l, 3, &mut rng).cast::<f32>();
    let k = random_kernel(3, 4, &mut rng);
    let k = SphericalKernel::new(3, 4, k.weights.iter().map(|&v| v as f32).collect(), vec![0.0; 4]).unwrap();
    let tg = TransformerGrid::cached(l);
    let a = spherical_conv(&s, &k, &tg).unwrap();
    let b = spherical_conv(&s, &k, &tg).unwrap();
    let bits = |x: &SphericalSignal<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn pool_matches_per_parent_max() {
    let l = lv(3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_signal(l, 3, &mut rng);
    let pooled = spherical_pool(&s).unwrap();
    for p in 0..192 {
        for c in 0..3 {
            let m = (4 * p..4 * p + 4).map(|q| s.get(q, c)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(pooled.signal.get(p, c), m);
            assert_eq!(s.get(pooled.argmax[p * 3 + c] as usize, c), m);
        }
    }
}

#[test]
fn unpool_then_pool_recovers_nonnegative_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = 3;
    let s = SphericalSignal::from_fn(lv(2), c, |_, _| rng.gen_range(0.0..5.0));
    let mut w = vec![0.0; 4 * c * c];
    for k in 0..4 {
        for i in 0..c {
            w[(k * c + i) * c + i] = 1.0;
        }
    }
    let up = spherical_unpool_conv(&s, &UnpoolKernel::new(c, c, w, vec![0.0; c]).unwrap()).unwrap();
    assert_eq!(up.level(), lv(3));
    assert_eq!(spherical_pool(&up).unwrap().signal, s);
}

#[test]
fn rotation_equivariance() {
    let l = lv(2);
    let tg = TransformerGrid::cached(l);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_signal(l, 3, &mut rng);
    let general = random_kernel(3, 2, &mut rng);
    for q in 1..4 {
        let perm = z_rotation_permutation(l, q).unwrap();
        let xr = x.permute(&perm).unwrap();

        // gather commutes with the permutation slot by slot
        let g = gather(&x, &tg).unwrap();
        let gr = gather(&xr, &tg).unwrap();
        for p in 0..x.n_pix() {
            for slot in 0..9 {
                assert_eq!(gr.slot(perm[p], slot), g.slot(p, slot));
            }
        }

        let a = spherical_conv(&xr, &general, &tg).unwrap();
        let b = spherical_conv(&x, &general, &tg).unwrap().permute(&perm).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-6);
        }

        let coarse = z_rotation_permutation(lv(1), q).unwrap();
        let pa = spherical_pool(&xr).unwrap().signal;
        let pb = spherical_pool(&x).unwrap().signal.permute(&coarse).unwrap();
        assert_eq!(pa, pb);
    }
}
