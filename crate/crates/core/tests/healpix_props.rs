use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::healpix::{
    children, n_pixels, neighbors, parent, pix2vec, rotate_z_quarter, vec2pix,
    z_rotation_permutation, GridLevel, Level,
};

fn lv(l: u32) -> Level {
    Level::new(l).unwrap()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn random_direction(rng: &mut impl Rng) -> [f64; 3] {
    // uniform on the sphere: z uniform in [-1, 1], phi uniform
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

#[test]
fn neighbor_symmetry_and_distinctness() {
    for l in 1..=5 {
        let grid = GridLevel::new(lv(l));
        let table = grid.neighbor_table();
        for (p, row) in table.iter().enumerate() {
            let valid: Vec<i32> = row.iter().copied().filter(|&q| q >= 0).collect();
            for (i, &q) in valid.iter().enumerate() {
                assert_ne!(q as usize, p, "pixel {p} is its own neighbour at level {l}");
                assert!(!valid[i + 1..].contains(&q), "duplicate neighbour in row {p}");
                assert!(
                    table[q as usize].contains(&(p as i32)),
                    "asymmetric adjacency {p} -> {q} at level {l}"
                );
            }
        }
    }
}

#[test]
fn exactly_24_seven_neighbour_pixels() {
    for l in 1..=5 {
        let grid = GridLevel::new(lv(l));
        let rows_with_gap: Vec<usize> = grid
            .neighbor_table()
            .iter()
            .map(|r| r.iter().filter(|&&q| q < 0).count())
            .collect();
        assert!(rows_with_gap.iter().all(|&c| c <= 1));
        assert_eq!(rows_with_gap.iter().filter(|&&c| c == 1).count(), 24, "level {l}");
        assert_eq!(grid.seven_neighbor_count(), 24);
    }
}

#[test]
fn neighbours_are_geometrically_close() {
    // every valid neighbour centre lies within ~2.5 pixel sizes
    let l = lv(4);
    let size = (4.0 * std::f64::consts::PI / n_pixels(l) as f64).sqrt();
    for p in 0..n_pixels(l) {
        let c = pix2vec(l, p).unwrap();
        for q in neighbors(l, p).unwrap() {
            if q >= 0 {
                let d = dot(c, pix2vec(l, q as usize).unwrap()).clamp(-1.0, 1.0).acos();
                assert!(d < 2.5 * size, "pixel {p} neighbour {q} at {d} rad");
            }
        }
    }
}

#[test]
fn base_region_is_top_bits() {
    let grid = GridLevel::new(lv(3));
    for p in 0..grid.n_pix() {
        assert_eq!(grid.base_region(p), p >> 6);
    }
}

#[test]
fn vec2pix_inverts_pix2vec() {
    for l in 0..=5 {
        for p in 0..n_pixels(lv(l)) {
            assert_eq!(vec2pix(lv(l), pix2vec(lv(l), p).unwrap()).unwrap(), p);
        }
    }
}

#[test]
fn parent_children_roundtrip() {
    for l in 0..5 {
        for p in 0..n_pixels(lv(l)) {
            for c in children(lv(l), p).unwrap() {
                assert_eq!(parent(lv(l + 1), c).unwrap(), p);
            }
        }
    }
}

fn nearest_centre_agreement(l: Level, draws: usize) -> (f64, Vec<([f64; 3], usize, usize)>) {
    let centers: Vec<[f64; 3]> = (0..n_pixels(l)).map(|p| pix2vec(l, p).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let mut misses = Vec::new();
    for _ in 0..draws {
        let v = random_direction(&mut rng);
        let nearest = (0..centers.len())
            .max_by(|&a, &b| dot(v, centers[a]).total_cmp(&dot(v, centers[b])))
            .unwrap();
        let cell = vec2pix(l, v).unwrap();
        if cell == nearest {
            agree += 1;
        } else {
            misses.push((v, cell, nearest));
        }
    }
    (agree as f64 / draws as f64, misses)
}

#[test]
fn nearest_centre_disagreements_are_adjacent_cells() {
    let l = lv(2);
    let (frac, misses) = nearest_centre_agreement(l, 100_000);
    println!("vec2pix vs nearest centre agreement at level 2: {frac:.4}");
    for (v, cell, nearest) in misses {
        let row = neighbors(l, cell).unwrap();
        assert!(row.contains(&(nearest as i32)), "{v:?}: cell {cell}, nearest {nearest}");
    }
}

// HEALPix cells are not Voronoi cells: about 9% of the sphere lies closer to
// a neighbouring centre, at every level, so this bound does not hold.
#[test]
#[ignore = "cell membership and nearest centre agree on ~91% of draws, not 99%"]
fn vec2pix_agrees_with_nearest_centre_99_percent() {
    let (frac, _) = nearest_centre_agreement(lv(2), 100_000);
    assert!(frac >= 0.99, "agreement {frac}");
}

#[test]
fn equal_area_monte_carlo() {
    let l = lv(3);
    let n = n_pixels(l);
    let draws = 1_000_000;
    let mut counts = vec![0u32; n];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..draws {
        counts[vec2pix(l, random_direction(&mut rng)).unwrap()] += 1;
    }
    let expected = draws as f64 / n as f64;
    for (p, &c) in counts.iter().enumerate() {
        assert!((c as f64 - expected).abs() <= 0.12 * expected, "pixel {p}: {c} hits");
    }
}

#[test]
fn rotation_permutation_matches_brute_force() {
    let l = lv(2);
    let n = n_pixels(l);
    let centers: Vec<[f64; 3]> = (0..n).map(|p| pix2vec(l, p).unwrap()).collect();
    for q in 0..4 {
        let perm = z_rotation_permutation(l, q).unwrap();
        for p in 0..n {
            let r = rotate_z_quarter(centers[p], q);
            let hits: Vec<usize> = (0..n)
                .filter(|&k| {
                    let c = centers[k];
                    (c[0] - r[0]).abs() < 1e-9 && (c[1] - r[1]).abs() < 1e-9 && (c[2] - r[2]).abs() < 1e-9
                })
                .collect();
            assert_eq!(hits, vec![perm[p]]);
        }
    }
}

#[test]
fn rotation_permutation_group_structure() {
    let l = lv(3);
    let n = n_pixels(l);
    let id = z_rotation_permutation(l, 0).unwrap();
    assert_eq!(id, (0..n).collect::<Vec<_>>());
    let perms: Vec<Vec<usize>> = (0..4).map(|q| z_rotation_permutation(l, q).unwrap()).collect();
    for a in 0..4 {
        for b in 0..4 {
            let composed: Vec<usize> = (0..n).map(|p| perms[b][perms[a][p]]).collect();
            assert_eq!(composed, perms[(a + b) % 4]);
        }
    }
    let mut four: Vec<usize> = (0..n).collect();
    for _ in 0..4 {
        four = four.iter().map(|&p| perms[1][p]).collect();
    }
    assert_eq!(four, id);
}

#[test]
fn rotation_preserves_neighbour_slots() {
    let l = lv(3);
    let perm = z_rotation_permutation(l, 1).unwrap();
    for p in 0..n_pixels(l) {
        let a = neighbors(l, p).unwrap();
        let b = neighbors(l, perm[p]).unwrap();
        for k in 0..8 {
            let mapped = if a[k] < 0 { -1 } else { perm[a[k] as usize] as i32 };
            assert_eq!(mapped, b[k]);
        }
    }
}
