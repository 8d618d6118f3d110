use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::error::Location;
use stm_core::formats::*;
use stm_core::models::{build_smnist, Model, SMNIST_WIDTHS};
use stm_core::nn::{assign, read_checkpoint, write_checkpoint};
use stm_core::{Level, SphericalSignal, StmError};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn off_fixtures() {
    let t = read_off(fixture("tetra.off")).unwrap();
    assert_eq!((t.mesh.vertices().len(), t.mesh.faces().len()), (4, 4));

    let quads = read_off(fixture("cube_quads.off")).unwrap();
    assert_eq!((quads.mesh.vertices().len(), quads.polygons, quads.mesh.faces().len()), (8, 6, 12));
    assert_eq!(quads.dropped_degenerate, 0);

    let glued = read_off(fixture("cube_glued.off")).unwrap();
    assert_eq!(glued.mesh.vertices(), quads.mesh.vertices());
    assert_eq!(glued.mesh.faces(), quads.mesh.faces());

    let e = read_off(fixture("broken.off")).unwrap_err();
    assert!(matches!(e, StmError::Parse { at: Location::Line(6), .. }), "{e}");
}

#[test]
fn off_write_read() {
    let m = read_off(fixture("cube_quads.off")).unwrap().mesh;
    let mut buf = Vec::new();
    write_off(&mut buf, &m).unwrap();
    let back = parse_off(&buf).unwrap().mesh;
    assert_eq!(back.vertices(), m.vertices());
    assert_eq!(back.faces(), m.faces());
}

#[test]
fn idx_fixture() {
    let imgs = read_idx_images(fixture("digits-idx3-ubyte")).unwrap();
    assert_eq!((imgs.len(), imgs.rows, imgs.cols), (2, 28, 28));
    assert_eq!(imgs.image(0)[0], 1.0);
    assert_eq!(imgs.image(1)[10 * 28 + 12], 128.0 / 255.0);
    assert_eq!(read_idx_labels(fixture("digits-labels-idx1-ubyte")).unwrap(), vec![7, 1]);

    let bytes = std::fs::read(fixture("digits-idx3-ubyte")).unwrap();
    assert!(matches!(parse_idx(&bytes[..bytes.len() - 1]), Err(StmError::Parse { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(parse_idx(&extra).is_err());
    let mut bad_magic = bytes;
    bad_magic[3] = 0x02;
    assert!(parse_idx(&bad_magic).is_err());
}

#[test]
fn pnm_fixture_and_roundtrip() {
    let img = read_pnm(fixture("tiny.ppm")).unwrap();
    assert_eq!((img.width, img.height, img.channels), (2, 2, 3));
    assert_eq!(img.data, (1..=12).collect::<Vec<u8>>());

    let gray = Image { width: 3, height: 2, channels: 1, data: vec![0, 7, 255, 128, 1, 99] };
    let mut buf = Vec::new();
    write_pnm(&mut buf, &gray).unwrap();
    assert_eq!(parse_pnm(&buf).unwrap(), gray);

    assert!(parse_pnm(b"P3\n1 1\n255\n1 2 3\n").is_err());
    assert!(parse_pnm(b"P5\n1 1\n65535\n\x00\x01").is_err());
}

#[test]
fn sphs_roundtrip_is_bit_exact() {
    let level = Level::new(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data: Vec<f32> = (0..level.n_pixels() * 6).map(|_| rng.gen_range(-1e3..1e3)).collect();
    data[5] = f32::MIN_POSITIVE / 4.0; // subnormal
    data[6] = -0.0;
    let sig = SphericalSignal::new(level, 6, data).unwrap();
    let mut buf = Vec::new();
    write_sphs(&mut buf, &sig).unwrap();
    assert_eq!(buf.len(), 16 + 768 * 6 * 4);
    let Sphs::F32(back) = parse_sphs(&buf).unwrap() else { panic!("dtype") };
    let bits = |s: &SphericalSignal<f32>| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&sig));
    assert_eq!((back.level(), back.channels()), (level, 6));

    let labels: Vec<u8> = (0..768).map(|i| (i % 13) as u8).collect();
    let mut buf = Vec::new();
    write_sphs_labels(&mut buf, level, &labels).unwrap();
    assert_eq!(parse_sphs(&buf).unwrap(), Sphs::Labels { level, labels });
}

#[test]
fn sphs_header_errors() {
    let small = SphericalSignal::<f32>::zeros(Level::new(2).unwrap(), 1);
    let mut buf = Vec::new();
    write_sphs(&mut buf, &small).unwrap();
    let mut lying = buf.clone();
    lying[8] = 3; // claims level 3
    assert!(parse_sphs(&lying).is_err());

    let mut two_channel_labels = Vec::new();
    write_sphs_labels(&mut two_channel_labels, Level::new(0).unwrap(), &[0; 12]).unwrap();
    two_channel_labels[12] = 2;
    two_channel_labels.extend([0u8; 12]);
    assert!(parse_sphs(&two_channel_labels).is_err());

    let mut magic = buf.clone();
    magic[0] = b'X';
    assert!(parse_sphs(&magic).is_err());
    let mut version = buf;
    version[4] = 2;
    assert!(parse_sphs(&version).is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let spec = build_smnist(Level::new(4).unwrap(), 1, &SMNIST_WIDTHS, 10).unwrap();
    let a: Model<f32> = Model::new(spec.clone(), 1).unwrap();
    let mut b: Model<f32> = Model::new(spec, 2).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, a.store()).unwrap();
    assign(b.store_mut(), read_checkpoint(&buf[..]).unwrap()).unwrap();
    for ((_, pa), (_, pb)) in a.store().iter().zip(b.store().iter()) {
        assert_eq!(pa.name, pb.name);
        let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(pa.value.data()), bits(pb.value.data()));
    }
    assert!(read_checkpoint(&buf[..buf.len() - 2]).is_err());
}
