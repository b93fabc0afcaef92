use lka3d_core::inference::*;
use lka3d_core::network::{Model, ModelConfig, Variant};
use lka3d_core::pipeline::Volume;
use lka3d_core::tensor::ops::max_rel_err;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_volume(shape: [usize; 3], channels: usize, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = channels * shape.iter().product::<usize>();
    Volume::new(shape, [1.0; 3], channels, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn rel(a: &[f32], b: &[f32]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    max_rel_err(&a, &b)
}

#[test]
fn voxelwise_160_matches_whole_volume() {
    let model = VoxelwiseModel::random(2, 6, 3, 1);
    let v = random_volume([160; 3], 2, 2);
    let whole = model.predict(&v).unwrap();
    let t0 = Instant::now();
    let sw = sliding_window(&model, &v, &WindowSpec::cubic(64)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    assert_eq!(sw.channels, 3);
    assert_eq!(sw.shape, [160; 3]);
    let e = rel(&sw.data, &whole);
    assert!(e < 1e-5, "rel err {e}");
    assert!(secs < 120.0, "{secs} s");
}

#[test]
fn single_window_matches_direct_forward() {
    let model = VoxelwiseModel::random(2, 5, 2, 3);
    for shape in [[20, 20, 20], [12, 20, 7]] {
        let v = random_volume(shape, 2, 4);
        let sw = sliding_window(&model, &v, &WindowSpec { size: shape, ..Default::default() }).unwrap();
        assert!(rel(&sw.data, &model.predict(&v).unwrap()) < 1e-6);
        // Larger window: padded then cropped back.
        let big = sliding_window(&model, &v, &WindowSpec::cubic(24)).unwrap();
        assert_eq!(big.shape, shape);
        assert!(rel(&big.data, &model.predict(&v).unwrap()) < 1e-6);
    }
}

#[test]
fn single_window_matches_network_forward() {
    let cfg = ModelConfig::small(Variant::LkaE, 2, 2);
    let model: Model<f32> = Model::build(&cfg, 5).unwrap();
    let v = random_volume([16; 3], 2, 6);
    let sw = sliding_window(&model, &v, &WindowSpec::cubic(16)).unwrap();
    let direct = Predictor::predict(&model, &v).unwrap();
    assert!(rel(&sw.data, &direct) < 1e-6);
}

#[test]
fn tta_of_voxelwise_model_equals_plain_prediction() {
    let model = VoxelwiseModel::random(3, 4, 2, 7);
    let v = random_volume([18, 13, 22], 3, 8);
    let spec = WindowSpec::cubic(8);
    let plain = sliding_window(&model, &v, &spec).unwrap();
    let tta = tta_flips(&model, &v, &spec, &all_flips()).unwrap();
    assert!(rel(&tta.data, &plain.data) < 1e-5);
    let identity = tta_flips(&model, &v, &spec, &all_flips()[..1]).unwrap();
    assert_eq!(identity.data, plain.data);
}

#[test]
fn result_is_independent_of_window_grid() {
    let model = VoxelwiseModel::random(1, 4, 2, 9);
    let v = random_volume([30, 30, 30], 1, 10);
    let whole = model.predict(&v).unwrap();
    for (size, overlap) in [(8, 0.5), (10, 0.25), (12, 0.0), (7, 0.75)] {
        let sw = sliding_window(&model, &v, &WindowSpec { size: [size; 3], overlap, sigma_scale: 0.125 }).unwrap();
        assert!(rel(&sw.data, &whole) < 1e-5, "size {size} overlap {overlap}");
    }
}

#[test]
fn windows_cover_every_position() {
    for len in 1..50 {
        for size in 1..20 {
            for overlap in [0.0, 0.3, 0.5, 0.9] {
                let s = window_starts(len, size, overlap);
                let mut covered = vec![false; len];
                for &a in &s {
                    for c in covered.iter_mut().skip(a).take(size) {
                        *c = true;
                    }
                }
                assert!(covered.iter().all(|&c| c), "len {len} size {size}");
                assert!(s.iter().all(|&a| a + size.min(len) <= len));
            }
        }
    }
}

#[test]
fn importance_map_is_centred() {
    let g = gaussian_importance([9, 9, 9], 0.125);
    let max = g.iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, g[(4 * 9 + 4) * 9 + 4]);
    assert_eq!(max, 1.0);
    assert!(g.iter().all(|&w| w >= 1e-3));
}

#[test]
fn argmax_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = 4;
    let n = 5 * 5 * 5;
    let data: Vec<f32> = (0..k * n).map(|_| rng.gen_range(0..3) as f32).collect();
    let logits = Volume::new([5; 3], [1.0; 3], k, data.clone()).unwrap();
    let labels = logits_to_labels(&logits);
    for i in 0..n {
        let col: Vec<f32> = (0..k).map(|c| data[c * n + i]).collect();
        let max = col.iter().cloned().fold(f32::MIN, f32::max);
        let want = col.iter().position(|&v| v == max).unwrap();
        assert_eq!(labels.data[i], want as f32);
    }
}

#[test]
fn constant_model_is_constant_under_windows() {
    let model = ConstantModel { logits: vec![0.25, -1.0] };
    let v = random_volume([11, 9, 13], 1, 12);
    let out = sliding_window(&model, &v, &WindowSpec::cubic(4)).unwrap();
    let n = v.voxels();
    assert!(out.data[..n].iter().all(|&x| (x - 0.25).abs() < 1e-6));
    assert!(out.data[n..].iter().all(|&x| (x + 1.0).abs() < 1e-6));
}
