//! Per-operator throughput on desk-scale volumes: the augmentation
//! kernels, the interpolation primitives they sit on, the network
//! forward/backward passes, and NIfTI encode/decode.

use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use voxaug_bench::patterned;
use voxaug_core::nn::{Model, ModelConfig, Tensor4};
use voxaug_core::sampling::{bspline_upsample, warp_affine, Affine4, ControlGrid};
use voxaug_core::volume::{nifti_bytes, read_nifti_bytes};
use voxaug_core::{apply_pipeline, AugmentSpec, RngStream};

const SHAPE: (usize, usize, usize) = (32, 32, 32);

fn bench_augment_operators(c: &mut Criterion) {
    let vol = patterned(SHAPE);
    let specs = [
        ("flip", AugmentSpec::FlipX { probability: 1.0 }),
        ("rotate", AugmentSpec::Rotate { max_deg: 7.5 }),
        ("scale", AugmentSpec::Scale { max_frac: 0.1 }),
        ("brightness", AugmentSpec::Brightness { lo: 0.9, hi: 1.1 }),
        ("elastic", AugmentSpec::Elastic { sigma_vox: 4.0, grid: (4, 4, 4) }),
    ];
    let mut group = c.benchmark_group("augment_32cube");
    for (name, spec) in specs {
        let root = RngStream::new(7);
        let mut i = 0u64;
        group.bench_function(name, |b| {
            b.iter(|| {
                i += 1;
                let mut rng = root.descend(&[i]);
                black_box(apply_pipeline(black_box(&vol), &spec, &mut rng).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_sampling_primitives(c: &mut Criterion) {
    let vol = patterned(SHAPE);
    let rotate = Affine4::rotation_xyz(5.0, -3.0, 8.0).transposed_linear();
    c.bench_function("warp_affine_32cube", |b| {
        b.iter(|| black_box(warp_affine(black_box(&vol), &rotate).unwrap()))
    });

    let mut rng = RngStream::new(9);
    let disp: Vec<[f32; 3]> = (0..4 * 4 * 4)
        .map(|_| {
            [
                rng.normal(4.0) as f32,
                rng.normal(4.0) as f32,
                rng.normal(4.0) as f32,
            ]
        })
        .collect();
    let grid = ControlGrid::new((4, 4, 4), disp).unwrap();
    c.bench_function("bspline_upsample_4cube_to_32cube", |b| {
        b.iter(|| black_box(bspline_upsample(black_box(&grid), SHAPE).unwrap()))
    });
}

fn bench_network_passes(c: &mut Criterion) {
    let config = ModelConfig {
        input_shape: (16, 20, 16),
        conv_channels: vec![4, 8],
        kernel: 3,
        pool_after: BTreeSet::from([0]),
        dense_units: 16,
        output_units: 1,
    };
    let rng = RngStream::new(3);
    let model: Model<f32> = Model::init(&config, &mut rng.child(1)).unwrap();
    let input = Tensor4::from_volume(&patterned((16, 20, 16)));

    c.bench_function("forward_16x20x16", |b| {
        b.iter(|| black_box(model.forward(black_box(&input)).unwrap()))
    });
    c.bench_function("forward_backward_16x20x16", |b| {
        b.iter(|| {
            let cache = model.forward_cached(black_box(&input)).unwrap();
            black_box(model.backward(&cache, 1.0))
        })
    });
}

fn bench_nifti_codec(c: &mut Criterion) {
    let vol = patterned(SHAPE);
    let encoded = nifti_bytes(&vol);
    c.bench_function("nifti_encode_32cube", |b| {
        b.iter(|| black_box(nifti_bytes(black_box(&vol))))
    });
    c.bench_function("nifti_decode_32cube", |b| {
        b.iter(|| black_box(read_nifti_bytes(black_box(&encoded)).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_augment_operators,
    bench_sampling_primitives,
    bench_network_passes,
    bench_nifti_codec
);
criterion_main!(benches);
