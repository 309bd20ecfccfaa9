mod common;

use std::path::Path;

use mprobe::cloud::{BOTTLENECK_LAYER_PATH, LATENT_SHAPE};
use mprobe::io::atf::{encode_atf, read_atf_from, AtfHeader, Dtype};
use mprobe::io::manifest::{DEFAULT_NUM_IMAGES, FREEZE_ABLATION_STEP, SCHEMA_VERSION};
use mprobe::io::{load_run, read_atf, read_atf_header, write_atf, write_manifest, ManifestFile, NonFinitePolicy, Run, RunManifest};
use mprobe::synth::{generate, ManifoldKind, ManifoldSpec};
use mprobe::{Error, Layer, PointCloud, Tensor, TensorData};
use proptest::prelude::*;
use rand::Rng;

use common::*;

fn arb_tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..=5).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop_oneof![
            prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), n)
                .prop_map({
                    let shape = shape.clone();
                    move |d| Tensor::from_f32(shape.clone(), d).unwrap()
                }),
            prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), n)
                .prop_map(move |d| Tensor::from_f64(shape.clone(), d).unwrap()),
        ]
    })
}

proptest! {
    #[test]
    fn atf_round_trip_is_byte_exact(tensor in arb_tensor()) {
        let bytes = encode_atf(&tensor).unwrap();
        let back = read_atf_from(&bytes[..], NonFinitePolicy::Reject).unwrap().tensor;
        prop_assert_eq!(&back, &tensor);
        prop_assert_eq!(encode_atf(&back).unwrap(), bytes);
    }
}

#[test]
fn little_endian_f64_fixture() {
    // shape [3], values -1.5, 0, 2^-10
    let mut bytes = b"ATF1\x02\x01\x03\x00\x00\x00".to_vec();
    bytes.extend([0, 0, 0, 0, 0, 0, 0xf8, 0xbf]);
    bytes.extend([0; 8]);
    bytes.extend([0, 0, 0, 0, 0, 0, 0x50, 0x3f]);
    let tensor = read_atf_from(&bytes[..], NonFinitePolicy::Reject).unwrap().tensor;
    assert_eq!(tensor.shape(), &[3]);
    assert_eq!(tensor.data(), &TensorData::F64(vec![-1.5, 0.0, 2f64.powi(-10)]));
    assert_eq!(encode_atf(&tensor).unwrap(), bytes);
}

#[test]
fn malformed_files_report_offsets() {
    let good = encode_atf(&Tensor::from_f32(vec![2, 2], vec![1.0; 4]).unwrap()).unwrap();
    let cases: Vec<(Vec<u8>, u64)> = vec![
        (b"ATF2".iter().chain(&good[4..]).copied().collect(), 0),
        ([&good[..4], &[9], &good[5..]].concat(), 4),
        ([&good[..5], &[0], &good[6..]].concat(), 5),
        (good[..good.len() - 1].to_vec(), 29),
        ([&good[..], &[0]].concat(), 30),
    ];
    for (bytes, offset) in cases {
        match read_atf_from(&bytes[..], NonFinitePolicy::Reject) {
            Err(Error::Format { offset: got, .. }) => assert_eq!(got, offset, "{bytes:?}"),
            other => panic!("expected a format error at {offset}, got {other:?}"),
        }
    }
}

#[test]
fn non_finite_rows_rejected_or_dropped() {
    let data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let mut bytes = encode_atf(&Tensor::from_f32(vec![4, 2], data).unwrap()).unwrap();
    bytes[22..26].copy_from_slice(&f32::NAN.to_le_bytes());
    bytes[42..46].copy_from_slice(&f32::INFINITY.to_le_bytes());
    assert!(matches!(read_atf_from(&bytes[..], NonFinitePolicy::Reject), Err(Error::Format { offset: 22, .. })));
    let contents = read_atf_from(&bytes[..], NonFinitePolicy::DropRows).unwrap();
    assert_eq!(contents.dropped_rows, vec![1, 3]);
    assert_eq!(contents.tensor, Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 5.0, 6.0]).unwrap());
}

fn manifest(layer: &str, total_steps: u32, num_images: usize, shape: &[usize]) -> RunManifest {
    let files = (1..=total_steps)
        .map(|step| ManifestFile {
            step,
            path: format!("step_{step:03}.atf").into(),
            shape: [&[num_images][..], shape].concat(),
        })
        .collect();
    RunManifest {
        schema_version: SCHEMA_VERSION,
        model_id: "test".into(),
        prompt: "a photo of a cat".into(),
        prompt_id: "cat".into(),
        layer: layer.into(),
        total_steps,
        guidance_scale: 7.5,
        num_images,
        base_seed: 1234,
        freeze_after_step: None,
        files,
    }
}

fn write_steps(dir: &Path, m: &RunManifest) -> Vec<PointCloud> {
    let mut clouds = Vec::new();
    for f in &m.files {
        let dim: usize = f.shape[1..].iter().product();
        let cloud = random_cloud(m.num_images, dim, f.step as u64);
        let tensor = Tensor::from_f32(f.shape.clone(), cloud.as_slice().to_vec()).unwrap();
        write_atf(&tensor, dir.join(&f.path)).unwrap();
        clouds.push(cloud);
    }
    clouds
}

#[test]
fn fifty_step_run_loads_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("latent", 50, 20, &[4, 2, 2]);
    let clouds = write_steps(dir.path(), &m);
    let path = dir.path().join("manifest.json");
    write_manifest(&m, &path).unwrap();
    let loaded = load_run(&path).unwrap();
    assert_eq!(loaded.len(), 50);
    for (i, (tag, cloud)) in loaded.iter().enumerate() {
        assert_eq!(tag.step, i as u32 + 1);
        assert_eq!(tag.layer, Layer::Latent);
        assert_eq!(tag.prompt_id, "cat");
        assert_eq!(cloud, &clouds[i]);
    }
    assert_eq!(Run::open(&path).unwrap().manifest, m);
}

#[test]
fn missing_step_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manifest("latent", 50, 10, &[3]);
    write_steps(dir.path(), &m);
    m.files.retain(|f| f.step != 17);
    let path = dir.path().join("manifest.json");
    write_manifest(&m, &path).unwrap();
    let err = load_run(&path).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
    assert!(err.to_string().contains("step 17"), "{err}");
}

#[test]
fn missing_file_and_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("latent", 3, 10, &[3]);
    write_steps(dir.path(), &m);
    let path = dir.path().join("manifest.json");

    let mut wrong_shape = m.clone();
    wrong_shape.files[1].shape = vec![10, 4];
    write_manifest(&wrong_shape, &path).unwrap();
    let err = load_run(&path).unwrap_err();
    assert!(err.to_string().contains("step 2"), "{err}");

    std::fs::remove_file(dir.path().join("step_003.atf")).unwrap();
    write_manifest(&m, &path).unwrap();
    let err = load_run(&path).unwrap_err();
    assert!(err.to_string().contains("step 3"), "{err}");
}

#[test]
fn freeze_ablation_manifest_loads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let plain = manifest(BOTTLENECK_LAYER_PATH, 50, 8, &[5]);
    write_steps(dir.path(), &plain);
    let mut frozen = plain.clone();
    frozen.freeze_after_step = Some(FREEZE_ABLATION_STEP);
    let (a, b) = (dir.path().join("plain.json"), dir.path().join("frozen.json"));
    write_manifest(&plain, &a).unwrap();
    write_manifest(&frozen, &b).unwrap();
    assert!(!std::fs::read_to_string(&a).unwrap().contains("freeze_after_step"));
    assert_eq!(Run::open(&b).unwrap().manifest.freeze_after_step, Some(40));
    let (la, lb) = (load_run(&a).unwrap(), load_run(&b).unwrap());
    assert_eq!(la, lb);
    assert_eq!(la[0].0.layer, Layer::Bottleneck);

    frozen.freeze_after_step = Some(50);
    write_manifest(&frozen, &b).unwrap();
    assert!(matches!(Run::open(&b), Err(Error::Input(_))));
}

#[test]
fn load_run_reproduces_generated_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, _) = generate(&ManifoldSpec::new(ManifoldKind::Sphere(3), 12, 300, 5)).unwrap();
    let m = manifest("latent", 1, 300, &[12]);
    write_atf(&cloud.to_tensor(), dir.path().join(&m.files[0].path)).unwrap();
    let path = dir.path().join("manifest.json");
    write_manifest(&m, &path).unwrap();
    let loaded = load_run(&path).unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].1, cloud);
}

#[test]
fn full_size_latent_stack() {
    let dir = tempfile::tempdir().unwrap();
    let n = DEFAULT_NUM_IMAGES;
    let shape = [&[n][..], &LATENT_SHAPE[..]].concat();
    let row_len: usize = LATENT_SHAPE.iter().product();
    assert_eq!(row_len, 16384);
    let mut rng = rng(3);
    let data: Vec<f32> = (0..n * row_len).map(|_| rng.random_range(-4.0..4.0)).collect();
    let path = dir.path().join("latent.atf");
    write_atf(&Tensor::from_f32(shape.clone(), data.clone()).unwrap(), &path).unwrap();

    let header = read_atf_header(&path).unwrap();
    assert_eq!(header, AtfHeader { dtype: Dtype::F32, dims: shape.clone() });
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 6 + 4 * 4 + 4 * (n * row_len) as u64);

    let cloud = PointCloud::from_stacked(&read_atf(&path).unwrap()).unwrap();
    assert_eq!((cloud.len(), cloud.dim()), (5000, 16384));
    for i in [0, 1, 2500, 4999] {
        assert_eq!(cloud.row(i), &data[i * row_len..(i + 1) * row_len]);
    }
}
