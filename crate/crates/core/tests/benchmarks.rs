use std::sync::Arc;

use multistab::benchmarks::{
    gen_copy_first_input, gen_denoising, load_mnist_idx, make_permuted_sequences, parse_idx_images, parse_idx_labels,
    pixel_permutation, read_cache, task_loss, write_cache, write_idx, CopyFirstInputSpec, DenoisingSpec, LossKind,
    MnistImages, MnistMode, MnistSequences, PermutedMnistSpec, Target, MNIST_PIXELS, MNIST_SIDE,
};
use multistab::sequences::Sequences;
use multistab::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn step(d: &impl Sequences, i: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.input_dim()];
    d.fill_step(i, t, &mut out);
    out
}

fn synthetic_images(n: usize, seed: u64) -> MnistImages {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MnistImages {
        pixels: (0..n * MNIST_PIXELS).map(|_| rng.gen()).collect(),
        labels: (0..n).map(|_| rng.gen_range(0..10)).collect(),
    }
}

/// Mean and the standard error of the mean, from the raw values.
fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn zero_predictor_on_copy_has_unit_loss() {
    let d = gen_copy_first_input(&CopyFirstInputSpec { length: 5, count: 50_000, seed: 3 }).unwrap();
    let zero = Tensor::matrix(1, 1, vec![0.0]).unwrap();
    let losses: Vec<f64> = d.targets.iter().map(|t| task_loss(d.loss, &zero, t).unwrap()).collect();
    let (m, _) = mean_and_se(&losses);
    assert!((m - 1.0).abs() < 0.02, "{m}");
    for i in 0..100 {
        assert_eq!(d.targets[i], Target::Values(vec![step(&d, i, 0)[0]]));
    }
}

#[test]
fn zero_predictor_on_denoising_has_loss_five() {
    let d = gen_denoising(&DenoisingSpec { length: 30, forget: 10, count: 20_000, seed: 5 }).unwrap();
    let zero = Tensor::zeros(&[5, 1]);
    let losses: Vec<f64> = d.targets.iter().map(|t| task_loss(d.loss, &zero, t).unwrap()).collect();
    let (m, se) = mean_and_se(&losses);
    assert!((m - 5.0).abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn denoising_stream_statistics() {
    let d = gen_denoising(&DenoisingSpec { length: 20, forget: 5, count: 10_000, seed: 8 }).unwrap();
    let xs: Vec<f64> = (0..d.len()).flat_map(|i| (0..20).map(move |t| (i, t))).map(|(i, t)| step(&d, i, t)[0]).collect();
    let n = xs.len() as f64;
    let (m, _) = mean_and_se(&xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    // three standard errors of the mean and of the sample variance
    assert!(m.abs() < 3.0 / n.sqrt(), "{m}");
    assert!((var - 1.0).abs() < 3.0 * (2.0 / (n - 1.0)).sqrt(), "{var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn denoising_marks_are_valid(forget in 5usize..20, extra in 0usize..20, seed in any::<u64>()) {
        let length = forget + 5 + extra;
        let spec = DenoisingSpec { length, forget, count: 20, seed };
        let d = gen_denoising(&spec).unwrap();
        for i in 0..d.len() {
            let marked: Vec<usize> = (0..length).filter(|&t| step(&d, i, t)[1] == 1.0).collect();
            prop_assert_eq!(marked.len(), 5);
            prop_assert!(*marked.last().unwrap() < length - forget);
            let values: Vec<f64> = marked.iter().map(|&t| step(&d, i, t)[0]).collect();
            prop_assert_eq!(&d.targets[i], &Target::Values(values));
        }
        let again = gen_denoising(&spec).unwrap();
        prop_assert_eq!(again.targets, d.targets);
    }

    #[test]
    fn permutation_preserves_pixel_multiset(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let images = Arc::new(synthetic_images(2, seed));
        let d = make_permuted_sequences(images.clone(), &PermutedMnistSpec { mode: MnistMode::Pixel, permutation_seed: perm_seed }).unwrap();
        for i in 0..2 {
            let mut got: Vec<u64> = (0..MNIST_PIXELS).map(|t| (step(&d, i, t)[0] * 255.0).round() as u64).collect();
            let mut want: Vec<u64> = images.image(i).iter().map(|&b| b as u64).collect();
            got.sort_unstable();
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }
        let mut p = pixel_permutation(perm_seed);
        p.sort_unstable();
        prop_assert_eq!(p, (0..MNIST_PIXELS).collect::<Vec<_>>());
    }
}

#[test]
fn copy_and_denoising_reject_bad_sizes() {
    assert!(gen_copy_first_input(&CopyFirstInputSpec { length: 0, count: 1, seed: 0 }).is_err());
    assert!(gen_denoising(&DenoisingSpec { length: 9, forget: 5, count: 1, seed: 0 }).is_err());
    assert!(gen_denoising(&DenoisingSpec { length: 10, forget: 5, count: 1, seed: 0 }).is_ok());
}

#[test]
fn idx_round_trip_through_files() {
    let images = synthetic_images(7, 1);
    let (img, lab) = write_idx(&images);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i"), &img).unwrap();
    std::fs::write(dir.path().join("l"), &lab).unwrap();
    assert_eq!(load_mnist_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap(), images);

    // header fields are big-endian
    assert_eq!(&img[..8], &[0, 0, 8, 3, 0, 0, 0, 7]);
    assert_eq!(&img[8..16], &[0, 0, 0, 28, 0, 0, 0, 28]);

    // count mismatch between the two files
    let (_, lab6) = write_idx(&synthetic_images(6, 1));
    std::fs::write(dir.path().join("l6"), &lab6).unwrap();
    let err = load_mnist_idx(&dir.path().join("i"), &dir.path().join("l6")).unwrap_err();
    assert!(err.to_string().contains("7 images but 6 labels"), "{err}");
}

#[test]
fn idx_parse_errors_are_named() {
    let (img, lab) = write_idx(&synthetic_images(2, 4));
    let mut bad = img.clone();
    bad[3] = 1;
    assert!(parse_idx_images(&bad).unwrap_err().to_string().contains("magic"));
    assert!(parse_idx_images(&img[..100]).unwrap_err().to_string().contains("truncated"));
    assert!(parse_idx_images(&img[..10]).unwrap_err().to_string().contains("truncated"));
    let mut bad = lab.clone();
    bad[8] = 10;
    assert!(parse_idx_labels(&bad).unwrap_err().to_string().contains("not a digit"));
    assert!(parse_idx_labels(&img).unwrap_err().to_string().contains("magic"));
}

#[test]
fn pixel_scaling() {
    let mut images = synthetic_images(1, 0);
    images.pixels[0] = 0xFF;
    images.pixels[1] = 0;
    let identity: Vec<usize> = (0..MNIST_PIXELS).collect();
    let s = MnistSequences::new(Arc::new(images), identity, MnistMode::Pixel).unwrap();
    assert_eq!(step(&s, 0, 0), vec![1.0]);
    assert_eq!(step(&s, 0, 1), vec![0.0]);
}

#[test]
fn line_mode_appends_black_lines() {
    let images = Arc::new(synthetic_images(3, 2));
    let identity: Vec<usize> = (0..MNIST_PIXELS).collect();
    let s = MnistSequences::new(images.clone(), identity.clone(), MnistMode::Line { black_lines: 0 }).unwrap();
    assert_eq!(s.seq_len(0), 28);
    for r in 0..MNIST_SIDE {
        let want: Vec<f64> = images.image(1)[r * 28..(r + 1) * 28].iter().map(|&b| b as f64 / 255.0).collect();
        assert_eq!(step(&s, 1, r), want);
    }
    for (n, len) in [(72, 100), (472, 500)] {
        let d = make_permuted_sequences(images.clone(), &PermutedMnistSpec { mode: MnistMode::Line { black_lines: n }, permutation_seed: 9 })
            .unwrap();
        assert_eq!(d.seq_len(2), len);
        assert_eq!(d.input_dim(), 28);
        assert!((28..len).all(|t| step(&d, 2, t).iter().all(|&v| v == 0.0)));
    }
    assert!(MnistSequences::new(images, identity[1..].to_vec(), MnistMode::Pixel).is_err());
}

#[test]
fn uniform_output_nll_is_ln_ten() {
    let loss = LossKind::NegLogLikelihood { classes: 10 };
    let uniform = Tensor::matrix(1, 10, vec![0.3; 10]).unwrap();
    for c in 0..10 {
        let l = task_loss(loss, &uniform, &Target::Class(c)).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }
    let perfect = Tensor::matrix(1, 1, vec![0.7]).unwrap();
    assert_eq!(task_loss(LossKind::SquaredError { window: 1 }, &perfect, &Target::Values(vec![0.7])).unwrap(), 0.0);
    // wrong output dimension
    assert!(task_loss(loss, &Tensor::matrix(1, 3, vec![0.0; 3]).unwrap(), &Target::Class(0)).is_err());
}

#[test]
fn cache_round_trip() {
    let d = gen_denoising(&DenoisingSpec { length: 12, forget: 5, count: 9, seed: 6 }).unwrap();
    let mut buf = Vec::new();
    write_cache(&d, &mut buf).unwrap();
    let back = read_cache(&mut buf.as_slice()).unwrap();
    assert_eq!(back.targets, d.targets);
    assert_eq!(back.loss, d.loss);
    for i in 0..d.len() {
        for t in 0..12 {
            assert_eq!(step(&back, i, t), step(&d, i, t));
        }
    }
}
