//! Benchmark datasets: copy-first-input, denoising, and permuted MNIST in
//! pixel and line mode, with their losses.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager};
use crate::error::{contract, Error, Result};
use crate::sequences::{DenseSequences, Sequences};
use crate::tensor::Tensor;

pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;
pub const MNIST_CLASSES: usize = 10;
/// Number of marked timesteps in the denoising task.
pub const DENOISE_MARKS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Regression targets for the final `len` steps, one value per step.
    Values(Vec<f64>),
    Class(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Squared error summed over the final `window` steps.
    SquaredError { window: usize },
    /// Negative log-likelihood of the softmax output at the final step.
    NegLogLikelihood { classes: usize },
}

impl LossKind {
    /// Number of trailing steps whose outputs enter the loss.
    pub fn window(&self) -> usize {
        match *self {
            LossKind::SquaredError { window } => window,
            LossKind::NegLogLikelihood { .. } => 1,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LossKind::SquaredError { .. } => 1,
            LossKind::NegLogLikelihood { classes } => classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, LossKind::NegLogLikelihood { .. })
    }
}

#[derive(Clone, Debug)]
pub enum Inputs {
    Dense(DenseSequences),
    Mnist(MnistSequences),
}

/// Input sequences, their targets, and the loss that ties them together.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Inputs,
    pub targets: Vec<Target>,
    pub loss: LossKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn seqs(&self) -> &dyn Sequences {
        match &self.inputs {
            Inputs::Dense(d) => d,
            Inputs::Mnist(m) => m,
        }
    }

    /// Split off a validation set: the last `fraction` of a seeded shuffle.
    /// Returns (train indices, validation indices).
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(contract(format!("validation fraction must lie in [0, 1), got {fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (self.len() as f64 * fraction).round() as usize;
        let val = idx.split_off(self.len() - n_val);
        Ok((idx, val))
    }
}

impl Sequences for Dataset {
    fn count(&self) -> usize {
        self.seqs().count()
    }

    fn input_dim(&self) -> usize {
        self.seqs().input_dim()
    }

    fn seq_len(&self, i: usize) -> usize {
        self.seqs().seq_len(i)
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        self.seqs().fill_step(i, t, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyFirstInputSpec {
    pub length: usize,
    pub count: usize,
    pub seed: u64,
}

/// 1-d standard-normal sequences; the target is the first input, read at the
/// last step.
pub fn gen_copy_first_input(spec: &CopyFirstInputSpec) -> Result<Dataset> {
    if spec.length == 0 {
        return Err(contract("copy-first-input needs length >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seqs = Vec::with_capacity(spec.count);
    let mut targets = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let u: Vec<f64> = (0..spec.length).map(|_| StandardNormal.sample(&mut rng)).collect();
        targets.push(Target::Values(vec![u[0]]));
        seqs.push(Tensor::matrix(spec.length, 1, u)?);
    }
    Ok(Dataset {
        inputs: Inputs::Dense(DenseSequences::with_dim(seqs, 1)?),
        targets,
        loss: LossKind::SquaredError { window: 1 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoisingSpec {
    pub length: usize,
    /// forgetting period N: no marked step among the last N
    pub forget: usize,
    pub count: usize,
    pub seed: u64,
}

/// 2-d sequences: a standard-normal stream and a 0/1 marker channel flagging
/// five steps drawn without replacement from `1..=T-N`. The marked stream
/// values, in time order, are the targets of the last five steps.
pub fn gen_denoising(spec: &DenoisingSpec) -> Result<Dataset> {
    if spec.forget < DENOISE_MARKS {
        return Err(contract(format!("denoising needs N >= 5, got {}", spec.forget)));
    }
    if spec.length < spec.forget + DENOISE_MARKS {
        return Err(contract(format!(
            "denoising needs T - N >= 5, got T={} N={}",
            spec.length, spec.forget
        )));
    }
    let t = spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seqs = Vec::with_capacity(spec.count);
    let mut targets = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let mut data = vec![0.0; 2 * t];
        for k in 0..t {
            data[2 * k] = StandardNormal.sample(&mut rng);
        }
        let mut marks = index::sample(&mut rng, t - spec.forget, DENOISE_MARKS).into_vec();
        marks.sort_unstable();
        for &k in &marks {
            data[2 * k + 1] = 1.0;
        }
        targets.push(Target::Values(marks.iter().map(|&k| data[2 * k]).collect()));
        seqs.push(Tensor::matrix(t, 2, data)?);
    }
    Ok(Dataset {
        inputs: Inputs::Dense(DenseSequences::with_dim(seqs, 2)?),
        targets,
        loss: LossKind::SquaredError { window: DENOISE_MARKS },
    })
}

/// Raw MNIST images (row-major bytes) and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistImages {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * MNIST_PIXELS..(i + 1) * MNIST_PIXELS]
    }

    /// Keep only the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.pixels.truncate(n * MNIST_PIXELS);
        }
    }
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn parse_err(what: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        what: what.to_string(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(what, format!("truncated header at byte {at}")))
}

/// Parse an IDX image file (`0x00000803`, `count x 28 x 28` bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, Vec<u8>)> {
    let what = "IDX images";
    let magic = be_u32(bytes, 0, what)?;
    if magic != IDX_IMAGES {
        return Err(parse_err(what, format!("wrong magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    if rows != MNIST_SIDE || cols != MNIST_SIDE {
        return Err(parse_err(what, format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let need = 16 + count * MNIST_PIXELS;
    if bytes.len() < need {
        return Err(parse_err(what, format!("truncated file: {} of {need} bytes", bytes.len())));
    }
    Ok((count, bytes[16..need].to_vec()))
}

/// Parse an IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let what = "IDX labels";
    let magic = be_u32(bytes, 0, what)?;
    if magic != IDX_LABELS {
        return Err(parse_err(what, format!("wrong magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(parse_err(what, format!("truncated file: {} of {need} bytes", bytes.len())));
    }
    let labels = bytes[8..need].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(parse_err(what, format!("label {} at index {pos} is not a digit", labels[pos])));
    }
    Ok(labels)
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<MnistImages> {
    let (count, pixels) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if labels.len() != count {
        return Err(parse_err(
            "IDX pair",
            format!("{count} images but {} labels", labels.len()),
        ));
    }
    Ok(MnistImages { pixels, labels })
}

/// Serialize images and labels in IDX format (inverse of the parsers).
pub fn write_idx(images: &MnistImages) -> (Vec<u8>, Vec<u8>) {
    let n = images.len() as u32;
    let mut img = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES, n, MNIST_SIDE as u32, MNIST_SIDE as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&images.pixels);
    let mut lab = Vec::with_capacity(8 + images.labels.len());
    for v in [IDX_LABELS, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&images.labels);
    (img, lab)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum MnistMode {
    /// one pixel per step, 784 steps
    Pixel,
    /// one 28-pixel line per step, followed by `black_lines` zero lines
    Line { black_lines: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutedMnistSpec {
    pub mode: MnistMode,
    pub permutation_seed: u64,
}

/// One seeded permutation of the 784 pixel positions.
pub fn pixel_permutation(seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..MNIST_PIXELS).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Lazily permuted MNIST sequences over shared image bytes.
#[derive(Clone, Debug)]
pub struct MnistSequences {
    images: Arc<MnistImages>,
    /// position k of the permuted image reads original pixel `perm[k]`
    perm: Vec<usize>,
    mode: MnistMode,
}

impl MnistSequences {
    pub fn new(images: Arc<MnistImages>, perm: Vec<usize>, mode: MnistMode) -> Result<Self> {
        let mut seen = vec![false; MNIST_PIXELS];
        if perm.len() != MNIST_PIXELS || perm.iter().any(|&p| p >= MNIST_PIXELS || std::mem::replace(&mut seen[p], true)) {
            return Err(contract("pixel permutation must be a bijection on 0..784"));
        }
        Ok(MnistSequences { images, perm, mode })
    }
}

impl Sequences for MnistSequences {
    fn count(&self) -> usize {
        self.images.len()
    }

    fn input_dim(&self) -> usize {
        match self.mode {
            MnistMode::Pixel => 1,
            MnistMode::Line { .. } => MNIST_SIDE,
        }
    }

    fn seq_len(&self, _: usize) -> usize {
        match self.mode {
            MnistMode::Pixel => MNIST_PIXELS,
            MnistMode::Line { black_lines } => MNIST_SIDE + black_lines,
        }
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        let img = self.images.image(i);
        match self.mode {
            MnistMode::Pixel => out[0] = img[self.perm[t]] as f64 / 255.0,
            MnistMode::Line { .. } if t < MNIST_SIDE => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = img[self.perm[t * MNIST_SIDE + c]] as f64 / 255.0;
                }
            }
            MnistMode::Line { .. } => out.fill(0.0),
        }
    }
}

pub fn make_permuted_sequences(images: Arc<MnistImages>, spec: &PermutedMnistSpec) -> Result<Dataset> {
    let targets = images.labels.iter().map(|&l| Target::Class(l as usize)).collect();
    let seqs = MnistSequences::new(images, pixel_permutation(spec.permutation_seed), spec.mode)?;
    Ok(Dataset {
        inputs: Inputs::Mnist(seqs),
        targets,
        loss: LossKind::NegLogLikelihood { classes: MNIST_CLASSES },
    })
}

/// Mean task loss over a batch. `outputs` holds the head outputs of the final
/// `loss.window()` steps in time order, each `[batch, output_dim]`.
pub fn batch_loss<B: Backend>(b: &mut B, loss: LossKind, outputs: &[B::T], targets: &[&Target]) -> Result<B::T> {
    let n = targets.len();
    if n == 0 {
        return Err(contract("loss of an empty batch"));
    }
    if outputs.len() != loss.window() {
        return Err(contract(format!(
            "loss needs outputs for the last {} steps, got {}",
            loss.window(),
            outputs.len()
        )));
    }
    for o in outputs {
        let shape = b.value(o).shape();
        if shape != [n, loss.output_dim()] {
            return Err(Error::ShapeMismatch {
                op: "task output",
                left: shape.to_vec(),
                right: vec![n, loss.output_dim()],
            });
        }
    }
    match loss {
        LossKind::SquaredError { window } => {
            let mut total: Option<B::T> = None;
            for (k, o) in outputs.iter().enumerate() {
                let mut y = Vec::with_capacity(n);
                for t in targets {
                    match t {
                        Target::Values(v) if v.len() == window => y.push(v[k]),
                        _ => return Err(contract(format!("regression target with {window} values expected"))),
                    }
                }
                let y = b.constant(Tensor::matrix(n, 1, y)?);
                let d = b.sub(o, &y)?;
                let sq = b.square(&d);
                let s = b.sum(&sq);
                total = Some(match total {
                    Some(acc) => b.add(&acc, &s)?,
                    None => s,
                });
            }
            Ok(b.affine(&total.expect("window >= 1"), 1.0 / n as f64, 0.0))
        }
        LossKind::NegLogLikelihood { classes } => {
            let mut onehot = vec![0.0; n * classes];
            for (r, t) in targets.iter().enumerate() {
                match t {
                    Target::Class(c) if *c < classes => onehot[r * classes + c] = 1.0,
                    _ => return Err(contract(format!("class target in 0..{classes} expected"))),
                }
            }
            let onehot = b.constant(Tensor::matrix(n, classes, onehot)?);
            let lp = b.log_softmax(&outputs[0]);
            let picked = b.mul(&lp, &onehot)?;
            let s = b.sum(&picked);
            Ok(b.affine(&s, -1.0 / n as f64, 0.0))
        }
    }
}

/// Loss of a single sample given its `[window, output_dim]` outputs.
pub fn task_loss(loss: LossKind, outputs: &Tensor, target: &Target) -> Result<f64> {
    if outputs.shape().len() != 2 || outputs.rows() != loss.window() {
        return Err(Error::ShapeMismatch {
            op: "task output",
            left: outputs.shape().to_vec(),
            right: vec![loss.window(), loss.output_dim()],
        });
    }
    let steps: Vec<Tensor> = (0..outputs.rows())
        .map(|r| Tensor::matrix(1, outputs.cols(), outputs.row(r).to_vec()))
        .collect::<Result<_>>()?;
    Ok(batch_loss(&mut Eager, loss, &steps, &[target])?.item())
}

/// Number of correct argmax predictions in a `[batch, classes]` output.
pub fn correct_predictions(outputs: &Tensor, targets: &[&Target]) -> usize {
    let (_, idx) = crate::tensor::max_last(outputs);
    idx.iter()
        .zip(targets)
        .filter(|(p, t)| matches!(t, Target::Class(c) if c == *p))
        .count()
}

const CACHE_MAGIC: &[u8; 4] = b"MSDS";
const CACHE_VERSION: u32 = 1;

/// Write a dense dataset as length-prefixed little-endian records.
///
/// Layout: `"MSDS"`, version `u32`, loss tag `u8` (0 squared error, 1 NLL)
/// and its parameter `u32`, record count `u64`, then per record: steps
/// `u32`, width `u32`, `steps * width` `f64` values, target tag `u8`
/// (0 values, 1 class), and either a `u32` count followed by that many `f64`
/// or a `u32` class index.
pub fn write_cache(dataset: &Dataset, out: &mut impl Write) -> Result<()> {
    let Inputs::Dense(seqs) = &dataset.inputs else {
        return Err(contract("only generated (dense) datasets can be cached"));
    };
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    let (tag, param) = match dataset.loss {
        LossKind::SquaredError { window } => (0u8, window as u32),
        LossKind::NegLogLikelihood { classes } => (1u8, classes as u32),
    };
    out.write_all(&[tag])?;
    out.write_all(&param.to_le_bytes())?;
    out.write_all(&(dataset.len() as u64).to_le_bytes())?;
    for (i, target) in dataset.targets.iter().enumerate() {
        let s = seqs.get(i);
        out.write_all(&(s.rows() as u32).to_le_bytes())?;
        out.write_all(&(s.cols() as u32).to_le_bytes())?;
        for v in s.data() {
            out.write_all(&v.to_le_bytes())?;
        }
        match target {
            Target::Values(v) => {
                out.write_all(&[0])?;
                out.write_all(&(v.len() as u32).to_le_bytes())?;
                for x in v {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            Target::Class(c) => {
                out.write_all(&[1])?;
                out.write_all(&(*c as u32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_cache(input: &mut impl Read) -> Result<Dataset> {
    let what = "dataset cache";
    let mut r = CacheReader { input, what };
    let magic = r.bytes::<4>()?;
    if &magic != CACHE_MAGIC {
        return Err(parse_err(what, "wrong magic"));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(parse_err(what, format!("unsupported version {version}")));
    }
    let loss = match (r.bytes::<1>()?[0], r.u32()? as usize) {
        (0, window) => LossKind::SquaredError { window },
        (1, classes) => LossKind::NegLogLikelihood { classes },
        (t, _) => return Err(parse_err(what, format!("unknown loss tag {t}"))),
    };
    let count = u64::from_le_bytes(r.bytes::<8>()?) as usize;
    let mut seqs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    let mut dim = 0;
    for _ in 0..count {
        let (t, d) = (r.u32()? as usize, r.u32()? as usize);
        dim = d;
        let data = (0..t * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        seqs.push(Tensor::matrix(t, d, data)?);
        targets.push(match r.bytes::<1>()?[0] {
            0 => {
                let k = r.u32()? as usize;
                Target::Values((0..k).map(|_| r.f64()).collect::<Result<_>>()?)
            }
            1 => Target::Class(r.u32()? as usize),
            t => return Err(parse_err(what, format!("unknown target tag {t}"))),
        });
    }
    Ok(Dataset {
        inputs: Inputs::Dense(DenseSequences::with_dim(seqs, dim)?),
        targets,
        loss,
    })
}

struct CacheReader<'a, R> {
    input: &'a mut R,
    what: &'static str,
}

impl<R: Read> CacheReader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.input
            .read_exact(&mut buf)
            .map_err(|e| parse_err(self.what, format!("truncated record: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn copy(count: usize, seed: u64) -> Dataset {
        gen_copy_first_input(&CopyFirstInputSpec { length: 10, count, seed }).unwrap()
    }

    #[test]
    fn copy_target_is_first_input() {
        let d = copy(20, 1);
        for i in 0..d.len() {
            assert_eq!(d.targets[i], Target::Values(vec![d.sequence(i).data()[0]]));
        }
        assert_eq!(copy(5, 3).sequence(4), copy(5, 3).sequence(4));
        assert_ne!(copy(5, 3).sequence(0), copy(5, 4).sequence(0));
    }

    #[test]
    fn denoising_marks() {
        let spec = DenoisingSpec { length: 30, forget: 10, count: 200, seed: 7 };
        let d = gen_denoising(&spec).unwrap();
        for i in 0..d.len() {
            let s = d.sequence(i);
            let marked: Vec<usize> = (0..30).filter(|&k| s.row(k)[1] == 1.0).collect();
            assert_eq!(marked.len(), 5);
            assert!(*marked.last().unwrap() < 20);
            let want: Vec<f64> = marked.iter().map(|&k| s.row(k)[0]).collect();
            assert_eq!(d.targets[i], Target::Values(want));
        }
        assert!(gen_denoising(&DenoisingSpec { length: 14, forget: 10, count: 1, seed: 0 }).is_err());
        assert!(gen_denoising(&DenoisingSpec { length: 30, forget: 4, count: 1, seed: 0 }).is_err());
    }

    #[test]
    fn loss_values() {
        let reg = LossKind::SquaredError { window: 1 };
        let t = Target::Values(vec![0.3]);
        assert_eq!(task_loss(reg, &Tensor::matrix(1, 1, vec![0.3]).unwrap(), &t).unwrap(), 0.0);
        let cls = LossKind::NegLogLikelihood { classes: 10 };
        let l = task_loss(cls, &Tensor::zeros(&[1, 10]), &Target::Class(3)).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!(task_loss(cls, &Tensor::zeros(&[1, 9]), &Target::Class(3)).is_err());
    }

    fn tiny_mnist() -> MnistImages {
        let pixels = (0..3 * MNIST_PIXELS).map(|i| (i % 256) as u8).collect();
        MnistImages { pixels, labels: vec![0, 7, 9] }
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let m = tiny_mnist();
        let (img, lab) = write_idx(&m);
        let (n, px) = parse_idx_images(&img).unwrap();
        assert_eq!((n, px), (3, m.pixels.clone()));
        assert_eq!(parse_idx_labels(&lab).unwrap(), m.labels);
        let mut bad = img.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Parse { .. })));
        assert!(parse_idx_images(&img[..100]).is_err());
        let mut bad_label = lab.clone();
        bad_label[9] = 10;
        assert!(parse_idx_labels(&bad_label).is_err());
    }

    #[test]
    fn line_mode_layout() {
        let m = Arc::new(tiny_mnist());
        let ident: Vec<usize> = (0..MNIST_PIXELS).collect();
        let s = MnistSequences::new(m.clone(), ident, MnistMode::Line { black_lines: 0 }).unwrap();
        let seq = s.sequence(1);
        assert_eq!(seq.shape(), &[28, 28]);
        for r in 0..28 {
            let want: Vec<f64> = m.image(1)[r * 28..(r + 1) * 28].iter().map(|&p| p as f64 / 255.0).collect();
            assert_eq!(seq.row(r), &want[..]);
        }
        let d = make_permuted_sequences(m, &PermutedMnistSpec {
            mode: MnistMode::Line { black_lines: 72 },
            permutation_seed: 0,
        })
        .unwrap();
        assert_eq!(d.seq_len(0), 100);
        assert!(d.sequence(0).row(99).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_round_trip() {
        let spec = DenoisingSpec { length: 12, forget: 5, count: 4, seed: 2 };
        let d = gen_denoising(&spec).unwrap();
        let mut buf = Vec::new();
        write_cache(&d, &mut buf).unwrap();
        let back = read_cache(&mut buf.as_slice()).unwrap();
        assert_eq!(back.targets, d.targets);
        assert_eq!(back.loss, d.loss);
        for i in 0..4 {
            assert_eq!(back.sequence(i), d.sequence(i));
        }
        assert!(read_cache(&mut &buf[..buf.len() - 3]).is_err());
    }
}
