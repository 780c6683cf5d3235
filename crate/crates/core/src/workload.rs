//! MNIST ingestion and single-layer binary network inference on a subarray.
//!
//! Mapping: each image is resident in the top cells of one row (pixel i in
//! column i). Neuron j's weight vector drives the WLTs (logic-1 weights at
//! V_DD, logic-0 floated) and its result lands in bottom column j. A batch of
//! P·⌊n_row/P⌋ images takes P steps, i.e. ⌊n_row/P⌋ images per step.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{estimate_energy, threshold_window, tmvm_execute, AnalyticModel, ExecMode, SubarrayState};
use crate::design::Design;
use crate::device::CellState;
use crate::drive::{BlDrive, DrivePattern};
use crate::error::XbarError;

/// Side of a downscaled image.
pub const SIDE: usize = 11;
/// Default binarization threshold on 0..255 intensities.
pub const DEFAULT_THRESHOLD: u8 = 128;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("{file}: bad magic {found:#010x}, expected {expected:#010x}")]
    Magic { file: String, found: u32, expected: u32 },
    #[error("{file}: truncated ({have} bytes, header needs {need})")]
    Truncated { file: String, have: usize, need: usize },
    #[error("{0} images but {1} labels")]
    CountMismatch(usize, usize),
    #[error("label {0} out of range")]
    BadLabel(u8),
    #[error("model: {0}")]
    Model(String),
    #[error("model with {inputs} inputs and {outputs} outputs does not fit a {n_row}x{n_column} subarray")]
    TooLarge { inputs: usize, outputs: usize, n_row: usize, n_column: usize },
    #[error("{0} predictions but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no supply realizes threshold {0} on every row")]
    NoVoltage(usize),
    #[error("step {step} disturbed {cells} cell(s)")]
    Disturb { step: usize, cells: usize },
}

/// Grayscale images with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub rows: usize,
    pub cols: usize,
    /// One rows·cols buffer per image
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn header(file: &str, b: &[u8], magic: u32, words: usize) -> Result<Vec<u32>, WorkloadError> {
    if b.len() < 4 * words {
        return Err(WorkloadError::Truncated { file: file.into(), have: b.len(), need: 4 * words });
    }
    let found = be_u32(b, 0);
    if found != magic {
        return Err(WorkloadError::Magic { file: file.into(), found, expected: magic });
    }
    Ok((1..words).map(|i| be_u32(b, 4 * i)).collect())
}

/// Parses IDX image and label buffers.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<MnistSet, WorkloadError> {
    let h = header("images", images, IMAGE_MAGIC, 4)?;
    let (n, rows, cols) = (h[0] as usize, h[1] as usize, h[2] as usize);
    let need = 16 + n * rows * cols;
    if images.len() < need {
        return Err(WorkloadError::Truncated { file: "images".into(), have: images.len(), need });
    }
    let l = header("labels", labels, LABEL_MAGIC, 2)?;
    let nl = l[0] as usize;
    if labels.len() < 8 + nl {
        return Err(WorkloadError::Truncated { file: "labels".into(), have: labels.len(), need: 8 + nl });
    }
    if nl != n {
        return Err(WorkloadError::CountMismatch(n, nl));
    }
    let labels = labels[8..8 + n].to_vec();
    if let Some(&bad) = labels.iter().find(|&&x| x > 9) {
        return Err(WorkloadError::BadLabel(bad));
    }
    let images = images[16..need].chunks(rows * cols).map(<[u8]>::to_vec).collect();
    Ok(MnistSet { rows, cols, images, labels })
}

/// Loads `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte` from `dir`.
pub fn load_mnist(dir: &Path) -> Result<MnistSet, XbarError> {
    let images = fs::read(dir.join("t10k-images-idx3-ubyte"))?;
    let labels = fs::read(dir.join("t10k-labels-idx1-ubyte"))?;
    Ok(parse_idx(&images, &labels)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryImage {
    /// Row-major SIDE×SIDE bits
    pub pixels: Vec<bool>,
    pub label: u8,
}

/// Pools an `n`×`n` image to SIDE×SIDE by exact area averaging.
pub fn area_pool(img: &[u8], n: usize) -> Vec<f64> {
    let s = n as f64 / SIDE as f64;
    let mut w = vec![vec![0.0; n]; SIDE];
    for (i, row) in w.iter_mut().enumerate() {
        let (lo, hi) = (i as f64 * s, (i + 1) as f64 * s);
        for (p, x) in row.iter_mut().enumerate() {
            *x = ((hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0)) / s;
        }
    }
    let mut out = vec![0.0; SIDE * SIDE];
    for i in 0..SIDE {
        for j in 0..SIDE {
            let mut acc = 0.0;
            for y in 0..n {
                if w[i][y] == 0.0 {
                    continue;
                }
                let mut r = 0.0;
                for x in 0..n {
                    r += w[j][x] * img[y * n + x] as f64;
                }
                acc += w[i][y] * r;
            }
            out[i * SIDE + j] = acc;
        }
    }
    out
}

/// Area-average pooling to 11×11, then pixel = pooled ≥ threshold.
pub fn downscale_binarize(img: &[u8], side: usize, label: u8, threshold: u8) -> BinaryImage {
    let pixels = area_pool(img, side).into_iter().map(|v| v >= threshold as f64).collect();
    BinaryImage { pixels, label }
}

pub fn binarize_set(set: &MnistSet, threshold: u8) -> Vec<BinaryImage> {
    set.images
        .iter()
        .zip(&set.labels)
        .map(|(im, &l)| downscale_binarize(im, set.rows, l, threshold))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryNnModel {
    /// Per layer: one weight row per neuron
    pub layers: Vec<Vec<Vec<bool>>>,
    /// Active-input threshold per layer
    pub thresholds: Vec<usize>,
}

fn read_bits(path: &Path) -> Result<Vec<Vec<bool>>, XbarError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| match f {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(WorkloadError::Model(format!("{}: entry {other:?} is not 0/1", path.display()))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a 0/1 CSV matrix (no header).
pub fn load_bit_matrix(path: &Path) -> Result<Vec<Vec<bool>>, XbarError> {
    let m = read_bits(path)?;
    if m.is_empty() || m.iter().any(|r| r.len() != m[0].len()) {
        return Err(WorkloadError::Model(format!("{}: ragged or empty matrix", path.display())).into());
    }
    Ok(m)
}

impl BinaryNnModel {
    pub fn new(layers: Vec<Vec<Vec<bool>>>, thresholds: Vec<usize>) -> Result<Self, WorkloadError> {
        if layers.is_empty() || layers.len() != thresholds.len() {
            return Err(WorkloadError::Model(format!(
                "{} layers but {} thresholds",
                layers.len(),
                thresholds.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            let fan_in = l.first().map_or(0, Vec::len);
            if l.is_empty() || l.iter().any(|r| r.len() != fan_in) {
                return Err(WorkloadError::Model(format!("layer {i} ragged or empty")));
            }
            if i > 0 && fan_in != layers[i - 1].len() {
                return Err(WorkloadError::Model(format!(
                    "layer {i} fan-in {fan_in} vs {} outputs of layer {}",
                    layers[i - 1].len(),
                    i - 1
                )));
            }
            if thresholds[i] > fan_in {
                return Err(WorkloadError::Model(format!("layer {i} threshold above fan-in")));
            }
        }
        Ok(Self { layers, thresholds })
    }

    /// Loads `layer{i}.csv` files and `thresholds.csv` (header `layer,threshold`).
    pub fn load(dir: &Path) -> Result<Self, XbarError> {
        let mut rdr = csv::Reader::from_path(dir.join("thresholds.csv"))?;
        let mut thresholds: Vec<(usize, usize)> = Vec::new();
        for rec in rdr.deserialize() {
            thresholds.push(rec?);
        }
        thresholds.sort();
        let mut layers = Vec::new();
        for (i, &(layer, _)) in thresholds.iter().enumerate() {
            if layer != i {
                return Err(WorkloadError::Model(format!("threshold list skips layer {i}")).into());
            }
            layers.push(load_bit_matrix(&dir.join(format!("layer{i}.csv")))?);
        }
        Ok(Self::new(layers, thresholds.into_iter().map(|t| t.1).collect())?)
    }

    pub fn inputs(&self) -> usize {
        self.layers[0][0].len()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Vec::len)
    }
}

/// Relative score difference below which two outputs tie. Currents of
/// outputs with equal input sums differ only by summation rounding, while
/// distinct sums differ by at least ~G_A/ΣG ≈ 1e-5.
pub const SCORE_RTOL: f64 = 1e-9;

/// Prediction from output bits: the unique set bit, otherwise the highest
/// score (first index on ties).
pub fn decide(bits: &[bool], score: &[f64]) -> usize {
    let set: Vec<usize> = (0..bits.len()).filter(|&j| bits[j]).collect();
    if set.len() == 1 {
        return set[0];
    }
    let mut best = 0;
    for j in 1..score.len() {
        if score[j] > score[best] + SCORE_RTOL * score[best].abs() {
            best = j;
        }
    }
    best
}

/// Software reference for a single-layer model: bits and prediction.
///
/// The score of neuron j is (active count, fan-in) in lexicographic order,
/// which is the order of the input conductance sum a·G_C + (n − a)·G_A for
/// any fan-in below G_C/G_A.
pub fn reference_predict(model: &BinaryNnModel, image: &BinaryImage) -> (Vec<bool>, usize) {
    let w = &model.layers[0];
    let k = model.thresholds[0];
    let mut bits = Vec::with_capacity(w.len());
    let mut score = Vec::with_capacity(w.len());
    for row in w {
        let a = row.iter().zip(&image.pixels).filter(|(w, x)| **w && **x).count();
        let n = row.iter().filter(|b| **b).count();
        bits.push(a >= k);
        score.push(a as f64 * 1e6 + n as f64);
    }
    let p = decide(&bits, &score);
    (bits, p)
}

pub fn evaluate_accuracy(predictions: &[usize], labels: &[u8]) -> Result<f64, WorkloadError> {
    if predictions.len() != labels.len() {
        return Err(WorkloadError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let ok = predictions.iter().zip(labels).filter(|(p, l)| **p == **l as usize).count();
    Ok(ok as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub predictions: Vec<usize>,
    /// Output bits per image
    pub bits: Vec<Vec<bool>>,
    pub n_images: usize,
    pub images_per_step: usize,
    pub steps: usize,
    /// [V]
    pub v_dd: f64,
    /// [J]
    pub energy: f64,
    /// [J]
    pub energy_per_image: f64,
}

/// Supply window realizing the model's first-layer threshold on every row
/// of the design.
pub fn layer_window(model: &BinaryNnModel, design: &Design) -> Result<crate::margin::VoltageWindow, XbarError> {
    let paths = AnalyticModel::new(design)?.paths();
    let fan_in: Vec<usize> = model.layers[0].iter().map(|r| r.iter().filter(|b| **b).count()).collect();
    Ok(threshold_window(&paths, model.thresholds[0], &fan_in, &design.cell))
}

/// Smallest cell-length multiple 1, 1 + step, … ≤ `max_factor` at which the
/// model's threshold window reaches `min_width` relative width. Returns the
/// lengthened design and the multiple.
pub fn fit_cell_length(
    model: &BinaryNnModel,
    design: &Design,
    step: f64,
    max_factor: f64,
    min_width: f64,
) -> Result<Option<(Design, f64)>, XbarError> {
    let mut i = 0;
    loop {
        let f = 1.0 + step * i as f64;
        if f > max_factor + 1e-12 {
            return Ok(None);
        }
        let d = design.clone().with_geometry(|g| g.l_cell *= f);
        let w = layer_window(model, &d)?;
        if !w.empty && w.relative_width() >= min_width {
            return Ok(Some((d, f)));
        }
        i += 1;
    }
}

/// Runs a single-layer model over `images` on one subarray design. With
/// `v_dd` None the supply is the middle of [`layer_window`].
pub fn map_and_run(
    model: &BinaryNnModel,
    images: &[BinaryImage],
    design: &Design,
    v_dd: Option<f64>,
    mode: ExecMode,
) -> Result<RunReport, XbarError> {
    let g = &design.geometry;
    let (n_in, p) = (model.inputs(), model.outputs());
    if model.layers.len() != 1 || n_in > g.n_column || p > g.n_column || p > g.n_row {
        return Err(WorkloadError::TooLarge { inputs: n_in, outputs: p, n_row: g.n_row, n_column: g.n_column }.into());
    }
    let v = match v_dd {
        Some(v) => v,
        None => {
            let w = layer_window(model, design)?;
            if w.empty {
                return Err(WorkloadError::NoVoltage(model.thresholds[0]).into());
            }
            w.mid()
        }
    };
    let per_step = g.n_row / p;
    let batch = per_step * p;
    let chunks: Vec<&[BinaryImage]> = images.chunks(batch).collect();
    let duration = design.cell.t_set;

    let results = chunks
        .par_iter()
        .enumerate()
        .map(|(b, chunk)| -> Result<(Vec<Vec<bool>>, Vec<Vec<f64>>, f64), XbarError> {
            let mut state = SubarrayState::new(g.n_row, g.n_column);
            for (r, im) in chunk.iter().enumerate() {
                for (c, &px) in im.pixels.iter().enumerate() {
                    state.top.set(r, c, CellState::from_bit(px));
                }
            }
            let mut bits = vec![vec![false; p]; chunk.len()];
            let mut currents = vec![vec![0.0; p]; chunk.len()];
            let mut energy = 0.0;
            for (j, w) in model.layers[0].iter().enumerate() {
                let mut inputs = vec![false; g.n_column];
                inputs[..n_in].copy_from_slice(w);
                let mut drive = DrivePattern::binary(&inputs, j, g.n_row, v, duration);
                for r in chunk.len()..g.n_row {
                    drive.bl[r] = BlDrive::Float;
                }
                let out = tmvm_execute(design, &mut state, &drive, mode)?;
                if !out.disturb.is_empty() {
                    return Err(WorkloadError::Disturb { step: b * p + j, cells: out.disturb.entries.len() }.into());
                }
                energy += estimate_energy(&out.trace);
                for r in 0..chunk.len() {
                    bits[r][j] = out.bits[r].unwrap_or(false);
                    currents[r][j] = out.trace.row_currents[r];
                }
            }
            Ok((bits, currents, energy))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut all_bits = Vec::with_capacity(images.len());
    let mut predictions = Vec::with_capacity(images.len());
    let mut energy = 0.0;
    for (bits, currents, e) in results {
        for (b, i) in bits.iter().zip(&currents) {
            predictions.push(decide(b, i));
        }
        all_bits.extend(bits);
        energy += e;
    }
    let n = images.len();
    Ok(RunReport {
        predictions,
        bits: all_bits,
        n_images: n,
        images_per_step: per_step,
        steps: chunks.len() * p,
        v_dd: v,
        energy,
        energy_per_image: if n == 0 { 0.0 } else { energy / n as f64 },
    })
}
