#![allow(dead_code)]

use hmd_core::matrix::LabelMatrix;
use hmd_core::Matrix;
use hmd_core::rng::{rng_from, Rng};
use hmd_core::seqio::{Dataset, LabeledSequence};
use hmd_core::{embed, FeatureMatrix};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(n, d, data).unwrap()
}

pub fn gaussian_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Rows of `x` and `l` labels, label `j` set when the sum of columns `j*block..(j+1)*block`
/// weighted by random normals is positive. Returns (clean, noisy) labels; each noisy bit is
/// flipped with probability `noise`.
pub fn linear_rules(rng: &mut Rng, x: &Matrix, l: usize, block: usize, noise: f64) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let weights: Vec<Vec<f64>> = (0..l).map(|_| gaussian_vec(rng, block)).collect();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for i in 0..x.n_rows() {
        let row = x.row(i);
        let c: Vec<bool> = (0..l)
            .map(|j| (0..block).map(|k| weights[j][k] * row[j * block + k]).sum::<f64>() > 0.0)
            .collect();
        let nz: Vec<bool> = c.iter().map(|&b| b ^ rng.random_bool(noise)).collect();
        clean.push(c);
        noisy.push(nz);
    }
    (clean, noisy)
}

pub fn label_matrix(rows: &[Vec<bool>]) -> LabelMatrix {
    LabelMatrix::from_rows(rows).unwrap()
}

fn peptide(rng: &mut Rng) -> String {
    let aa = b"ACDEFGHIKLMNPQRSTVWY";
    let len = rng.random_range(5..30);
    (0..len).map(|_| aa[rng.random_range(0..20)] as char).collect()
}

/// `n` records with ids `s0..`, features of width `d`; record `i` is an AMP when `x[i][0] > 0`
/// and then carries `l` activity bits `x[i][1 + j % (d - 1)] > 0`.
pub fn two_level(seed: u64, n: usize, d: usize, l: usize) -> (Dataset, FeatureMatrix) {
    let mut rng = rng_from(seed);
    let x = gaussian_matrix(&mut rng, n, d);
    let names: Vec<String> = (0..l).map(|j| format!("label{j}")).collect();
    let records: Vec<LabeledSequence> = (0..n)
        .map(|i| {
            let row = x.row(i);
            let amp = row[0] > 0.0;
            LabeledSequence {
                id: format!("s{i}"),
                residues: peptide(&mut rng),
                amp_label: Some(amp),
                activity_labels: amp.then(|| (0..l).map(|j| row[1 + j % (d - 1)] > 0.0).collect()),
            }
        })
        .collect();
    let ids = records.iter().map(|r| r.id.clone()).collect();
    let mut dataset = Dataset::new(records);
    dataset.label_names = names;
    let features = FeatureMatrix::new(ids, x, embed::FeatureSource::EmbeddingFile).unwrap();
    (dataset, features)
}

/// Dataset of positives only, with the given activity rows.
pub fn multilabel_dataset(rows: &[Vec<bool>]) -> Dataset {
    let l = rows.first().map_or(0, Vec::len);
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, r)| LabeledSequence {
            id: format!("m{i}"),
            residues: "ACDEFGHIK".into(),
            amp_label: Some(true),
            activity_labels: Some(r.clone()),
        })
        .collect();
    let mut d = Dataset::new(records);
    d.label_names = (0..l).map(|j| format!("label{j}")).collect();
    d
}
