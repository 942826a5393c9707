//! Synthetic data: Gaussian class mixtures for the classifier experiments and
//! three-source Markov chains for the sequence case study.
//!
//! Generation is a pure function of its parameters: the same seed always
//! reproduces the same bytes on disk. Test/train membership is decided at
//! generation time (derived from the dataset seed alone), so every split of a
//! dataset shares one held-out test set.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Held-out fraction per class, fixed for the whole lab.
pub const TEST_FRACTION: f64 = 0.2;

/// Salt so the test-split stream never collides with the sampling stream.
const TEST_SPLIT_SALT: u64 = 0x7e57_5a17;

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// n x d_in raw inputs (before any feature extraction).
    pub features: Array2<f64>,
    /// Class labels in 0..class_count.
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Seed the dataset was generated from; also keys the test split.
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.features.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.labels.len() {
            return Err(Error::parameter(format!(
                "feature rows {} != label count {}",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::parameter(format!(
                "label {bad} outside 0..{}",
                self.class_count
            )));
        }
        Ok(())
    }
}

/// Which samples are forgotten, kept, and held out. Forget and retain
/// partition the training indices; test is disjoint from both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![0u8; n];
        for (name, set) in [
            ("forget", &self.forget),
            ("retain", &self.retain),
            ("test", &self.test),
        ] {
            for &i in set {
                if i >= n {
                    return Err(Error::parameter(format!("{name} index {i} out of range {n}")));
                }
                seen[i] += 1;
                if seen[i] > 1 {
                    return Err(Error::parameter(format!("index {i} appears in two splits")));
                }
            }
        }
        if seen.iter().any(|&c| c == 0) {
            return Err(Error::parameter("splits do not cover every sample"));
        }
        if self.forget.is_empty() {
            return Err(Error::parameter("forget split is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Forget every training sample of one class.
    ClassWise { target: usize },
    /// Forget a seeded random fraction of the training samples.
    SampleRandom { fraction: f64, seed: u64 },
}

/// Isotropic Gaussian blobs with orthonormal unit means.
///
/// Means are the rows of a seeded random orthonormal frame, so every pair of
/// class centers sits exactly sqrt(2) apart and `spread` (the per-coordinate
/// standard deviation) alone controls class overlap. Requires
/// class_count <= d_in for the frame to exist.
pub fn gen_gaussian_classes(
    class_count: usize,
    d_in: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if class_count < 2 {
        return Err(Error::parameter("need at least two classes"));
    }
    if d_in < 2 {
        return Err(Error::parameter("need d_in >= 2"));
    }
    if class_count > d_in {
        return Err(Error::parameter(format!(
            "orthonormal mean placement needs class_count <= d_in ({class_count} > {d_in})"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::parameter("n_per_class must be positive"));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::parameter(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = orthonormal_rows(class_count, d_in, &mut rng)?;
    let n = class_count * n_per_class;
    let mut features = Array2::<f64>::zeros((n, d_in));
    let mut labels = Vec::with_capacity(n);
    for c in 0..class_count {
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for j in 0..d_in {
                let z: f64 = rng.sample(StandardNormal);
                features[[row, j]] = means[[c, j]] + spread * z;
            }
            labels.push(c);
        }
    }
    Ok(LabeledDataset {
        features,
        labels,
        class_count,
        seed,
    })
}

/// Gram-Schmidt on seeded Gaussian draws. Rows come out orthonormal; a
/// near-dependent draw (vanishing residual) is rejected rather than patched.
fn orthonormal_rows(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut rows = Array2::<f64>::zeros((k, d));
    for i in 0..k {
        let mut v = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        for p in 0..i {
            let proj = v.dot(&rows.row(p));
            v.iter_mut()
                .zip(rows.row(p).iter())
                .for_each(|(vj, pj)| *vj -= proj * pj);
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-8 {
            return Err(Error::numeric("degenerate draw while orthonormalizing means"));
        }
        rows.row_mut(i).assign(&(&v / norm));
    }
    Ok(rows)
}

/// Per-class held-out indices, a pure function of the dataset seed and labels.
fn test_indices(ds: &LabeledDataset) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(ds.seed ^ TEST_SPLIT_SALT);
    let mut test = Vec::new();
    for c in 0..ds.class_count {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        members.shuffle(&mut rng);
        let k = (TEST_FRACTION * members.len() as f64).floor() as usize;
        test.extend_from_slice(&members[..k]);
    }
    test.sort_unstable();
    test
}

/// Carves forget/retain/test index sets. The test set is the stratified
/// holdout fixed by the dataset seed; the mode only partitions the remainder.
pub fn make_split(ds: &LabeledDataset, mode: SplitMode) -> Result<SplitSpec> {
    ds.validate()?;
    let test = test_indices(ds);
    let in_test = {
        let mut mask = vec![false; ds.len()];
        for &i in &test {
            mask[i] = true;
        }
        mask
    };
    let train: Vec<usize> = (0..ds.len()).filter(|&i| !in_test[i]).collect();
    let (forget, retain): (Vec<usize>, Vec<usize>) = match mode {
        SplitMode::ClassWise { target } => {
            if target >= ds.class_count {
                return Err(Error::parameter(format!(
                    "class_wise target {target} outside 0..{}",
                    ds.class_count
                )));
            }
            train.iter().partition(|&&i| ds.labels[i] == target)
        }
        SplitMode::SampleRandom { fraction, seed } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::parameter(format!(
                    "sample_random fraction must lie in (0, 1), got {fraction}"
                )));
            }
            let k = (fraction * train.len() as f64).round() as usize;
            if k == 0 || k >= train.len() {
                return Err(Error::parameter(format!(
                    "sample_random fraction {fraction} leaves an empty forget or retain set"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = rand::seq::index::sample(&mut rng, train.len(), k);
            let mut mask = vec![false; train.len()];
            for p in picks {
                mask[p] = true;
            }
            let forget = train
                .iter()
                .enumerate()
                .filter_map(|(p, &i)| mask[p].then_some(i))
                .collect();
            let retain = train
                .iter()
                .enumerate()
                .filter_map(|(p, &i)| (!mask[p]).then_some(i))
                .collect();
            (forget, retain)
        }
    };
    let spec = SplitSpec {
        forget,
        retain,
        test,
    };
    spec.validate(ds.len())?;
    Ok(spec)
}

/// Gathers the rows/labels of a subset, in index order.
pub fn take_subset(ds: &LabeledDataset, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut z = Array2::<f64>::zeros((indices.len(), ds.d_in()));
    let mut y = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        z.row_mut(row).assign(&ds.features.row(i));
        y.push(ds.labels[i]);
    }
    (z, y)
}

// ── persistence ──────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    d_in: usize,
    class_count: usize,
    n: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitSpec>,
}

/// Writes a dataset as one JSON header line followed by one CSV row per
/// sample (`f0,...,fD,label`). Floats use the shortest representation that
/// parses back to the same bits, so save/load round-trips exactly.
pub fn save_dataset(
    ds: &LabeledDataset,
    split: Option<&SplitSpec>,
    path: impl AsRef<Path>,
) -> Result<()> {
    ds.validate()?;
    if let Some(s) = split {
        s.validate(ds.len())?;
    }
    let header = DatasetHeader {
        d_in: ds.d_in(),
        class_count: ds.class_count,
        n: ds.len(),
        seed: ds.seed,
        split: split.cloned(),
    };
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::format(e.to_string()))?;
    writeln!(w)?;
    for i in 0..ds.len() {
        for j in 0..ds.d_in() {
            write!(w, "{},", ds.features[[i, j]])?;
        }
        writeln!(w, "{}", ds.labels[i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(LabeledDataset, Option<SplitSpec>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format("dataset file is empty"))??;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::format(format!("bad header: {e}")))?;
    let mut features = Array2::<f64>::zeros((header.n, header.d_in));
    let mut labels = Vec::with_capacity(header.n);
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if row >= header.n {
            return Err(Error::format(format!("more than {} data rows", header.n)));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.d_in + 1 {
            return Err(Error::format(format!(
                "row {row}: expected {} fields, got {}",
                header.d_in + 1,
                fields.len()
            )));
        }
        for j in 0..header.d_in {
            features[[row, j]] = fields[j]
                .parse::<f64>()
                .map_err(|e| Error::format(format!("row {row} col {j}: {e}")))?;
        }
        labels.push(
            fields[header.d_in]
                .parse::<usize>()
                .map_err(|e| Error::format(format!("row {row} label: {e}")))?,
        );
    }
    if labels.len() != header.n {
        return Err(Error::format(format!(
            "expected {} data rows, got {}",
            header.n,
            labels.len()
        )));
    }
    let ds = LabeledDataset {
        features,
        labels,
        class_count: header.class_count,
        seed: header.seed,
    };
    ds.validate()?;
    if let Some(s) = &header.split {
        s.validate(ds.len())?;
    }
    Ok((ds, header.split))
}

// ── Markov corpora ───────────────────────────────────────────────────────

/// Which chain a sequence was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Retain,
    Forget1,
    Forget2,
}

impl SourceTag {
    /// The three states a chain of this source walks on, uniformly.
    pub fn states(self) -> [u8; 3] {
        match self {
            SourceTag::Retain => [1, 2, 3],
            SourceTag::Forget1 => [4, 5, 6],
            SourceTag::Forget2 => [7, 8, 9],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Retain => "retain",
            SourceTag::Forget1 => "forget1",
            SourceTag::Forget2 => "forget2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retain" => Ok(SourceTag::Retain),
            "forget1" => Ok(SourceTag::Forget1),
            "forget2" => Ok(SourceTag::Forget2),
            other => Err(Error::format(format!("unknown source tag '{other}'"))),
        }
    }
}

pub const MARKOV_STATE_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovCorpus {
    /// One state sequence per row, states in 0..10 (state 0 never occurs in
    /// generated corpora; it exists so the model has an off-support context).
    pub sequences: Vec<Vec<u8>>,
    pub sources: Vec<SourceTag>,
    pub seed: u64,
}

impl MarkovCorpus {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Three memoryless chains over ten states: retain walks {1,2,3}, forget1
/// {4,5,6}, forget2 {7,8,9}, each uniform (first state included). Equal
/// sequence counts per source.
pub fn gen_markov_sequences(n_per_source: usize, len: usize, seed: u64) -> Result<MarkovCorpus> {
    if n_per_source == 0 {
        return Err(Error::parameter("n_per_source must be positive"));
    }
    if len < 2 {
        return Err(Error::parameter("sequences need length >= 2 to yield pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(3 * n_per_source);
    let mut sources = Vec::with_capacity(3 * n_per_source);
    for tag in [SourceTag::Retain, SourceTag::Forget1, SourceTag::Forget2] {
        let states = tag.states();
        for _ in 0..n_per_source {
            let seq: Vec<u8> = (0..len).map(|_| states[rng.random_range(0..3)]).collect();
            sequences.push(seq);
            sources.push(tag);
        }
    }
    Ok(MarkovCorpus {
        sequences,
        sources,
        seed,
    })
}

/// CSV with one sequence per row: `tag,s0,s1,...`.
pub fn save_corpus(corpus: &MarkovCorpus, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# seed={}", corpus.seed)?;
    for (seq, tag) in corpus.sequences.iter().zip(&corpus.sources) {
        write!(w, "{}", tag.name())?;
        for s in seq {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<MarkovCorpus> {
    let file = std::fs::File::open(path)?;
    let mut seed = 0;
    let mut sequences = Vec::new();
    let mut sources = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# seed=") {
            seed = rest
                .parse()
                .map_err(|e| Error::format(format!("line {lineno}: bad seed: {e}")))?;
            continue;
        }
        let mut fields = line.split(',');
        let tag = SourceTag::parse(
            fields
                .next()
                .ok_or_else(|| Error::format(format!("line {lineno}: empty row")))?,
        )?;
        let seq: Vec<u8> = fields
            .map(|f| {
                let s: u8 = f
                    .parse()
                    .map_err(|e| Error::format(format!("line {lineno}: bad state: {e}")))?;
                if s as usize >= MARKOV_STATE_COUNT {
                    return Err(Error::format(format!("line {lineno}: state {s} out of range")));
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        if seq.len() < 2 {
            return Err(Error::format(format!("line {lineno}: sequence shorter than 2")));
        }
        sequences.push(seq);
        sources.push(tag);
    }
    if sequences.is_empty() {
        return Err(Error::format("corpus file has no sequences"));
    }
    Ok(MarkovCorpus {
        sequences,
        sources,
        seed,
    })
}
