//! Dataset ingestion and partitioning across nodes.
//!
//! Datasets are read from libsvm text (`label idx:val idx:val ...`, 1-based
//! ascending indices) and split into contiguous balanced blocks either by
//! samples or by features.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, ParseError, Result};
use crate::sparse::CscMatrix;

/// Design matrix `X` (`d × n`, one column per sample) with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    matrix: CscMatrix,
    labels: Vec<f64>,
}

impl SparseDataset {
    pub fn new(matrix: CscMatrix, labels: Vec<f64>) -> Result<Self> {
        Error::check_len("labels", matrix.ncols(), labels.len())?;
        Ok(SparseDataset { matrix, labels })
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Reads a libsvm file; names ending in `.gz` are decompressed on the fly.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        if path.extension().is_some_and(|e| e == "gz") {
            parse_libsvm(BufReader::new(GzDecoder::new(file)))
        } else {
            parse_libsvm(BufReader::new(file))
        }
    }

    /// Writes the dataset back out in libsvm format.
    pub fn write_libsvm(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        for j in 0..self.n() {
            write!(out, "{}", self.labels[j])?;
            let (rows, vals) = self.matrix.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                write!(out, " {}:{}", r + 1, v)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parses libsvm text. Blank lines are skipped; `d` is the largest index seen.
pub fn parse_libsvm(reader: impl Read) -> Result<SparseDataset> {
    let reader = BufReader::new(reader);
    let mut col_ptr = vec![0usize];
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else {
            continue;
        };
        let label: f64 = label.parse().map_err(|_| ParseError::Malformed {
            line: lineno,
            reason: format!("label {label:?} is not a number"),
        })?;
        let mut previous = 0usize;
        for tok in tokens {
            let malformed = |reason: String| ParseError::Malformed {
                line: lineno,
                reason,
            };
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| malformed(format!("expected idx:val, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| malformed(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(malformed("feature indices are 1-based".into()).into());
            }
            let val: f64 = val
                .parse()
                .map_err(|_| malformed(format!("bad feature value {val:?}")))?;
            if idx <= previous {
                return Err(ParseError::NonAscendingIndex {
                    line: lineno,
                    index: idx,
                    previous,
                }
                .into());
            }
            previous = idx;
            d = d.max(idx);
            row_idx.push(idx - 1);
            values.push(val);
        }
        labels.push(label);
        col_ptr.push(row_idx.len());
    }

    if labels.is_empty() {
        return Err(ParseError::EmptyFile.into());
    }
    // A file whose samples are all empty still has one feature slot.
    let d = d.max(1);
    SparseDataset::new(CscMatrix::from_parts(d, col_ptr, row_idx, values), labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PartitionMode {
    BySamples,
    ByFeatures,
}

/// Contiguous block boundaries over `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub mode: PartitionMode,
    boundaries: Vec<usize>,
}

impl Partition {
    /// Balanced split of `len` into `m` blocks; the first `len % m` blocks get
    /// one extra element.
    pub fn balanced(mode: PartitionMode, len: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("nodes", "must be at least 1"));
        }
        if m > len {
            return Err(Error::config(
                "nodes",
                format!("{m} nodes exceed the partitioned dimension {len}"),
            ));
        }
        let base = len / m;
        let extra = len % m;
        let mut boundaries = Vec::with_capacity(m + 1);
        boundaries.push(0);
        for j in 0..m {
            let size = base + usize::from(j < extra);
            boundaries.push(boundaries[j] + size);
        }
        Ok(Partition { mode, boundaries })
    }

    pub fn blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        self.boundaries[j]..self.boundaries[j + 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }
}

/// One node's slice of the data.
///
/// `BySamples`: `d × n_j` matrix of the node's samples and their labels.
/// `ByFeatures`: `d_j × n` matrix of the node's feature rows (indices local,
/// starting at zero) and all `n` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub node: usize,
    pub mode: PartitionMode,
    /// Global index of the first sample (BySamples) or feature (ByFeatures).
    pub offset: usize,
    pub matrix: CscMatrix,
    pub labels: Vec<f64>,
    pub n_total: usize,
    pub d_total: usize,
}

impl DatasetShard {
    /// Global index range this shard owns along its partitioned dimension.
    pub fn owned(&self) -> Range<usize> {
        let len = match self.mode {
            PartitionMode::BySamples => self.matrix.ncols(),
            PartitionMode::ByFeatures => self.matrix.nrows(),
        };
        self.offset..self.offset + len
    }
}

pub fn partition(ds: &SparseDataset, m: usize, mode: PartitionMode) -> Result<Vec<DatasetShard>> {
    let len = match mode {
        PartitionMode::BySamples => ds.n(),
        PartitionMode::ByFeatures => ds.d(),
    };
    let part = Partition::balanced(mode, len, m)?;
    Ok((0..m)
        .map(|j| {
            let range = part.block(j);
            let (matrix, labels) = match mode {
                PartitionMode::BySamples => (
                    ds.matrix.select_cols(range.clone()),
                    ds.labels[range.clone()].to_vec(),
                ),
                PartitionMode::ByFeatures => {
                    (ds.matrix.select_rows(range.clone()), ds.labels.clone())
                }
            };
            DatasetShard {
                node: j,
                mode,
                offset: range.start,
                matrix,
                labels,
                n_total: ds.n(),
                d_total: ds.d(),
            }
        })
        .collect())
}

/// Inverse of [`partition`]: concatenates shards in node order.
pub fn reassemble(shards: &[DatasetShard]) -> Result<SparseDataset> {
    let first = shards
        .first()
        .ok_or_else(|| Error::config("shards", "no shards to reassemble"))?;
    let parts: Vec<CscMatrix> = shards.iter().map(|s| s.matrix.clone()).collect();
    match first.mode {
        PartitionMode::BySamples => {
            let labels = shards.iter().flat_map(|s| s.labels.iter().copied()).collect();
            SparseDataset::new(CscMatrix::hstack(&parts), labels)
        }
        PartitionMode::ByFeatures => {
            SparseDataset::new(CscMatrix::vstack(&parts), first.labels.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let ds = parse_libsvm("1 1:0.5 3:2.0\n-1 2:1.0".as_bytes()).unwrap();
        assert_eq!((ds.n(), ds.d(), ds.matrix().nnz()), (2, 3, 3));
        assert_eq!(ds.labels(), &[1.0, -1.0]);
        assert_eq!(ds.matrix().col(0), (&[0usize, 2][..], &[0.5, 2.0][..]));
    }

    #[test]
    fn rejects_empty_input() {
        let err = parse_libsvm("".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse(ParseError::EmptyFile)));
        let err = parse_libsvm("\n  \n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse(ParseError::EmptyFile)));
    }

    #[test]
    fn rejects_descending_indices() {
        let err = parse_libsvm("1 3:1 2:1".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse(ParseError::NonAscendingIndex { line: 1, index: 2, previous: 3 })
        ));
        let err = parse_libsvm("1 1:1\n1 2:1 2:3".as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse(ParseError::NonAscendingIndex { line: 2, .. })
        ));
    }

    #[test]
    fn reports_malformed_line_number() {
        for bad in ["1 1:1\n-1 x:2", "1 1:1\nfoo 1:1", "1 1:1\n1 0:1", "1 1:1\n1 2"] {
            match parse_libsvm(bad.as_bytes()).unwrap_err() {
                Error::Parse(ParseError::Malformed { line, .. }) => assert_eq!(line, 2, "{bad}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn balanced_sizes() {
        let p = Partition::balanced(PartitionMode::BySamples, 10, 4).unwrap();
        assert_eq!(p.sizes(), vec![3, 3, 2, 2]);
        assert!(Partition::balanced(PartitionMode::ByFeatures, 3, 4).is_err());
        assert!(Partition::balanced(PartitionMode::ByFeatures, 3, 0).is_err());
    }

    #[test]
    fn single_node_shard_is_whole_dataset() {
        let ds = parse_libsvm("1 1:0.5 3:2.0\n-1 2:1.0\n1 3:4".as_bytes()).unwrap();
        for mode in [PartitionMode::BySamples, PartitionMode::ByFeatures] {
            let shards = partition(&ds, 1, mode).unwrap();
            assert_eq!(shards.len(), 1);
            assert_eq!(&shards[0].matrix, ds.matrix());
            assert_eq!(shards[0].labels, ds.labels());
        }
    }

    #[test]
    fn feature_shards_see_all_samples() {
        let ds = parse_libsvm("1 1:1 7:2\n-1 2:1 5:3\n1 3:4 6:1".as_bytes()).unwrap();
        let shards = partition(&ds, 3, PartitionMode::ByFeatures).unwrap();
        let sizes: Vec<_> = shards.iter().map(|s| s.matrix.nrows()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        for s in &shards {
            assert_eq!(s.matrix.ncols(), 3);
            assert_eq!(s.labels.len(), 3);
        }
        assert_eq!(shards[2].offset, 5);
        assert_eq!(shards[2].owned(), 5..7);
    }
}
