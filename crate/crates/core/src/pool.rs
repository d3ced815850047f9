//! Clip-level histograms: absolute sparse codes summed over a clip's patches.

use std::io;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::container::{Digest, Reader, Writer};
use crate::error::{Error, Result};
use crate::manifest::{Label, Trait, TraitLabels};
use crate::sparse::CodeVector;

pub const HISTOGRAM_SET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolOptions {
    /// Rescale each histogram to unit ℓ1 mass. Off by default: the raw sums
    /// are compared directly.
    pub l1_normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<f64>,
    pub clip_id: String,
    pub speaker_id: String,
    pub labels: Option<TraitLabels>,
}

impl Histogram {
    pub fn label(&self, t: Trait) -> Option<Label> {
        self.labels.map(|l| l[t.index()])
    }
}

/// Sums `|c|` over a sequence of codes.
pub fn pool(codes: &[CodeVector]) -> Result<Vec<f64>> {
    let first = codes.first().ok_or(Error::Empty("code sequence"))?;
    let m = first.values.len();
    let mut bins = vec![0.0; m];
    for code in codes {
        if code.values.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "code of length {} pooled with length {m}",
                code.values.len()
            )));
        }
        for (b, c) in bins.iter_mut().zip(&code.values) {
            *b += c.abs();
        }
    }
    Ok(bins)
}

/// [`pool`] over the columns of an `m x k` code matrix.
pub fn pool_columns(codes: ArrayView2<f64>, opts: PoolOptions) -> Result<Vec<f64>> {
    if codes.ncols() == 0 {
        return Err(Error::Empty("code sequence"));
    }
    let mut bins: Vec<f64> = codes
        .axis_iter(Axis(0))
        .map(|row| row.iter().map(|c| c.abs()).sum())
        .collect();
    if opts.l1_normalize {
        l1_normalize(&mut bins);
    }
    Ok(bins)
}

/// Scales to unit sum; a zero histogram stays zero.
pub fn l1_normalize(bins: &mut [f64]) {
    let total: f64 = bins.iter().sum();
    if total > 0.0 {
        bins.iter_mut().for_each(|b| *b /= total);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistogramSetMeta {
    pub clip_ids: Vec<String>,
    pub speaker_ids: Vec<String>,
    /// `+1`/`-1` per trait in O, C, E, A, N order; absent for unlabeled clips.
    pub labels: Vec<Option<[i8; 5]>>,
    pub pool: PoolOptions,
    pub dictionary_digest: Option<Digest>,
    pub seed: Option<u64>,
}

/// Histograms that share a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    pub histograms: Vec<Histogram>,
    pub pool: PoolOptions,
    pub dictionary_digest: Option<Digest>,
    pub seed: Option<u64>,
}

impl HistogramSet {
    pub fn n_bins(&self) -> usize {
        self.histograms.first().map_or(0, |h| h.bins.len())
    }

    /// `SPHS` container: magic, u32 version, u32 n, u32 m, `n*m` f64 one
    /// histogram after another, then the JSON metadata.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = self.n_bins();
        let mut w = Writer::new(b"SPHS", HISTOGRAM_SET_VERSION);
        w.len_u32(self.histograms.len())?;
        w.len_u32(m)?;
        for h in &self.histograms {
            if h.bins.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "histogram {} has {} bins, expected {m}",
                    h.clip_id,
                    h.bins.len()
                )));
            }
            h.bins.iter().for_each(|b| w.f64(*b));
        }
        let meta = HistogramSetMeta {
            clip_ids: self.histograms.iter().map(|h| h.clip_id.clone()).collect(),
            speaker_ids: self.histograms.iter().map(|h| h.speaker_id.clone()).collect(),
            labels: self
                .histograms
                .iter()
                .map(|h| h.labels.map(|l| l.map(|x| x.sign() as i8)))
                .collect(),
            pool: self.pool,
            dictionary_digest: self.dictionary_digest,
            seed: self.seed,
        };
        w.json(&meta)?;
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, b"SPHS")?;
        if version != HISTOGRAM_SET_VERSION {
            return Err(Error::Format(format!("unsupported SPHS version {version}")));
        }
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let data = r.f64s(n * m)?;
        let meta: HistogramSetMeta = r.json()?;
        r.expect_end()?;
        if meta.clip_ids.len() != n || meta.speaker_ids.len() != n || meta.labels.len() != n {
            return Err(Error::Format("histogram metadata does not match count".into()));
        }
        let mut histograms = Vec::with_capacity(n);
        for (i, bins) in data.chunks(m.max(1)).take(n).enumerate() {
            let labels = match meta.labels[i] {
                None => None,
                Some(raw) => {
                    let mut out = [Label::Pos; 5];
                    for (o, v) in out.iter_mut().zip(raw) {
                        *o = match v {
                            1 => Label::Pos,
                            -1 => Label::Neg,
                            _ => return Err(Error::Format(format!("label {v} is not +1/-1"))),
                        };
                    }
                    Some(out)
                }
            };
            histograms.push(Histogram {
                bins: if m == 0 { Vec::new() } else { bins.to_vec() },
                clip_id: meta.clip_ids[i].clone(),
                speaker_id: meta.speaker_ids[i].clone(),
                labels,
            });
        }
        Ok(HistogramSet {
            histograms,
            pool: meta.pool,
            dictionary_digest: meta.dictionary_digest,
            seed: meta.seed,
        })
    }

    /// One trait's view as CSV: `clip_id,speaker_id,label,b0,...`. Unlabeled
    /// clips get an empty label field.
    pub fn write_csv<W: io::Write>(&self, out: W, t: Trait) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["clip_id".to_string(), "speaker_id".into(), "label".into()];
        header.extend((0..self.n_bins()).map(|j| format!("b{j}")));
        w.write_record(&header)?;
        for h in &self.histograms {
            let mut row = vec![
                h.clip_id.clone(),
                h.speaker_id.clone(),
                h.label(t).map_or(String::new(), |l| l.to_string()),
            ];
            // `{:?}` prints the shortest string that parses back to the same f64
            row.extend(h.bins.iter().map(|b| format!("{b:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn bins_matrix(&self) -> Array2<f64> {
        let m = self.n_bins();
        Array2::from_shape_fn((self.histograms.len(), m), |(i, j)| self.histograms[i].bins[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn code(v: &[f64]) -> CodeVector {
        CodeVector { values: v.to_vec() }
    }

    #[test]
    fn pools_absolute_values() {
        assert_eq!(pool(&[code(&[1.0, -2.0]), code(&[0.0, 3.0])]).unwrap(), vec![1.0, 5.0]);
        assert_eq!(pool(&vec![code(&[0.0; 4]); 3]).unwrap(), vec![0.0; 4]);
        let m = array![[1.0, 0.0], [-2.0, 3.0]];
        assert_eq!(pool_columns(m.view(), PoolOptions::default()).unwrap(), vec![1.0, 5.0]);
    }

    #[test]
    fn pool_errors() {
        assert!(matches!(pool(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            pool(&[code(&[1.0]), code(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(pool_columns(Array2::zeros((3, 0)).view(), PoolOptions::default()).is_err());
    }

    #[test]
    fn optional_l1_normalization() {
        let m = array![[1.0, 0.0], [-2.0, 1.0]];
        let h = pool_columns(m.view(), PoolOptions { l1_normalize: true }).unwrap();
        assert_eq!(h, vec![0.25, 0.75]);
        let z = pool_columns(Array2::zeros((2, 3)).view(), PoolOptions { l1_normalize: true }).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    fn sample_set() -> HistogramSet {
        HistogramSet {
            histograms: vec![
                Histogram {
                    bins: vec![0.1, 2.0, 0.0],
                    clip_id: "a".into(),
                    speaker_id: "s1".into(),
                    labels: Some([Label::Pos, Label::Neg, Label::Pos, Label::Pos, Label::Neg]),
                },
                Histogram {
                    bins: vec![1.0 / 3.0, 0.0, 7.5],
                    clip_id: "b,c".into(),
                    speaker_id: "s2".into(),
                    labels: None,
                },
            ],
            pool: PoolOptions::default(),
            dictionary_digest: Some(Digest::of(b"dict")),
            seed: Some(9),
        }
    }

    #[test]
    fn binary_round_trip() {
        let set = sample_set();
        let bytes = set.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SPHS");
        assert_eq!(HistogramSet::from_bytes(&bytes).unwrap(), set);
        assert!(HistogramSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        sample_set().write_csv(&mut buf, Trait::C).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "clip_id,speaker_id,label,b0,b1,b2");
        assert_eq!(lines[1], "a,s1,-1,0.1,2.0,0.0");
        assert_eq!(lines[2], "\"b,c\",s2,,0.3333333333333333,0.0,7.5");
    }

    proptest! {
        #[test]
        fn pooling_is_permutation_invariant_and_additive(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..12),
            split in 0usize..12,
        ) {
            let codes: Vec<CodeVector> = rows.iter().map(|r| code(r)).collect();
            let h = pool(&codes).unwrap();
            prop_assert!(h.iter().all(|b| *b >= 0.0));
            let mut rev = codes.clone();
            rev.reverse();
            for (a, b) in h.iter().zip(pool(&rev).unwrap()) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
            let split = split.min(codes.len() - 1).max(1).min(codes.len());
            if split < codes.len() {
                let (x, y) = codes.split_at(split);
                let sum: Vec<f64> = pool(x).unwrap().iter().zip(pool(y).unwrap()).map(|(a, b)| a + b).collect();
                for (a, b) in h.iter().zip(sum) {
                    prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                }
            }
        }
    }
}
