//! Cluster-structured observations, validation, the treatment lattice, and
//! dataset CSV I/O.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest cluster accepted unless configured otherwise.
pub const DEFAULT_N_MAX: usize = 20;
/// Hard ceiling imposed by the packed `u64` treatment representation.
pub const PACKED_LIMIT: usize = 63;

/// A joint treatment assignment for one cluster, packed into an integer.
/// Bit `j` holds the treatment of unit `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreatmentVector {
    bits: u64,
    n: u8,
}

impl TreatmentVector {
    pub fn new(bits: u64, n: usize) -> Self {
        assert!(n <= PACKED_LIMIT, "cluster size {n} exceeds packed limit");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Self {
            bits: bits & mask,
            n: n as u8,
        }
    }

    pub fn from_slice(a: &[u8]) -> Self {
        let bits = a
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &v)| acc | (u64::from(v & 1) << j));
        Self::new(bits, a.len())
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn len(self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(self, j: usize) -> u8 {
        ((self.bits >> j) & 1) as u8
    }

    /// Number of treated units.
    #[inline]
    pub fn count(self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Treated proportion ā.
    pub fn mean(self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.count() as f64 / self.n as f64
        }
    }

    /// Treated proportion among units other than `j`; 0 for a singleton.
    pub fn mean_excluding(self, j: usize) -> f64 {
        if self.n <= 1 {
            return 0.0;
        }
        let others = self.count() - self.get(j) as usize;
        others as f64 / (self.n - 1) as f64
    }

    /// The same vector with unit `j` set to `t`.
    #[inline]
    pub fn with(self, j: usize, t: u8) -> Self {
        let bits = if t == 1 {
            self.bits | (1 << j)
        } else {
            self.bits & !(1 << j)
        };
        Self { bits, n: self.n }
    }

    /// Whether `self` and `other` agree on every unit except possibly `j`.
    #[inline]
    pub fn agrees_except(self, other: Self, j: usize) -> bool {
        (self.bits ^ other.bits) & !(1u64 << j) == 0
    }

    pub fn to_vec(self) -> Vec<u8> {
        (0..self.len()).map(|j| self.get(j)).collect()
    }
}

/// All `2^n` treatment vectors of a size-`n` cluster, in increasing packed
/// order (unit 0 is the least significant bit).
pub fn enumerate_treatments(n: usize) -> impl Iterator<Item = TreatmentVector> {
    assert!(n < PACKED_LIMIT, "cannot enumerate 2^{n} vectors");
    (0..(1u64 << n)).map(move |bits| TreatmentVector::new(bits, n))
}

/// Importance weight for a uniform subsample of the lattice: `2^n / r`.
/// Kept as the exact pair so that `weight × r = 2^n` holds without rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeWeight {
    lattice_size: f64,
    draws: usize,
}

impl LatticeWeight {
    pub fn exact() -> Self {
        Self {
            lattice_size: 1.0,
            draws: 1,
        }
    }

    /// Weight for `r` uniform draws from the size-`n` lattice.
    pub fn uniform(n: usize, r: usize) -> Self {
        Self {
            lattice_size: (n as f64).exp2(),
            draws: r,
        }
    }

    pub fn lattice_size(&self) -> f64 {
        self.lattice_size
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn value(&self) -> f64 {
        self.lattice_size / self.draws as f64
    }

    /// Scale a sum over the drawn vectors into an estimate of the full sum.
    pub fn apply(&self, sum: f64) -> f64 {
        sum * self.lattice_size / self.draws as f64
    }
}

/// Draw `r` vectors uniformly (with replacement) from the size-`n` lattice.
pub fn subsample_treatments(
    n: usize,
    r: usize,
    rng_seed: u64,
) -> (Vec<TreatmentVector>, LatticeWeight) {
    assert!(r >= 1, "subsample size must be positive");
    let mut rng = rng::stream(rng_seed, &[rng::tag::SUBSAMPLE, n as u64]);
    let draws = draw_uniform(&mut rng, n, r);
    (draws, LatticeWeight::uniform(n, r))
}

pub(crate) fn draw_uniform<R: Rng>(rng: &mut R, n: usize, r: usize) -> Vec<TreatmentVector> {
    let mask = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
    (0..r)
        .map(|_| TreatmentVector::new(rng.random::<u64>() & mask, n))
        .collect()
}

/// One cluster's record `(Y_i, A_i, X_i, N_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterObservation {
    pub id: String,
    y: Vec<f64>,
    a: Vec<u8>,
    /// Row-major `n × p` covariates.
    x: Vec<f64>,
    p: usize,
}

impl ClusterObservation {
    /// Build a cluster, checking the length invariants.
    pub fn new(id: impl Into<String>, y: Vec<f64>, a: Vec<u8>, x: Vec<f64>, p: usize) -> Result<Self> {
        let id = id.into();
        let n = y.len();
        if n == 0 {
            return Err(Error::RaggedCluster {
                cluster: id,
                what: "y",
                got: 0,
                expected: 1,
            });
        }
        if a.len() != n {
            return Err(Error::RaggedCluster {
                cluster: id,
                what: "a",
                got: a.len(),
                expected: n,
            });
        }
        if x.len() != n * p {
            return Err(Error::RaggedCluster {
                cluster: id,
                what: "x",
                got: if p == 0 { x.len() } else { x.len() / p },
                expected: n,
            });
        }
        if let Some(&v) = a.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryTreatment {
                cluster: id,
                value: f64::from(v),
            });
        }
        Ok(Self { id, y, a, x, p })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn x_row(&self, j: usize) -> &[f64] {
        &self.x[j * self.p..(j + 1) * self.p]
    }

    pub fn treatments(&self) -> TreatmentVector {
        TreatmentVector::from_slice(&self.a)
    }

    pub fn y_bar(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n() as f64
    }

    /// Reorder units by `perm` (unit `j` of the result is unit `perm[j]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n());
        let y = perm.iter().map(|&k| self.y[k]).collect();
        let a = perm.iter().map(|&k| self.a[k]).collect();
        let x = perm.iter().flat_map(|&k| self.x_row(k).to_vec()).collect();
        Self {
            id: self.id.clone(),
            y,
            a,
            x,
            p: self.p,
        }
    }
}

/// Unvalidated cluster input; treatments are kept as reals so that
/// non-binary codes can be reported rather than silently truncated.
#[derive(Debug, Clone, Default)]
pub struct RawCluster {
    pub id: String,
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub clusters: Vec<RawCluster>,
    pub column_names: Vec<String>,
}

/// A validated i.i.d. sample of clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clusters: Vec<ClusterObservation>,
    column_names: Vec<String>,
}

/// What validation learned about a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub m: usize,
    pub p: usize,
    pub units: usize,
    /// cluster size -> number of clusters
    pub size_histogram: BTreeMap<usize, usize>,
}

impl Dataset {
    /// Assemble already-built clusters, checking the shared-dimension and
    /// size bounds.
    pub fn from_clusters(
        clusters: Vec<ClusterObservation>,
        column_names: Vec<String>,
        n_max: usize,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = column_names.len();
        for c in &clusters {
            if c.p() != p {
                return Err(Error::CovariateDimension {
                    cluster: c.id.clone(),
                    got: c.p(),
                    expected: p,
                });
            }
            if c.n() > n_max.min(PACKED_LIMIT) {
                return Err(Error::ClusterTooLarge {
                    cluster: c.id.clone(),
                    size: c.n(),
                    n_max,
                });
            }
        }
        Ok(Self {
            clusters,
            column_names,
        })
    }

    pub fn clusters(&self) -> &[ClusterObservation] {
        &self.clusters
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn p(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn units(&self) -> usize {
        self.clusters.iter().map(ClusterObservation::n).sum()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut size_histogram = BTreeMap::new();
        for c in &self.clusters {
            *size_histogram.entry(c.n()).or_insert(0) += 1;
        }
        DatasetSummary {
            m: self.m(),
            p: self.p(),
            units: self.units(),
            size_histogram,
        }
    }

    /// The sub-dataset made of the clusters at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            clusters: indices.iter().map(|&i| self.clusters[i].clone()).collect(),
            column_names: self.column_names.clone(),
        }
    }

    pub fn map_clusters(&self, f: impl FnMut(&ClusterObservation) -> ClusterObservation) -> Self {
        Self {
            clusters: self.clusters.iter().map(f).collect(),
            column_names: self.column_names.clone(),
        }
    }
}

/// Check every invariant of a raw dataset and convert it.
pub fn validate_dataset(raw: RawDataset, n_max: usize) -> Result<(Dataset, DatasetSummary)> {
    if raw.clusters.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = raw.column_names.len();
    let mut clusters = Vec::with_capacity(raw.clusters.len());
    for rc in raw.clusters {
        let n = rc.y.len();
        if rc.a.len() != n {
            return Err(Error::RaggedCluster {
                cluster: rc.id,
                what: "a",
                got: rc.a.len(),
                expected: n,
            });
        }
        if rc.x.len() != n {
            return Err(Error::RaggedCluster {
                cluster: rc.id,
                what: "x",
                got: rc.x.len(),
                expected: n,
            });
        }
        if let Some(&v) = rc.a.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryTreatment {
                cluster: rc.id,
                value: v,
            });
        }
        if n > n_max {
            return Err(Error::ClusterTooLarge {
                cluster: rc.id,
                size: n,
                n_max,
            });
        }
        if let Some(row) = rc.x.iter().find(|row| row.len() != p) {
            return Err(Error::CovariateDimension {
                cluster: rc.id,
                got: row.len(),
                expected: p,
            });
        }
        let a = rc.a.iter().map(|&v| v as u8).collect();
        let x = rc.x.into_iter().flatten().collect();
        clusters.push(ClusterObservation::new(rc.id, rc.y, a, x, p)?);
    }
    let ds = Dataset::from_clusters(clusters, raw.column_names, n_max)?;
    let summary = ds.summary();
    Ok((ds, summary))
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub cluster_id: String,
    pub outcome: String,
    pub treatment: String,
    /// Explicit covariate list; when absent every remaining column is one.
    pub covariates: Option<Vec<String>>,
    /// Columns to ignore when covariates are inferred.
    pub exclude: Vec<String>,
    pub n_max: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            cluster_id: "cluster_id".into(),
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: None,
            exclude: Vec::new(),
            n_max: DEFAULT_N_MAX,
        }
    }
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| Error::UnparsableCell {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

/// Read a long-format CSV (one row per unit) into a validated dataset.
/// Clusters appear in order of first occurrence; unit order within a
/// cluster follows the file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, DatasetSummary)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.cluster_id)?;
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.treatment)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, h)| ![id_col, y_col, a_col].contains(i) && !schema.exclude.contains(h))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = cov_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, RawCluster> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let y = parse_cell(record.get(y_col).unwrap_or(""), row, &schema.outcome)?;
        let a = parse_cell(record.get(a_col).unwrap_or(""), row, &schema.treatment)?;
        let x = cov_cols
            .iter()
            .zip(&cov_names)
            .map(|(&c, name)| parse_cell(record.get(c).unwrap_or(""), row, name))
            .collect::<Result<Vec<_>>>()?;
        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawCluster {
                id,
                ..RawCluster::default()
            }
        });
        entry.y.push(y);
        entry.a.push(a);
        entry.x.push(x);
    }
    let clusters = order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("cluster recorded in order"))
        .collect();
    validate_dataset(
        RawDataset {
            clusters,
            column_names: cov_names,
        },
        schema.n_max,
    )
}

/// Write a dataset in the long format accepted by [`load_csv`] with the
/// default schema. Floats use the shortest round-trip representation.
pub fn write_dataset_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cluster_id".to_string(), "y".into(), "a".into()];
    header.extend(data.column_names().iter().cloned());
    w.write_record(&header)?;
    for c in data.clusters() {
        for j in 0..c.n() {
            let mut rec = vec![c.id.clone(), c.y()[j].to_string(), c.a()[j].to_string()];
            rec.extend(c.x_row(j).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
