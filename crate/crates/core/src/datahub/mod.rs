//! Dataset ingestion, normalization, cross-validation folds, and the three
//! client partitioning schemes.

mod kmeans;

pub use kmeans::{inertia, kmeans};

use crate::diffmath::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("ingestion error at row {row}, column {col}: {msg}")]
    Ingestion { row: usize, col: usize, msg: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Configuration(String),
}

/// A labeled dataset. Class indices are dense in `[0, num_classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub num_classes: usize,
    /// Original label values, indexed by dense class id.
    pub label_map: Vec<i64>,
    /// Column names when the source CSV carried a header row.
    pub feature_names: Option<Vec<String>>,
    /// (rows, cols) when samples are images on a pixel grid.
    pub grid_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    /// Materializes the given rows as a new dataset, preserving metadata.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
            label_map: self.label_map.clone(),
            feature_names: self.feature_names.clone(),
            grid_shape: self.grid_shape,
        }
    }
}

/// How a silo's samples were assigned to its owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiloProvenance {
    Iid,
    Clusters { cluster: usize },
    Classes { classes: Vec<usize> },
}

/// One client's private data: train/val views plus provenance.
#[derive(Debug, Clone)]
pub struct Silo {
    pub owner: usize,
    pub train: Dataset,
    pub val: Dataset,
    pub provenance: SiloProvenance,
}

impl Silo {
    pub fn total_len(&self) -> usize {
        self.train.len() + self.val.len()
    }
}

/// Partitioning scheme for distributing data across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionScheme {
    Iid,
    Clusters,
    Classes,
}

impl PartitionScheme {
    pub fn name(&self) -> &'static str {
        match self {
            PartitionScheme::Iid => "iid",
            PartitionScheme::Clusters => "clusters",
            PartitionScheme::Classes => "classes",
        }
    }
}

/// Assignment of every sample to one of `k` cross-validation folds.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Loads a numeric CSV whose last column holds integral labels. Labels are
/// re-indexed densely to `[0, C)` preserving their sort order; row order is
/// preserved.
pub fn load_csv(
    path: &Path,
    has_header: bool,
    grid_shape: Option<(usize, usize)>,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;

    let feature_names = if has_header {
        let headers = reader.headers().map_err(|e| DataError::Ingestion {
            row: 1,
            col: 0,
            msg: e.to_string(),
        })?;
        let mut names: Vec<String> = headers.iter().map(str::to_string).collect();
        names.pop();
        Some(names)
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let header_offset = if has_header { 2 } else { 1 };
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Ingestion {
            row: r + header_offset,
            col: 0,
            msg: e.to_string(),
        })?;
        let n = record.len();
        if n < 2 {
            return Err(DataError::Ingestion {
                row: r + header_offset,
                col: n,
                msg: "need at least one feature column and a label column".into(),
            });
        }
        let mut feats = Vec::with_capacity(n - 1);
        for (c, field) in record.iter().take(n - 1).enumerate() {
            let v: f64 = field.parse().map_err(|_| DataError::Ingestion {
                row: r + header_offset,
                col: c + 1,
                msg: format!("non-numeric cell {field:?}"),
            })?;
            feats.push(v);
        }
        let label_field = record.get(n - 1).unwrap();
        let label_f: f64 = label_field.parse().map_err(|_| DataError::Ingestion {
            row: r + header_offset,
            col: n,
            msg: format!("non-numeric label {label_field:?}"),
        })?;
        if label_f.fract() != 0.0 {
            return Err(DataError::Ingestion {
                row: r + header_offset,
                col: n,
                msg: format!("label {label_f} is not integral"),
            });
        }
        if !rows.is_empty() && feats.len() != rows[0].len() {
            return Err(DataError::Ingestion {
                row: r + header_offset,
                col: n,
                msg: format!(
                    "inconsistent column count: {} vs {}",
                    feats.len() + 1,
                    rows[0].len() + 1
                ),
            });
        }
        rows.push(feats);
        raw_labels.push(label_f as i64);
    }
    if rows.is_empty() {
        return Err(DataError::Ingestion {
            row: 0,
            col: 0,
            msg: "empty dataset".into(),
        });
    }
    if let Some((gr, gc)) = grid_shape {
        if gr * gc != rows[0].len() {
            return Err(DataError::Configuration(format!(
                "grid shape {gr}x{gc} does not match {} features",
                rows[0].len()
            )));
        }
    }

    let mut label_map: Vec<i64> = raw_labels.clone();
    label_map.sort_unstable();
    label_map.dedup();
    let y: Vec<usize> = raw_labels
        .iter()
        .map(|l| label_map.binary_search(l).unwrap())
        .collect();

    Ok(Dataset {
        x: Matrix::from_rows(&rows),
        num_classes: label_map.len(),
        y,
        label_map,
        feature_names,
        grid_shape,
    })
}

/// Per-feature min-max scaling to [0, 1]; constant features map to 0.
pub fn minmax_normalize(ds: &Dataset) -> Dataset {
    let (n, d) = (ds.x.rows(), ds.x.cols());
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for r in 0..n {
        for (j, &v) in ds.x.row(r).iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    let mut x = ds.x.clone();
    for r in 0..n {
        for (j, v) in x.row_mut(r).iter_mut().enumerate() {
            let range = maxs[j] - mins[j];
            *v = if range > 0.0 {
                (*v - mins[j]) / range
            } else {
                0.0
            };
        }
    }
    Dataset { x, ..ds.clone() }
}

/// Stratified k-fold assignment: per class, shuffled samples are dealt to
/// folds round-robin through a global cursor, so fold sizes differ by at
/// most one globally and per-class counts differ by at most one.
pub fn kfold_plan(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    let n = ds.len();
    if n < k {
        return Err(DataError::Precondition(format!(
            "{n} samples cannot fill {k} folds"
        )));
    }
    let mut rng = crate::seeds::stream(seed, 0, "kfold");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.y.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut assignment = vec![0usize; n];
    let mut cursor = 0usize;
    for class_indices in &mut by_class {
        class_indices.shuffle(&mut rng);
        for &i in class_indices.iter() {
            assignment[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldPlan {
        fold_count: k,
        assignment,
    })
}

/// Splits indices into train/val with an 80-20 split (|train| = round(0.8 n)).
fn train_val_split(indices: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    let n_train = (0.8 * shuffled.len() as f64).round() as usize;
    let val = shuffled.split_off(n_train);
    (shuffled, val)
}

/// Maximum silo size; larger assignments are uniformly subsampled.
pub const SILO_CAP: usize = 200;

/// Partitions a dataset into `m` client silos under the given scheme, then
/// caps each silo at [`SILO_CAP`] samples and applies the 80-20 split.
pub fn partition(
    ds: &Dataset,
    scheme: PartitionScheme,
    m: usize,
    seed: u64,
) -> Result<Vec<Silo>, DataError> {
    if m < 1 {
        return Err(DataError::Precondition("need at least one client".into()));
    }
    let n = ds.len();
    if n < m {
        return Err(DataError::Precondition(format!(
            "{n} samples cannot fill {m} nonempty silos"
        )));
    }
    let mut rng = crate::seeds::stream(seed, 0, "partition");

    let assignments: Vec<(Vec<usize>, SiloProvenance)> = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut buckets = vec![Vec::new(); m];
            for (pos, &i) in idx.iter().enumerate() {
                buckets[pos % m].push(i);
            }
            buckets
                .into_iter()
                .map(|b| (b, SiloProvenance::Iid))
                .collect()
        }
        PartitionScheme::Clusters => {
            let (cluster_of, _) = kmeans(&ds.x, m, &mut rng, 300, 1e-6)?;
            let mut buckets = vec![Vec::new(); m];
            for (i, &c) in cluster_of.iter().enumerate() {
                buckets[c].push(i);
            }
            buckets
                .into_iter()
                .enumerate()
                .map(|(c, b)| (b, SiloProvenance::Clusters { cluster: c }))
                .collect()
        }
        PartitionScheme::Classes => {
            if ds.num_classes < m {
                return Err(DataError::Configuration(format!(
                    "classes scheme needs at least {m} classes, dataset has {}",
                    ds.num_classes
                )));
            }
            // Sort classes by descending frequency (ties by class id), deal
            // round-robin so class counts per client are as even as possible
            // while class sets stay disjoint.
            let mut counts = vec![0usize; ds.num_classes];
            for &y in &ds.y {
                counts[y] += 1;
            }
            let mut order: Vec<usize> = (0..ds.num_classes).collect();
            order.sort_by_key(|&c| (std::cmp::Reverse(counts[c]), c));
            let mut class_sets = vec![Vec::new(); m];
            for (rank, &class) in order.iter().enumerate() {
                class_sets[rank % m].push(class);
            }
            let mut client_of_class = vec![0usize; ds.num_classes];
            for (client, set) in class_sets.iter().enumerate() {
                for &c in set {
                    client_of_class[c] = client;
                }
            }
            let mut buckets = vec![Vec::new(); m];
            for (i, &y) in ds.y.iter().enumerate() {
                buckets[client_of_class[y]].push(i);
            }
            buckets
                .into_iter()
                .zip(class_sets)
                .map(|(b, mut cs)| {
                    cs.sort_unstable();
                    (b, SiloProvenance::Classes { classes: cs })
                })
                .collect()
        }
    };

    if assignments.iter().any(|(b, _)| b.is_empty()) {
        return Err(DataError::Precondition(
            "partition produced an empty silo".into(),
        ));
    }

    let mut silos = Vec::with_capacity(m);
    for (owner, (mut indices, provenance)) in assignments.into_iter().enumerate() {
        if indices.len() > SILO_CAP {
            // Uniform subsample without replacement.
            let mut pool = indices;
            for i in 0..SILO_CAP {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(SILO_CAP);
            pool.sort_unstable();
            indices = pool;
        }
        let (train_idx, val_idx) = train_val_split(&indices, &mut rng);
        silos.push(Silo {
            owner,
            train: ds.subset(&train_idx),
            val: ds.subset(&val_idx),
            provenance,
        });
    }
    Ok(silos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_dataset(n: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = crate::seeds::stream(seed, 0, "toy");
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % classes;
            rows.push(vec![
                c as f64 + rng.random_range(-0.2..0.2),
                rng.random_range(0.0..1.0),
            ]);
            y.push(c);
        }
        Dataset {
            x: Matrix::from_rows(&rows),
            y,
            num_classes: classes,
            label_map: (0..classes as i64).collect(),
            feature_names: None,
            grid_shape: None,
        }
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_toy_csv() {
        let f = write_csv("1,2,0\n3,4,1\n5,6,0\n");
        let ds = load_csv(f.path(), false, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_features(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.y, vec![0, 1, 0]);
    }

    #[test]
    fn load_csv_reindexes_sparse_labels() {
        let f = write_csv("0.5,2\n0.1,5\n0.2,9\n0.9,5\n");
        let ds = load_csv(f.path(), false, None).unwrap();
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.y, vec![0, 1, 2, 1]);
        assert_eq!(ds.label_map, vec![2, 5, 9]);
    }

    #[test]
    fn load_csv_reports_bad_cell_location() {
        let f = write_csv("1,2,0\n3,oops,1\n");
        match load_csv(f.path(), false, None) {
            Err(DataError::Ingestion { row, col, .. }) => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_empty_and_fractional_labels() {
        let empty = write_csv("");
        assert!(load_csv(empty.path(), false, None).is_err());
        let frac = write_csv("1,2,0.5\n");
        assert!(load_csv(frac.path(), false, None).is_err());
    }

    #[test]
    fn load_csv_with_header_and_crlf() {
        let f = write_csv("a,b,label\r\n1,16,0\r\n2,0,1\r\n");
        let ds = load_csv(f.path(), true, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.x[(0, 1)], 16.0);
        assert_eq!(
            ds.feature_names,
            Some(vec!["a".to_string(), "b".to_string()])
        );
    }

    #[test]
    fn normalize_maps_to_unit_interval() {
        let ds = Dataset {
            x: Matrix::from_rows(&[vec![0.0, 5.0], vec![8.0, 5.0], vec![16.0, 5.0]]),
            y: vec![0, 1, 0],
            num_classes: 2,
            label_map: vec![0, 1],
            feature_names: None,
            grid_shape: None,
        };
        let norm = minmax_normalize(&ds);
        assert_eq!(norm.x.as_slice(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let ds = toy_dataset(30, 3, 5);
        let once = minmax_normalize(&ds);
        let twice = minmax_normalize(&once);
        for (a, b) in once.x.as_slice().iter().zip(twice.x.as_slice()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn kfold_sizes_and_partition_law() {
        let ds = toy_dataset(150, 3, 7);
        let plan = kfold_plan(&ds, 10, 11).unwrap();
        let mut seen = [false; 150];
        for f in 0..10 {
            let test = plan.test_indices(f);
            assert_eq!(test.len(), 15);
            for i in test {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kfold_is_stratified_within_one() {
        let ds = toy_dataset(153, 3, 13);
        let plan = kfold_plan(&ds, 10, 3).unwrap();
        for f in 0..10 {
            let test = plan.test_indices(f);
            let mut counts = [0usize; 3];
            for &i in &test {
                counts[ds.y[i]] += 1;
            }
            for (c, &count) in counts.iter().enumerate() {
                let global = ds.y.iter().filter(|&&y| y == c).count();
                let proportional = global as f64 / 10.0;
                assert!(
                    (count as f64 - proportional).abs() <= 1.0 + 1e-9,
                    "fold {f} class {c}: {count} vs {proportional}"
                );
            }
        }
    }

    #[test]
    fn kfold_too_few_samples() {
        let ds = toy_dataset(5, 2, 1);
        assert!(kfold_plan(&ds, 10, 0).is_err());
    }

    #[test]
    fn iid_partition_sizes_are_even() {
        let ds = toy_dataset(135, 3, 17);
        let silos = partition(&ds, PartitionScheme::Iid, 3, 5).unwrap();
        for s in &silos {
            assert_eq!(s.total_len(), 45);
            assert_eq!(s.train.len(), 36);
            assert_eq!(s.val.len(), 9);
        }
    }

    #[test]
    fn partition_covers_input_disjointly() {
        // Marker features let us recover original row identities.
        let n = 120;
        let mut rows = Vec::new();
        for i in 0..n {
            rows.push(vec![i as f64, (i % 3) as f64]);
        }
        let ds = Dataset {
            x: Matrix::from_rows(&rows),
            y: (0..n).map(|i| i % 3).collect(),
            num_classes: 3,
            label_map: vec![0, 1, 2],
            feature_names: None,
            grid_shape: None,
        };
        for scheme in [
            PartitionScheme::Iid,
            PartitionScheme::Clusters,
            PartitionScheme::Classes,
        ] {
            let silos = partition(&ds, scheme, 3, 9).unwrap();
            let mut seen = vec![false; n];
            let mut total = 0;
            for s in &silos {
                for part in [&s.train, &s.val] {
                    for r in 0..part.len() {
                        let id = part.x[(r, 0)] as usize;
                        assert!(!seen[id], "{scheme:?}: row {id} duplicated");
                        seen[id] = true;
                        total += 1;
                    }
                }
            }
            assert_eq!(total, n, "{scheme:?} lost rows");
        }
    }

    #[test]
    fn classes_partition_has_disjoint_class_sets() {
        let ds = toy_dataset(90, 3, 23);
        let silos = partition(&ds, PartitionScheme::Classes, 3, 1).unwrap();
        let mut class_owner = [None; 3];
        for s in &silos {
            let classes = match &s.provenance {
                SiloProvenance::Classes { classes } => classes.clone(),
                other => panic!("wrong provenance {other:?}"),
            };
            assert_eq!(classes.len(), 1);
            for part in [&s.train, &s.val] {
                for &y in &part.y {
                    assert!(classes.contains(&y));
                }
            }
            for c in classes {
                assert!(class_owner[c].is_none(), "class {c} owned twice");
                class_owner[c] = Some(s.owner);
            }
        }
    }

    #[test]
    fn classes_partition_needs_enough_classes() {
        let ds = toy_dataset(40, 2, 29);
        assert!(matches!(
            partition(&ds, PartitionScheme::Classes, 3, 0),
            Err(DataError::Configuration(_))
        ));
    }

    #[test]
    fn silo_cap_and_split_sizes() {
        let ds = toy_dataset(900, 3, 31);
        let silos = partition(&ds, PartitionScheme::Iid, 3, 2).unwrap();
        for s in &silos {
            assert_eq!(s.total_len(), SILO_CAP);
            assert_eq!(s.train.len(), 160);
            assert_eq!(s.val.len(), 40);
        }
    }

    #[test]
    fn partition_is_deterministic_per_seed() {
        let ds = toy_dataset(100, 3, 37);
        let a = partition(&ds, PartitionScheme::Clusters, 3, 4).unwrap();
        let b = partition(&ds, PartitionScheme::Clusters, 3, 4).unwrap();
        for (s1, s2) in a.iter().zip(&b) {
            assert_eq!(s1.train.y, s2.train.y);
            assert_eq!(s1.train.x.as_slice(), s2.train.x.as_slice());
        }
    }
}
