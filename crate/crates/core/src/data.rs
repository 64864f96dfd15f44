//! Dataset ingestion and preparation: typed CSV loading, stratified
//! train/test splitting, normalization statistics, and the numeric views
//! consumed by classifiers and the redundancy estimator.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Discrete,
    Continuous,
    Label,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column declaration for a CSV file. Exactly one label column; names unique.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<SchemaColumn>,
}

impl Schema {
    pub fn new(columns: Vec<SchemaColumn>) -> Result<Schema> {
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Schema(format!("cannot read schema file {}: {e}", path.display()))
        })?;
        let columns: Vec<SchemaColumn> = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("invalid schema JSON in {}: {e}", path.display())))?;
        Schema::new(columns)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        let mut labels = 0usize;
        for c in &self.columns {
            if seen.insert(c.name.clone(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate column name '{}'", c.name)));
            }
            if c.kind == ColumnKind::Label {
                labels += 1;
            }
        }
        if labels != 1 {
            return Err(Error::Schema(format!(
                "schema must declare exactly one label column, found {labels}"
            )));
        }
        if self.columns.len() < 2 {
            return Err(Error::Schema("schema needs at least one feature column".into()));
        }
        Ok(())
    }
}

/// In-memory tabular dataset.
///
/// Features are stored row-major as f64 in an internal ordering with all
/// discrete columns first, then the continuous ones. Discrete cells hold the
/// category index assigned at load time (first-appearance order); the
/// original strings are kept so test-time values can be mapped consistently.
#[derive(Debug, Clone)]
pub struct Dataset {
    feature_names: Vec<String>,
    kinds: Vec<ColumnKind>,
    values: Vec<f64>,
    labels: Vec<usize>,
    label_name: String,
    label_values: Vec<String>,
    categories: Vec<Vec<String>>,
    n_discrete: usize,
}

impl Dataset {
    /// Assemble a dataset directly from columns (synthetic data, tests).
    /// Columns must already be in discrete-first order; `categories[k]` is
    /// empty for continuous columns.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        feature_names: Vec<String>,
        kinds: Vec<ColumnKind>,
        values: Vec<f64>,
        labels: Vec<usize>,
        label_name: String,
        label_values: Vec<String>,
        categories: Vec<Vec<String>>,
    ) -> Result<Dataset> {
        let k = feature_names.len();
        if k == 0 {
            return Err(Error::EmptyInput("dataset with zero features".into()));
        }
        if kinds.len() != k || categories.len() != k {
            return Err(Error::Schema("kinds/categories length mismatch".into()));
        }
        if values.len() % k != 0 {
            return Err(Error::Dimension {
                op: "dataset_from_parts",
                lhs: vec![values.len()],
                rhs: vec![k],
            });
        }
        let n = values.len() / k;
        if n == 0 || labels.len() != n {
            return Err(Error::EmptyInput(format!(
                "dataset needs rows and matching labels (n={n}, labels={})",
                labels.len()
            )));
        }
        let mut n_discrete = 0;
        let mut seen_continuous = false;
        for (i, kind) in kinds.iter().enumerate() {
            match kind {
                ColumnKind::Discrete => {
                    if seen_continuous {
                        return Err(Error::Schema(
                            "discrete columns must precede continuous columns".into(),
                        ));
                    }
                    n_discrete += 1;
                    let card = categories[i].len();
                    for row in 0..n {
                        let v = values[row * k + i];
                        if v < 0.0 || v.fract() != 0.0 || (v as usize) >= card {
                            return Err(Error::Category {
                                feature: feature_names[i].clone(),
                                index: v as usize,
                                cardinality: card,
                            });
                        }
                    }
                }
                ColumnKind::Continuous => seen_continuous = true,
                ColumnKind::Label => {
                    return Err(Error::Schema("label kind not allowed among features".into()))
                }
            }
        }
        let classes = label_values.len();
        if classes == 0 || labels.iter().any(|&y| y >= classes) {
            return Err(Error::Schema("labels out of range of label_values".into()));
        }
        Ok(Dataset {
            feature_names,
            kinds,
            values,
            labels,
            label_name,
            label_values,
            categories,
            n_discrete,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.feature_names.len()
    }

    /// Count of discrete features (they occupy columns `0..m`).
    pub fn m_discrete(&self) -> usize {
        self.n_discrete
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.k() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let k = self.k();
        &self.values[row * k..(row + 1) * k]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn label_values(&self) -> &[String] {
        &self.label_values
    }

    pub fn class_count(&self) -> usize {
        self.label_values.len()
    }

    pub fn categories(&self, col: usize) -> &[String] {
        &self.categories[col]
    }

    pub fn cardinality(&self, col: usize) -> usize {
        self.categories[col].len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categories.iter().map(|c| c.len()).collect()
    }

    /// New dataset holding the given rows (shared schema and encodings).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let k = self.k();
        let mut values = Vec::with_capacity(rows.len() * k);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            feature_names: self.feature_names.clone(),
            kinds: self.kinds.clone(),
            values,
            labels,
            label_name: self.label_name.clone(),
            label_values: self.label_values.clone(),
            categories: self.categories.clone(),
            n_discrete: self.n_discrete,
        }
    }

    /// Stable hash of the schema-on-disk a weighter was built against:
    /// names, kinds, cardinalities, and label classes.
    pub fn fingerprint(&self) -> u64 {
        let mut repr = String::new();
        for (name, kind) in self.feature_names.iter().zip(&self.kinds) {
            repr.push_str(name);
            repr.push(match kind {
                ColumnKind::Discrete => 'd',
                ColumnKind::Continuous => 'c',
                ColumnKind::Label => 'l',
            });
            repr.push(';');
        }
        for c in &self.categories {
            repr.push_str(&c.len().to_string());
            repr.push(',');
        }
        repr.push_str(&self.label_values.len().to_string());
        derive_seed(&repr, 0)
    }
}

/// Load a CSV file against a schema. Discrete columns and the label are
/// encoded by first appearance; continuous cells must parse as finite floats.
/// Missing values are rejected.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let header_pos: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();

    // internal ordering: discrete features, then continuous, label separate
    let mut ordered: Vec<&SchemaColumn> = Vec::new();
    for c in &schema.columns {
        if c.kind == ColumnKind::Discrete {
            ordered.push(c);
        }
    }
    let n_discrete = ordered.len();
    for c in &schema.columns {
        if c.kind == ColumnKind::Continuous {
            ordered.push(c);
        }
    }
    let label_col = schema
        .columns
        .iter()
        .find(|c| c.kind == ColumnKind::Label)
        .expect("validated schema has a label");

    let mut positions = Vec::with_capacity(ordered.len());
    for c in &ordered {
        let pos = header_pos.get(c.name.as_str()).ok_or_else(|| {
            Error::Schema(format!(
                "column '{}' declared in schema but missing from {}",
                c.name,
                path.display()
            ))
        })?;
        positions.push(*pos);
    }
    let label_pos = *header_pos.get(label_col.name.as_str()).ok_or_else(|| {
        Error::Schema(format!(
            "label column '{}' missing from {}",
            label_col.name,
            path.display()
        ))
    })?;

    let k = ordered.len();
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut cat_index: Vec<HashMap<String, usize>> = vec![HashMap::new(); k];
    let mut label_values: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_idx + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        for (j, (col, &pos)) in ordered.iter().zip(&positions).enumerate() {
            let raw = record.get(pos).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(Error::Parse {
                    row: row_idx + 1,
                    column: col.name.clone(),
                    message: "missing value".into(),
                });
            }
            match col.kind {
                ColumnKind::Discrete => {
                    let next = categories[j].len();
                    let idx = *cat_index[j].entry(raw.to_string()).or_insert_with(|| {
                        categories[j].push(raw.to_string());
                        next
                    });
                    values.push(idx as f64);
                }
                ColumnKind::Continuous => {
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        row: row_idx + 1,
                        column: col.name.clone(),
                        message: format!("'{raw}' is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: row_idx + 1,
                            column: col.name.clone(),
                            message: "non-finite value".into(),
                        });
                    }
                    values.push(v);
                }
                ColumnKind::Label => unreachable!(),
            }
        }
        let raw = record.get(label_pos).unwrap_or("").trim();
        if raw.is_empty() {
            return Err(Error::Parse {
                row: row_idx + 1,
                column: label_col.name.clone(),
                message: "missing label".into(),
            });
        }
        let next = label_values.len();
        let idx = *label_index.entry(raw.to_string()).or_insert_with(|| {
            label_values.push(raw.to_string());
            next
        });
        labels.push(idx);
    }

    if labels.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }

    debug_assert_eq!(
        n_discrete,
        ordered.iter().filter(|c| c.kind == ColumnKind::Discrete).count()
    );
    Dataset::from_parts(
        ordered.iter().map(|c| c.name.clone()).collect(),
        ordered.iter().map(|c| c.kind).collect(),
        values,
        labels,
        label_col.name.clone(),
        label_values,
        categories,
    )
}

/// Stratified split into (train, test). Per-class counts follow the global
/// train target by largest remainder, every class keeps at least one row on
/// each side, and the row order inside each part is the original row order.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let n = ds.n();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count()];
    for (row, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(row);
    }
    for (c, rows) in by_class.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::Stratification(format!(
                "class '{}' has {} sample(s); need at least 2 to stratify",
                ds.label_values()[c],
                rows.len()
            )));
        }
    }

    let global_target = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut alloc: Vec<usize> = Vec::with_capacity(by_class.len());
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (c, rows) in by_class.iter().enumerate() {
        let exact = train_fraction * rows.len() as f64;
        let floor = exact.floor() as usize;
        alloc.push(floor);
        assigned += floor;
        remainders.push((c, exact - floor as f64));
    }
    // hand out the remaining slots to the largest fractional remainders
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = global_target.saturating_sub(assigned);
    for (c, _) in &remainders {
        if left == 0 {
            break;
        }
        alloc[*c] += 1;
        left -= 1;
    }
    // keep every class represented on both sides
    for (c, rows) in by_class.iter().enumerate() {
        alloc[c] = alloc[c].clamp(1, rows.len() - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("split", seed));
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (c, rows) in by_class.iter().enumerate() {
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        train_rows.extend_from_slice(&shuffled[..alloc[c]]);
        test_rows.extend_from_slice(&shuffled[alloc[c]..]);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok((ds.subset(&train_rows), ds.subset(&test_rows)))
}

/// Per-continuous-column normalization statistics (population standard
/// deviation), computed on the training split only. Degenerate columns get
/// a unit standard deviation so they normalize to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn compute_stats(train: &Dataset) -> Result<FeatureStats> {
    if train.n() == 0 {
        return Err(Error::EmptyInput("compute_stats on empty dataset".into()));
    }
    let (n, k) = (train.n(), train.k());
    let mut mean = vec![0.0; k];
    let mut std = vec![1.0; k];
    for col in train.m_discrete()..k {
        let mut m = 0.0;
        for row in 0..n {
            m += train.value(row, col);
        }
        m /= n as f64;
        let mut var = 0.0;
        for row in 0..n {
            let d = train.value(row, col) - m;
            var += d * d;
        }
        var /= n as f64;
        mean[col] = m;
        std[col] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    Ok(FeatureStats { mean, std })
}

impl FeatureStats {
    pub fn normalize(&self, col: usize, raw: f64) -> f64 {
        (raw - self.mean[col]) / self.std[col]
    }
}

/// Dense row-major matrix used by the classifiers.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "matrix_new",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(Matrix { data, rows, cols })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }
}

/// Classifier-facing encoding of a dataset: discrete features one-hot over
/// the training categories (unknown test-time categories become an all-zero
/// block), continuous features normalized. `blocks[k]` gives the column
/// range each raw feature occupies, which is how a per-feature weight knows
/// what to scale.
#[derive(Debug, Clone)]
pub struct NumericView {
    pub matrix: Matrix,
    pub blocks: Vec<(usize, usize)>,
    pub column_names: Vec<String>,
}

pub fn numeric_view(ds: &Dataset, stats: &FeatureStats) -> NumericView {
    let (n, k, m) = (ds.n(), ds.k(), ds.m_discrete());
    let mut blocks = Vec::with_capacity(k);
    let mut column_names = Vec::new();
    let mut width = 0usize;
    for col in 0..k {
        if col < m {
            let card = ds.cardinality(col);
            blocks.push((width, card));
            for cat in ds.categories(col) {
                column_names.push(format!("{}={}", ds.feature_names()[col], cat));
            }
            width += card;
        } else {
            blocks.push((width, 1));
            column_names.push(ds.feature_names()[col].clone());
            width += 1;
        }
    }
    let mut data = vec![0.0; n * width];
    for row in 0..n {
        for col in 0..k {
            let (start, w) = blocks[col];
            if col < m {
                let idx = ds.value(row, col) as usize;
                if idx < w {
                    data[row * width + start + idx] = 1.0;
                }
            } else {
                data[row * width + start] = stats.normalize(col, ds.value(row, col));
            }
        }
    }
    NumericView {
        matrix: Matrix::new(data, n, width).expect("view dims consistent"),
        blocks,
        column_names,
    }
}

/// Compact K-column numeric matrix for redundancy estimation: discrete
/// cells keep their category index, continuous cells are normalized.
pub fn compact_numeric(ds: &Dataset, stats: &FeatureStats) -> Matrix {
    let (n, k, m) = (ds.n(), ds.k(), ds.m_discrete());
    let mut data = vec![0.0; n * k];
    for row in 0..n {
        for col in 0..k {
            let raw = ds.value(row, col);
            data[row * k + col] = if col < m { raw } else { stats.normalize(col, raw) };
        }
    }
    Matrix::new(data, n, k).expect("compact dims consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn toy_schema() -> Schema {
        Schema::new(vec![
            SchemaColumn {
                name: "color".into(),
                kind: ColumnKind::Discrete,
            },
            SchemaColumn {
                name: "temp".into(),
                kind: ColumnKind::Continuous,
            },
            SchemaColumn {
                name: "y".into(),
                kind: ColumnKind::Label,
            },
        ])
        .unwrap()
    }

    #[test]
    fn load_csv_encodes_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            "toy.csv",
            "color,temp,y\nred,1.5,a\nblue,2.0,b\nred,3.25,a\n",
        );
        let ds = load_csv(&path, &toy_schema()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.m_discrete(), 1);
        // first-appearance encoding: red=0, blue=1
        assert_eq!(ds.value(0, 0), 0.0);
        assert_eq!(ds.value(1, 0), 1.0);
        assert_eq!(ds.value(2, 0), 0.0);
        assert_eq!(ds.label_values(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn load_csv_reports_bad_cell_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, "bad.csv", "color,temp,y\nred,abc,a\n");
        match load_csv(&path, &toy_schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "temp");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_empty_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, "empty.csv", "color,temp,y\n");
        assert!(matches!(
            load_csv(&path, &toy_schema()),
            Err(Error::EmptyInput(_))
        ));
        let path = write_csv(&dir, "missing.csv", "color,y\nred,a\n");
        assert!(matches!(
            load_csv(&path, &toy_schema()),
            Err(Error::Schema(_))
        ));
    }

    fn balanced_dataset(n: usize) -> Dataset {
        // one continuous feature, binary labels alternating
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        Dataset::from_parts(
            vec!["x".into()],
            vec![ColumnKind::Continuous],
            values,
            labels,
            "y".into(),
            vec!["0".into(), "1".into()],
            vec![vec![]],
        )
        .unwrap()
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let ds = balanced_dataset(10);
        let (train, test) = split(&ds, 0.7, 11).unwrap();
        assert_eq!(train.n(), 7);
        assert_eq!(test.n(), 3);
        let train_pos = train.labels().iter().filter(|&&y| y == 1).count();
        assert!(train_pos == 3 || train_pos == 4);
        // disjoint + exhaustive over the original x values
        let mut seen: Vec<f64> = (0..train.n()).map(|r| train.value(r, 0)).collect();
        seen.extend((0..test.n()).map(|r| test.value(r, 0)));
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn split_deterministic_and_validates_fraction() {
        let ds = balanced_dataset(20);
        let (a1, b1) = split(&ds, 0.7, 5).unwrap();
        let (a2, b2) = split(&ds, 0.7, 5).unwrap();
        assert_eq!(a1.row(0), a2.row(0));
        assert_eq!(a1.labels(), a2.labels());
        assert_eq!(b1.labels(), b2.labels());
        assert!(matches!(split(&ds, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(split(&ds, 1.0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn split_requires_two_samples_per_class() {
        let values = vec![0.0, 1.0, 2.0];
        let labels = vec![0, 0, 1];
        let ds = Dataset::from_parts(
            vec!["x".into()],
            vec![ColumnKind::Continuous],
            values,
            labels,
            "y".into(),
            vec!["a".into(), "b".into()],
            vec![vec![]],
        )
        .unwrap();
        assert!(matches!(
            split(&ds, 0.5, 1),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn stats_population_std_and_degenerate_column() {
        let values = vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0];
        let ds = Dataset::from_parts(
            vec!["a".into(), "b".into()],
            vec![ColumnKind::Continuous, ColumnKind::Continuous],
            values,
            vec![0, 1, 0],
            "y".into(),
            vec!["0".into(), "1".into()],
            vec![vec![], vec![]],
        )
        .unwrap();
        let stats = compute_stats(&ds).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-12);
        assert!((stats.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((stats.mean[1] - 5.0).abs() < 1e-12);
        assert_eq!(stats.std[1], 1.0);
    }

    #[test]
    fn normalization_round_trip_on_training_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let n = 500;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..20.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ds = Dataset::from_parts(
            vec!["x".into()],
            vec![ColumnKind::Continuous],
            values,
            labels,
            "y".into(),
            vec!["0".into(), "1".into()],
            vec![vec![]],
        )
        .unwrap();
        let stats = compute_stats(&ds).unwrap();
        let normalized: Vec<f64> = (0..n).map(|r| stats.normalize(0, ds.value(r, 0))).collect();
        let mean = normalized.iter().sum::<f64>() / n as f64;
        let var = normalized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn numeric_view_one_hot_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            "toy.csv",
            "color,temp,y\nred,1.0,a\nblue,2.0,b\ngreen,3.0,a\n",
        );
        let ds = load_csv(&path, &toy_schema()).unwrap();
        let stats = compute_stats(&ds).unwrap();
        let view = numeric_view(&ds, &stats);
        assert_eq!(view.matrix.cols, 4); // 3 colors + 1 continuous
        assert_eq!(view.blocks, vec![(0, 3), (3, 1)]);
        assert_eq!(view.matrix.row(0)[0], 1.0);
        assert_eq!(view.matrix.row(1)[1], 1.0);
        assert_eq!(view.matrix.row(2)[2], 1.0);
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_every_dataset(seed in 0u64..500, n in 6usize..60, frac in 0.2f64..0.8) {
            let ds = balanced_dataset(n);
            let (train, test) = split(&ds, frac, seed).unwrap();
            proptest::prop_assert_eq!(train.n() + test.n(), n);
            let mut all: Vec<i64> = (0..train.n()).map(|r| train.value(r, 0) as i64)
                .chain((0..test.n()).map(|r| test.value(r, 0) as i64)).collect();
            all.sort_unstable();
            all.dedup();
            proptest::prop_assert_eq!(all.len(), n);
        }
    }
}
