//! From record-level data to client histograms and a central row pool.
//!
//! Input is a CSV with a `feature` column and an optional `client_id`
//! column. A [`BinningSpec`] (usually a JSON sidecar) maps feature values to
//! one of `C` categories, either through an explicit vocabulary or through
//! fixed-width numeric bins whose last bin is open-ended.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::ClientPopulation;
use crate::model::ClientRecord;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    Token(String),
    Real(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub row_index: usize,
    pub client_id: Option<String>,
    pub value: FeatureValue,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordTable {
    rows: Vec<TableRow>,
}

impl RecordTable {
    pub fn new(rows: Vec<TableRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(row.row_index) {
                return Err(Error::contract(format!(
                    "duplicate row index {}",
                    row.row_index
                )));
            }
        }
        Ok(RecordTable { rows })
    }

    pub fn rows(&self) -> &[TableRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Read a headed CSV. Rows are indexed by their position among data
    /// lines, starting at 0. Empty feature cells are rejected.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let feature_col = headers
            .iter()
            .position(|h| h.trim() == "feature")
            .ok_or_else(|| Error::Parse {
                location: "header".into(),
                message: "missing 'feature' column".into(),
            })?;
        let client_col = headers.iter().position(|h| h.trim() == "client_id");
        let mut rows = Vec::new();
        for (row_index, record) in rdr.records().enumerate() {
            let record = record?;
            let location = || format!("data row {row_index}");
            let feature = record.get(feature_col).map(str::trim).unwrap_or("");
            if feature.is_empty() {
                return Err(Error::Parse {
                    location: location(),
                    message: "missing feature value".into(),
                });
            }
            let client_id = match client_col {
                Some(col) => match record.get(col).map(str::trim) {
                    Some(id) if !id.is_empty() => Some(id.to_string()),
                    _ => None,
                },
                None => None,
            };
            rows.push(TableRow {
                row_index,
                client_id,
                value: FeatureValue::Token(feature.to_string()),
            });
        }
        RecordTable::new(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BinningSpec {
    Categorical {
        vocabulary: Vec<String>,
    },
    /// Bins `[lower + i·width, lower + (i+1)·width)` for `i < bins − 1`,
    /// then `[lower + (bins−1)·width, ∞)`.
    FixedWidth {
        lower: f64,
        width: f64,
        bins: usize,
    },
}

impl BinningSpec {
    /// 41 income bins of width 5000 starting at 0; the last is `[200000, ∞)`.
    pub fn income() -> Self {
        BinningSpec::FixedWidth {
            lower: 0.0,
            width: 5000.0,
            bins: 41,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BinningSpec::Categorical { vocabulary } => {
                if vocabulary.is_empty() {
                    return Err(Error::contract("categorical vocabulary is empty"));
                }
                let mut seen = HashSet::new();
                for tok in vocabulary {
                    if !seen.insert(tok) {
                        return Err(Error::contract(format!(
                            "duplicate vocabulary token '{tok}'"
                        )));
                    }
                }
            }
            BinningSpec::FixedWidth { lower, width, bins } => {
                if !lower.is_finite() || !(width.is_finite() && *width > 0.0) {
                    return Err(Error::contract(
                        "bin width must be positive and bounds finite",
                    ));
                }
                if *bins < 2 {
                    return Err(Error::contract("fixed-width binning needs at least 2 bins"));
                }
            }
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        match self {
            BinningSpec::Categorical { vocabulary } => vocabulary.len(),
            BinningSpec::FixedWidth { bins, .. } => *bins,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: BinningSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    fn category(&self, value: &FeatureValue, vocab: &BTreeMap<&str, usize>) -> Result<usize> {
        match (self, value) {
            (BinningSpec::Categorical { .. }, FeatureValue::Token(tok)) => {
                vocab.get(tok.as_str()).copied().ok_or_else(|| {
                    Error::contract(format!("token '{tok}' is not in the category vocabulary"))
                })
            }
            (BinningSpec::Categorical { .. }, FeatureValue::Real(x)) => Err(Error::contract(
                format!("numeric value {x} given to a categorical feature"),
            )),
            (BinningSpec::FixedWidth { .. }, FeatureValue::Real(x)) => bin_value(*x, self),
            (BinningSpec::FixedWidth { .. }, FeatureValue::Token(tok)) => {
                let x: f64 = tok.parse().map_err(|_| Error::Parse {
                    location: format!("feature value '{tok}'"),
                    message: "not a number".into(),
                })?;
                bin_value(x, self)
            }
        }
    }

    fn vocabulary_index(&self) -> BTreeMap<&str, usize> {
        match self {
            BinningSpec::Categorical { vocabulary } => vocabulary
                .iter()
                .enumerate()
                .map(|(i, t)| (t.as_str(), i))
                .collect(),
            BinningSpec::FixedWidth { .. } => BTreeMap::new(),
        }
    }
}

/// Category of a real value under fixed-width binning.
pub fn bin_value(x: f64, spec: &BinningSpec) -> Result<usize> {
    let BinningSpec::FixedWidth { lower, width, bins } = *spec else {
        return Err(Error::contract(
            "bin_value needs a fixed-width binning spec",
        ));
    };
    if !x.is_finite() {
        return Err(Error::domain(format!("cannot bin non-finite value {x}")));
    }
    if x < lower {
        return Err(Error::domain(format!(
            "value {x} is below the lowest bin edge {lower}"
        )));
    }
    let last = bins - 1;
    let raw = ((x - lower) / width).floor();
    if raw >= last as f64 {
        // Guard against the division rounding up across the final edge.
        return Ok(if lower + last as f64 * width <= x {
            last
        } else {
            last - 1
        });
    }
    let mut i = raw as usize;
    // Division can land one bin off near an edge; settle on the bin whose
    // computed edges bracket x.
    if lower + i as f64 * width > x {
        i -= 1;
    } else if lower + (i + 1) as f64 * width <= x {
        i += 1;
    }
    Ok(i.min(last))
}

/// One client per distinct `client_id` (ordered by id), counting rows per
/// category.
pub fn build_clients(table: &RecordTable, spec: &BinningSpec) -> Result<ClientPopulation> {
    Ok(build_clients_with_ids(table, spec)?.1)
}

/// [`build_clients`] together with the client id of each population entry.
pub fn build_clients_with_ids(
    table: &RecordTable,
    spec: &BinningSpec,
) -> Result<(Vec<String>, ClientPopulation)> {
    spec.validate()?;
    if table.is_empty() {
        return Err(Error::contract("record table is empty"));
    }
    let vocab = spec.vocabulary_index();
    let c = spec.num_categories();
    let mut hist: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for row in table.rows() {
        let id = row
            .client_id
            .as_deref()
            .ok_or_else(|| Error::contract(format!("row {} has no client id", row.row_index)))?;
        let cat = spec.category(&row.value, &vocab)?;
        hist.entry(id).or_insert_with(|| vec![0; c])[cat] += 1;
    }
    let mut ids = Vec::with_capacity(hist.len());
    let mut clients = Vec::with_capacity(hist.len());
    for (id, counts) in hist {
        ids.push(id.to_string());
        clients.push(ClientRecord::from_counts(counts)?);
    }
    Ok((ids, ClientPopulation::new(clients)?))
}

/// Centralized rows grouped by category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralPool {
    buckets: Vec<Vec<usize>>,
}

impl CentralPool {
    /// `buckets[l]` lists the row indices in category `l`.
    pub fn from_buckets(buckets: Vec<Vec<usize>>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::contract("central pool has no categories"));
        }
        Ok(CentralPool { buckets })
    }

    pub fn num_categories(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, category: usize) -> &[usize] {
        &self.buckets[category]
    }

    pub fn buckets(&self) -> &[Vec<usize>] {
        &self.buckets
    }

    pub fn marginal(&self) -> Vec<u64> {
        self.buckets.iter().map(|b| b.len() as u64).collect()
    }

    pub fn num_rows(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    /// Category of every row, sorted by row index.
    pub fn row_categories(&self) -> Vec<(usize, usize)> {
        let mut rows: Vec<(usize, usize)> = self
            .buckets
            .iter()
            .enumerate()
            .flat_map(|(l, b)| b.iter().map(move |&r| (r, l)))
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Group every row of the table by category, ignoring client ids.
pub fn build_central_pool(table: &RecordTable, spec: &BinningSpec) -> Result<CentralPool> {
    spec.validate()?;
    let vocab = spec.vocabulary_index();
    let mut buckets = vec![Vec::new(); spec.num_categories()];
    for row in table.rows() {
        buckets[spec.category(&row.value, &vocab)?].push(row.row_index);
    }
    CentralPool::from_buckets(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> BinningSpec {
        BinningSpec::Categorical {
            vocabulary: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn table(rows: &[(Option<&str>, FeatureValue)]) -> RecordTable {
        RecordTable::new(
            rows.iter()
                .enumerate()
                .map(|(i, (id, v))| TableRow {
                    row_index: i,
                    client_id: id.map(String::from),
                    value: v.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn tok(s: &str) -> FeatureValue {
        FeatureValue::Token(s.into())
    }

    #[test]
    fn income_bins() {
        let spec = BinningSpec::income();
        let cases = [
            (0.0, 0),
            (4999.99, 0),
            (5000.0, 1),
            (199_999.0, 39),
            (200_000.0, 40),
            (1_423_000.0, 40),
        ];
        for (x, want) in cases {
            assert_eq!(bin_value(x, &spec).unwrap(), want, "x = {x}");
        }
        assert!(matches!(bin_value(-0.01, &spec), Err(Error::Domain(_))));
        assert!(bin_value(f64::NAN, &spec).is_err());
    }

    #[test]
    fn decimal_width_edges() {
        let spec = BinningSpec::FixedWidth {
            lower: 0.0,
            width: 0.1,
            bins: 10,
        };
        // Quotients like 0.3 / 0.1 land just off an integer; the chosen bin
        // must still bracket x between its computed edges.
        for step in 0..200 {
            let x = step as f64 * 0.025;
            let i = bin_value(x, &spec).unwrap();
            assert!(i as f64 * 0.1 <= x, "x = {x}, bin {i}");
            assert!(i == 9 || x < (i + 1) as f64 * 0.1, "x = {x}, bin {i}");
        }
        assert_eq!(bin_value(0.35, &spec).unwrap(), 3);
        assert_eq!(bin_value(5.0, &spec).unwrap(), 9);
    }

    #[test]
    fn spec_validation_and_json() {
        assert!(BinningSpec::from_json(
            r#"{"mode":"fixed_width","lower":0,"width":5000,"bins":41}"#
        )
        .is_ok());
        assert!(
            BinningSpec::from_json(r#"{"mode":"fixed_width","lower":0,"width":0,"bins":41}"#)
                .is_err()
        );
        assert!(
            BinningSpec::from_json(r#"{"mode":"fixed_width","lower":0,"width":1,"bins":1}"#)
                .is_err()
        );
        assert!(
            BinningSpec::from_json(r#"{"mode":"categorical","vocabulary":["a","a"]}"#).is_err()
        );
        let s =
            BinningSpec::from_json(r#"{"mode":"categorical","vocabulary":["a","b","c"]}"#).unwrap();
        assert_eq!(s.num_categories(), 3);
    }

    #[test]
    fn build_clients_examples() {
        let spec = vocab(&["a", "b", "c"]);
        let t = table(&[
            (Some("u"), tok("a")),
            (Some("u"), tok("a")),
            (Some("u"), tok("b")),
        ]);
        let pop = build_clients(&t, &spec).unwrap();
        assert_eq!(pop.len(), 1);
        assert_eq!(pop.get(0).counts(), &[2, 1, 0]);
        assert_eq!(pop.get(0).n(), 3);

        assert!(build_clients(&RecordTable::default(), &spec).is_err());

        let t = table(&[
            (Some("x"), tok("a")),
            (Some("y"), tok("c")),
            (Some("x"), tok("b")),
        ]);
        let (ids, pop) = build_clients_with_ids(&t, &spec).unwrap();
        assert_eq!(ids, vec!["x", "y"]);
        assert_eq!(pop.records().iter().map(|r| r.n()).sum::<u32>(), 3);

        let t = table(&[(Some("x"), tok("zzz"))]);
        let err = build_clients(&t, &spec).unwrap_err().to_string();
        assert!(err.contains("zzz"), "{err}");

        let t = table(&[(None, tok("a"))]);
        assert!(build_clients(&t, &spec).is_err());
    }

    #[test]
    fn central_pool_examples() {
        let spec = BinningSpec::income();
        let t = table(&[
            (None, tok("0")),
            (None, tok("5000")),
            (None, FeatureValue::Real(300_000.0)),
        ]);
        let pool = build_central_pool(&t, &spec).unwrap();
        assert_eq!(pool.bucket(0), &[0]);
        assert_eq!(pool.bucket(1), &[1]);
        assert_eq!(pool.bucket(40), &[2]);
        assert_eq!(pool.num_rows(), 3);

        let one = build_central_pool(&table(&[(None, tok("b"))]), &vocab(&["a", "b"])).unwrap();
        assert_eq!(one.buckets().iter().filter(|b| !b.is_empty()).count(), 1);

        let bad = table(&[(None, tok("abc"))]);
        assert!(matches!(
            build_central_pool(&bad, &spec),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_reading() {
        let text = "client_id,feature\nu1,a\nu2,b\nu1,c\n";
        let t = RecordTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.rows()[2].client_id.as_deref(), Some("u1"));
        assert_eq!(t.rows()[1].row_index, 1);

        let no_ids = RecordTable::read_csv("feature\n1.5\n2\n".as_bytes()).unwrap();
        assert!(no_ids.rows().iter().all(|r| r.client_id.is_none()));

        assert!(RecordTable::read_csv("client_id,value\nu,1\n".as_bytes()).is_err());
        assert!(RecordTable::read_csv("client_id,feature\nu,\n".as_bytes()).is_err());
        assert!(RecordTable::new(vec![
            TableRow {
                row_index: 0,
                client_id: None,
                value: tok("a")
            },
            TableRow {
                row_index: 0,
                client_id: None,
                value: tok("b")
            },
        ])
        .is_err());
    }

    proptest! {
        #[test]
        fn binning_is_monotone(a in 0.0f64..3e5, b in 0.0f64..3e5) {
            let spec = BinningSpec::income();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_value(lo, &spec).unwrap() <= bin_value(hi, &spec).unwrap());
        }

        #[test]
        fn pool_marginal_equals_client_total(
            rows in proptest::collection::vec((0usize..4, 0usize..3), 1..60)
        ) {
            let spec = vocab(&["a", "b", "c"]);
            let names = ["a", "b", "c"];
            let ids = ["p", "q", "r", "s"];
            let t = table(&rows.iter().map(|&(c, f)| (Some(ids[c]), tok(names[f]))).collect::<Vec<_>>());
            let pop = build_clients(&t, &spec).unwrap();
            let pool = build_central_pool(&t, &spec).unwrap();
            prop_assert_eq!(pop.aggregate_histogram(), pool.marginal());
        }
    }
}
