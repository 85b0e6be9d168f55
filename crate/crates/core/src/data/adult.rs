//! UCI Adult Income ingestion.
//!
//! Rows follow the original 15-column layout (14 attributes + income label):
//!
//! | # | column          | kind        |
//! |---|-----------------|-------------|
//! | 0 | age             | continuous  |
//! | 1 | workclass       | categorical |
//! | 2 | fnlwgt          | continuous  |
//! | 3 | education       | categorical |
//! | 4 | education-num   | continuous  |
//! | 5 | marital-status  | categorical |
//! | 6 | occupation      | categorical |
//! | 7 | relationship    | categorical |
//! | 8 | race            | categorical |
//! | 9 | sex             | categorical |
//! |10 | capital-gain    | continuous  |
//! |11 | capital-loss    | continuous  |
//! |12 | hours-per-week  | continuous  |
//! |13 | native-country  | categorical |
//! |14 | income          | label       |
//!
//! Encoded features are the six continuous columns (z-scored) followed by one
//! one-hot block per categorical column, in column order. Each block has one
//! slot per known category plus a trailing "other" slot. Rows with a `?`
//! field are dropped. The label is 1 iff income is `>50K`; the group is 1 iff
//! race is `White`.

use std::path::Path;

use log::{info, warn};

use super::{Dataset, Provenance, Sample};
use crate::error::{Error, Result};

const CONTINUOUS_COLUMNS: [usize; 6] = [0, 2, 4, 10, 11, 12];
const CATEGORICAL_COLUMNS: [usize; 8] = [1, 3, 5, 6, 7, 8, 9, 13];
const RACE_COLUMN: usize = 8;
const NUM_COLUMNS: usize = 15;

const VOCAB: [&[&str]; 8] = [
    &[
        "Private",
        "Self-emp-not-inc",
        "Self-emp-inc",
        "Federal-gov",
        "Local-gov",
        "State-gov",
        "Without-pay",
        "Never-worked",
    ],
    &[
        "Bachelors",
        "Some-college",
        "11th",
        "HS-grad",
        "Prof-school",
        "Assoc-acdm",
        "Assoc-voc",
        "9th",
        "7th-8th",
        "12th",
        "Masters",
        "1st-4th",
        "10th",
        "Doctorate",
        "5th-6th",
        "Preschool",
    ],
    &[
        "Married-civ-spouse",
        "Divorced",
        "Never-married",
        "Separated",
        "Widowed",
        "Married-spouse-absent",
        "Married-AF-spouse",
    ],
    &[
        "Tech-support",
        "Craft-repair",
        "Other-service",
        "Sales",
        "Exec-managerial",
        "Prof-specialty",
        "Handlers-cleaners",
        "Machine-op-inspct",
        "Adm-clerical",
        "Farming-fishing",
        "Transport-moving",
        "Priv-house-serv",
        "Protective-serv",
        "Armed-Forces",
    ],
    &[
        "Wife",
        "Own-child",
        "Husband",
        "Not-in-family",
        "Other-relative",
        "Unmarried",
    ],
    &[
        "White",
        "Asian-Pac-Islander",
        "Amer-Indian-Eskimo",
        "Other",
        "Black",
    ],
    &["Female", "Male"],
    &[
        "United-States",
        "Cambodia",
        "England",
        "Puerto-Rico",
        "Canada",
        "Germany",
        "Outlying-US(Guam-USVI-etc)",
        "India",
        "Japan",
        "Greece",
        "South",
        "China",
        "Cuba",
        "Iran",
        "Honduras",
        "Philippines",
        "Italy",
        "Poland",
        "Jamaica",
        "Vietnam",
        "Mexico",
        "Portugal",
        "Ireland",
        "France",
        "Dominican-Republic",
        "Laos",
        "Ecuador",
        "Taiwan",
        "Haiti",
        "Columbia",
        "Hungary",
        "Guatemala",
        "Nicaragua",
        "Scotland",
        "Thailand",
        "Yugoslavia",
        "El-Salvador",
        "Trinadad&Tobago",
        "Peru",
        "Hong",
        "Holand-Netherlands",
    ],
];

/// Encoded feature dimension.
pub fn feature_dim() -> usize {
    CONTINUOUS_COLUMNS.len() + VOCAB.iter().map(|v| v.len() + 1).sum::<usize>()
}

/// Parsing options for Adult-format CSV files.
#[derive(Clone, Debug, Default)]
pub struct AdultSchema {
    /// Skip the first non-comment line.
    pub has_header: bool,
}

/// One parsed row before numeric encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct AdultRecord {
    pub continuous: [f64; 6],
    /// Index into the column's vocabulary; `vocab.len()` means "other".
    pub categories: [usize; 8],
    pub label: u8,
    pub group: u8,
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim_end_matches('.') {
        ">50K" => Some(1),
        "<=50K" => Some(0),
        _ => None,
    }
}

/// Parses rows from any reader; returns the kept records and the number of
/// rows dropped for missing values.
pub fn parse_adult<R: std::io::Read>(
    input: R,
    schema: &AdultSchema,
) -> Result<(Vec<AdultRecord>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .comment(Some(b'|'))
        .flexible(true)
        .from_reader(input);
    let mut records = Vec::new();
    let mut dropped = 0usize;
    let mut unknown = 0usize;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            row: i + 1,
            msg: e.to_string(),
        })?;
        let row_no = row.position().map_or(i + 1, |p| p.line() as usize);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != NUM_COLUMNS {
            return Err(Error::Parse {
                row: row_no,
                msg: format!("expected {NUM_COLUMNS} fields, found {}", row.len()),
            });
        }
        if row.iter().any(|f| f == "?") {
            dropped += 1;
            continue;
        }
        let mut continuous = [0.0; 6];
        for (slot, &col) in continuous.iter_mut().zip(&CONTINUOUS_COLUMNS) {
            *slot = row[col].parse::<f64>().map_err(|e| Error::Parse {
                row: row_no,
                msg: format!("column {col}: {e}"),
            })?;
        }
        let mut categories = [0usize; 8];
        for (k, &col) in CATEGORICAL_COLUMNS.iter().enumerate() {
            categories[k] = match VOCAB[k].iter().position(|v| *v == &row[col]) {
                Some(p) => p,
                None => {
                    unknown += 1;
                    VOCAB[k].len()
                }
            };
        }
        let label = parse_label(&row[14]).ok_or_else(|| Error::Parse {
            row: row_no,
            msg: format!("unrecognised income label {:?}", &row[14]),
        })?;
        let group = u8::from(&row[RACE_COLUMN] == "White");
        records.push(AdultRecord {
            continuous,
            categories,
            label,
            group,
        });
    }
    if records.is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "no usable rows".into(),
        });
    }
    if dropped > 0 {
        info!("adult: dropped {dropped} rows with missing values");
    }
    if unknown > 0 {
        warn!("adult: {unknown} unknown category values mapped to 'other'");
    }
    Ok((records, dropped))
}

pub fn load_adult_records(path: &Path, schema: &AdultSchema) -> Result<Vec<AdultRecord>> {
    let file = std::fs::File::open(path)?;
    Ok(parse_adult(std::io::BufReader::new(file), schema)?.0)
}

/// z-score statistics for the continuous columns.
#[derive(Clone, Debug, PartialEq)]
pub struct AdultPreprocessor {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl AdultPreprocessor {
    /// Population mean and standard deviation per continuous column; a zero
    /// deviation is replaced by 1.
    pub fn fit(records: &[AdultRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("adult records"));
        }
        let n = records.len() as f64;
        let mut mean = [0.0; 6];
        let mut std = [0.0; 6];
        for c in 0..6 {
            mean[c] = records.iter().map(|r| r.continuous[c]).sum::<f64>() / n;
            let var = records
                .iter()
                .map(|r| (r.continuous[c] - mean[c]).powi(2))
                .sum::<f64>()
                / n;
            std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn encode(&self, r: &AdultRecord) -> Sample {
        let mut x = Vec::with_capacity(feature_dim());
        for c in 0..6 {
            x.push((r.continuous[c] - self.mean[c]) / self.std[c]);
        }
        for (k, vocab) in VOCAB.iter().enumerate() {
            let start = x.len();
            x.resize(start + vocab.len() + 1, 0.0);
            x[start + r.categories[k]] = 1.0;
        }
        Sample::new(x, r.label, r.group)
    }

    pub fn transform(&self, records: &[AdultRecord]) -> Result<Dataset> {
        Dataset::new(
            records.iter().map(|r| self.encode(r)).collect(),
            Provenance::Adult,
        )
    }
}

/// Loads an Adult CSV, one-hot encoding categoricals and z-scoring the
/// continuous columns with statistics of this file's own rows.
pub fn load_adult_csv(path: &Path, schema: &AdultSchema) -> Result<Dataset> {
    let records = load_adult_records(path, schema)?;
    AdultPreprocessor::fit(&records)?.transform(&records)
}
