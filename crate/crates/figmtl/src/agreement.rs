//! Inter-annotator agreement over binary labels: pairwise Cohen's κ,
//! Fleiss' K for many raters, and the Landis–Koch interpretation bands.

use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::HashMap;

/// Item × annotator label matrix; `None` marks an item an annotator
/// skipped. Arbitrary overlap patterns are allowed — each statistic drops
/// what it cannot use and says how much it dropped.
#[derive(Debug, Clone)]
pub struct AgreementTable {
    pub annotators: Vec<String>,
    pub items: Vec<String>,
    labels: Vec<Vec<Option<u8>>>,
}

impl AgreementTable {
    pub fn new(
        annotators: Vec<String>,
        items: Vec<String>,
        labels: Vec<Vec<Option<u8>>>,
    ) -> Result<Self> {
        if annotators.len() < 2 {
            return Err(Error::Data("an agreement table needs at least 2 annotators".into()));
        }
        if labels.len() != items.len() {
            return Err(Error::Contract(format!(
                "{} label rows for {} items",
                labels.len(),
                items.len()
            )));
        }
        for (item, row) in items.iter().zip(&labels) {
            if row.len() != annotators.len() {
                return Err(Error::Contract(format!(
                    "item {item} has {} entries for {} annotators",
                    row.len(),
                    annotators.len()
                )));
            }
            if row.iter().flatten().any(|&l| l > 1) {
                return Err(Error::Data(format!("item {item} carries a non-binary label")));
            }
        }
        Ok(AgreementTable { annotators, items, labels })
    }

    /// Parse `item_id,annotator_id,label` CSV. Annotators and items keep
    /// first-appearance order; duplicate (item, annotator) cells are
    /// rejected.
    pub fn from_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (item_col, annot_col, label_col) = match (col("item_id"), col("annotator_id"), col("label")) {
            (Some(i), Some(a), Some(l)) => (i, a, l),
            _ => {
                return Err(Error::Data(
                    "agreement csv needs item_id, annotator_id and label columns".into(),
                ))
            }
        };

        let mut annotators: Vec<String> = Vec::new();
        let mut items: Vec<String> = Vec::new();
        let mut annotator_index: HashMap<String, usize> = HashMap::new();
        let mut item_index: HashMap<String, usize> = HashMap::new();
        let mut cells: HashMap<(usize, usize), u8> = HashMap::new();

        for (row_idx, record) in csv_reader.records().enumerate() {
            let line = row_idx + 2;
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
            let item = field(item_col);
            let annotator = field(annot_col);
            let label = match field(label_col).as_str() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::Data(format!(
                        "line {line}: unknown label value {other:?}"
                    )))
                }
            };
            let a = *annotator_index.entry(annotator.clone()).or_insert_with(|| {
                annotators.push(annotator);
                annotators.len() - 1
            });
            let i = *item_index.entry(item.clone()).or_insert_with(|| {
                items.push(item);
                items.len() - 1
            });
            if cells.insert((i, a), label).is_some() {
                return Err(Error::Data(format!(
                    "line {line}: duplicate rating for item {} by annotator {}",
                    items[i], annotators[a]
                )));
            }
        }

        let labels = (0..items.len())
            .map(|i| (0..annotators.len()).map(|a| cells.get(&(i, a)).copied()).collect())
            .collect();
        AgreementTable::new(annotators, items, labels)
    }

    pub fn n_annotators(&self) -> usize {
        self.annotators.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Label vectors for one annotator across all items.
    pub fn column(&self, annotator: usize) -> Vec<Option<u8>> {
        self.labels.iter().map(|row| row[annotator]).collect()
    }

    fn row(&self, item: usize) -> &[Option<u8>] {
        &self.labels[item]
    }
}

/// Cohen's κ between two aligned binary label vectors:
/// `(p_o − p_e) / (1 − p_e)` with marginal-product chance agreement.
/// Two constant, identical vectors (p_e = 1) are defined as κ = 1.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cohen_kappa needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Data("cohen_kappa on an empty overlap".into()));
    }
    if a.iter().chain(b).any(|&l| l > 1) {
        return Err(Error::Data("cohen_kappa labels must be bits".into()));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa1 = a.iter().filter(|&&x| x == 1).count() as f64 / n;
    let pb1 = b.iter().filter(|&&x| x == 1).count() as f64 / n;
    let expected = pa1 * pb1 + (1.0 - pa1) * (1.0 - pb1);
    if expected == 1.0 {
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Fleiss' K plus how many items were usable.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FleissResult {
    pub kappa: f64,
    pub items_used: usize,
    pub items_dropped: usize,
}

/// Fleiss' K over all items rated by every annotator; items with missing
/// ratings are dropped (counted in the result), which keeps the rater count
/// constant as the statistic requires.
pub fn fleiss_kappa(table: &AgreementTable) -> Result<FleissResult> {
    let n_raters = table.n_annotators();
    let complete: Vec<usize> = (0..table.n_items())
        .filter(|&i| table.row(i).iter().all(Option::is_some))
        .collect();
    let items_dropped = table.n_items() - complete.len();
    if complete.is_empty() {
        return Err(Error::Data("no items rated by every annotator".into()));
    }

    let n = n_raters as f64;
    let big_n = complete.len() as f64;
    let mut p_bar = 0.0;
    let mut count_per_class = [0.0f64; 2];
    for &i in &complete {
        let ones = table.row(i).iter().flatten().filter(|&&l| l == 1).count() as f64;
        let zeros = n - ones;
        count_per_class[0] += zeros;
        count_per_class[1] += ones;
        p_bar += (ones * (ones - 1.0) + zeros * (zeros - 1.0)) / (n * (n - 1.0));
    }
    p_bar /= big_n;
    let p_e: f64 = count_per_class
        .iter()
        .map(|&c| {
            let p = c / (big_n * n);
            p * p
        })
        .sum();

    let kappa = if p_e == 1.0 {
        if p_bar == 1.0 {
            1.0
        } else {
            return Err(Error::Data(
                "degenerate label distribution: chance agreement is 1 with imperfect agreement"
                    .into(),
            ));
        }
    } else {
        (p_bar - p_e) / (1.0 - p_e)
    };
    Ok(FleissResult { kappa, items_used: complete.len(), items_dropped })
}

/// Landis–Koch agreement bands, pinned in one place: values at a band edge
/// take the lower band's label, so 0.0 reads as "slight" and 0.80 as
/// "substantial".
pub fn interpret(kappa: f64) -> Result<&'static str> {
    if !(-1.0..=1.0).contains(&kappa) {
        return Err(Error::Contract(format!("kappa {kappa} outside [-1, 1]")));
    }
    Ok(if kappa < 0.0 {
        "poor"
    } else if kappa <= 0.20 {
        "slight"
    } else if kappa <= 0.40 {
        "fair"
    } else if kappa <= 0.60 {
        "moderate"
    } else if kappa <= 0.80 {
        "substantial"
    } else {
        "almost perfect"
    })
}

/// One pairwise κ cell of the report.
#[derive(Debug, Clone, Serialize)]
pub struct PairwiseEntry {
    pub annotator_a: String,
    pub annotator_b: String,
    /// None when the two annotators share no items.
    pub kappa: Option<f64>,
    pub band: Option<String>,
    pub overlap: usize,
}

/// Pairwise κ matrix plus Fleiss' K, mirroring the usual agreement table.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub annotators: Vec<String>,
    pub pairwise: Vec<PairwiseEntry>,
    pub fleiss: Option<FleissResult>,
    pub fleiss_band: Option<String>,
    pub warnings: Vec<String>,
}

/// Compute every pairwise κ (dropping items either annotator skipped) and
/// Fleiss' K over fully rated items.
pub fn agreement_report(table: &AgreementTable) -> Result<AgreementReport> {
    let mut pairwise = Vec::new();
    let mut warnings = Vec::new();
    for a in 0..table.n_annotators() {
        for b in (a + 1)..table.n_annotators() {
            let col_a = table.column(a);
            let col_b = table.column(b);
            let (overlap_a, overlap_b): (Vec<u8>, Vec<u8>) = col_a
                .iter()
                .zip(&col_b)
                .filter_map(|(&x, &y)| Some((x?, y?)))
                .unzip();
            let dropped = table.n_items() - overlap_a.len();
            if dropped > 0 {
                warnings.push(format!(
                    "{} vs {}: {dropped} items lacked a rating from one side",
                    table.annotators[a], table.annotators[b]
                ));
            }
            let kappa = match cohen_kappa(&overlap_a, &overlap_b) {
                Ok(k) => Some(k),
                Err(Error::Data(_)) if overlap_a.is_empty() => None,
                Err(e) => return Err(e),
            };
            pairwise.push(PairwiseEntry {
                annotator_a: table.annotators[a].clone(),
                annotator_b: table.annotators[b].clone(),
                kappa,
                band: kappa.map(|k| interpret(k).map(str::to_string)).transpose()?,
                overlap: overlap_a.len(),
            });
        }
    }
    let fleiss = match fleiss_kappa(table) {
        Ok(result) => {
            if result.items_dropped > 0 {
                warnings.push(format!(
                    "fleiss: {} items dropped for missing ratings",
                    result.items_dropped
                ));
            }
            Some(result)
        }
        Err(Error::Data(msg)) => {
            warnings.push(format!("fleiss unavailable: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(AgreementReport {
        annotators: table.annotators.clone(),
        pairwise,
        fleiss,
        fleiss_band: fleiss.map(|f| interpret(f.kappa).map(str::to_string)).transpose()?,
        warnings,
    })
}
