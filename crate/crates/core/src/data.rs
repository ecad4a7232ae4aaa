//! Trial data: ingestion, validation and reduction to per-pair sufficient
//! statistics.
//!
//! A trial is a set of clusters, each belonging to exactly one matched pair,
//! with exactly one treated cluster per pair. Every likelihood in this crate
//! only needs, per pair, the two cluster sizes, the two cluster means, the
//! pooled within-cluster sum of squares and (optionally) the two cluster
//! covariates; [`PairSummary`] holds exactly that.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// One cluster of a matched pair, with its individual outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    /// Dense pair index in `1..=n_pairs`.
    pub pair_id: usize,
    pub cluster_id: String,
    pub treated: bool,
    pub outcomes: Vec<f64>,
    /// Cluster-level covariate, constant within the cluster.
    pub covariate: Option<f64>,
}

/// Individual-level outcomes grouped into clusters nested in pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub clusters: Vec<ClusterRecord>,
    pub n_pairs: usize,
}

impl TrialDataset {
    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(|c| c.outcomes.len()).sum()
    }

    /// True when at least one cluster carries a covariate value.
    pub fn has_covariate(&self) -> bool {
        self.clusters.iter().any(|c| c.covariate.is_some())
    }

    /// Reads a trial CSV with header `pair_id,cluster_id,treated,y[,x]`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Same as [`TrialDataset::from_csv_path`] over any reader.
    ///
    /// Pair labels may be arbitrary; they are re-indexed to `1..=K` in sorted
    /// order (numeric order when every label is an integer, lexicographic
    /// otherwise). Clusters are keyed by `(pair label, cluster_id)` and keep
    /// their outcomes in file order.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| headers.iter().position(|h| h == name);
        let required = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        let pair_col = required("pair_id")?;
        let cluster_col = required("cluster_id")?;
        let treated_col = required("treated")?;
        let y_col = required("y")?;
        let x_col = column("x");

        struct Partial {
            pair_label: String,
            cluster_id: String,
            treated: bool,
            outcomes: Vec<f64>,
            covariate: Option<f64>,
        }

        let mut order: Vec<Partial> = Vec::new();
        let mut index: HashMap<(String, String), usize> = HashMap::new();
        let mut n_rows = 0usize;

        for (row_no, record) in rdr.records().enumerate() {
            let record = record?;
            // header is line 1
            let line = row_no as u64 + 2;
            let field = |col: usize| record.get(col).unwrap_or("");
            let parse_err = |message: String| Error::Parse { line, message };

            let pair_label = field(pair_col).to_string();
            let cluster_id = field(cluster_col).to_string();
            if pair_label.is_empty() || cluster_id.is_empty() {
                return Err(parse_err("empty pair_id or cluster_id".into()));
            }
            let treated = match field(treated_col) {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(format!("treated must be 0 or 1, got `{other}`"))),
            };
            let y: f64 = field(y_col)
                .parse()
                .map_err(|_| parse_err(format!("non-numeric outcome `{}`", field(y_col))))?;
            if !y.is_finite() {
                return Err(parse_err(format!("non-finite outcome `{}`", field(y_col))));
            }
            let x = match x_col.map(field) {
                None | Some("") => None,
                Some(raw) => {
                    let v: f64 = raw.parse().map_err(|_| parse_err(format!("non-numeric covariate `{raw}`")))?;
                    if !v.is_finite() {
                        return Err(parse_err(format!("non-finite covariate `{raw}`")));
                    }
                    Some(v)
                }
            };

            let key = (pair_label.clone(), cluster_id.clone());
            let slot = *index.entry(key).or_insert_with(|| {
                order.push(Partial { pair_label, cluster_id, treated, outcomes: Vec::new(), covariate: None });
                order.len() - 1
            });
            let cluster = &mut order[slot];
            if cluster.treated != treated {
                return Err(parse_err(format!("cluster `{}` has inconsistent treated flags", cluster.cluster_id)));
            }
            if let Some(v) = x {
                match cluster.covariate {
                    Some(prev) if prev != v => {
                        return Err(parse_err(format!(
                            "covariate differs within cluster `{}` ({prev} vs {v})",
                            cluster.cluster_id
                        )))
                    }
                    _ => cluster.covariate = Some(v),
                }
            }
            cluster.outcomes.push(y);
            n_rows += 1;
        }
        if n_rows == 0 {
            return Err(Error::EmptyFile);
        }

        let labels: Vec<&str> = order.iter().map(|c| c.pair_label.as_str()).collect();
        let remap: HashMap<String, usize> =
            dense_pair_ids(&labels).into_iter().map(|(l, i)| (l.to_string(), i)).collect();
        let n_pairs = remap.len();
        let clusters = order
            .into_iter()
            .map(|c| ClusterRecord {
                pair_id: remap[&c.pair_label],
                cluster_id: c.cluster_id,
                treated: c.treated,
                outcomes: c.outcomes,
                covariate: c.covariate,
            })
            .collect();
        Ok(TrialDataset { clusters, n_pairs })
    }

    /// Writes the dataset in the trial CSV format, one row per individual.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let with_x = self.has_covariate();
        let mut wtr = csv::Writer::from_writer(writer);
        if with_x {
            wtr.write_record(["pair_id", "cluster_id", "treated", "y", "x"])?;
        } else {
            wtr.write_record(["pair_id", "cluster_id", "treated", "y"])?;
        }
        for c in &self.clusters {
            for y in &c.outcomes {
                let mut row = vec![
                    c.pair_id.to_string(),
                    c.cluster_id.clone(),
                    if c.treated { "1" } else { "0" }.to_string(),
                    y.to_string(),
                ];
                if with_x {
                    row.push(c.covariate.map(|v| v.to_string()).unwrap_or_default());
                }
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn dense_pair_ids<'a>(labels: &[&'a str]) -> BTreeMap<&'a str, usize> {
    let mut distinct: Vec<&str> = labels.iter().copied().collect::<HashSet<_>>().into_iter().collect();
    let numeric: Option<Vec<i64>> = distinct.iter().map(|l| l.parse::<i64>().ok()).collect();
    match numeric {
        Some(_) => distinct.sort_by_key(|l| l.parse::<i64>().unwrap_or_default()),
        None => distinct.sort_unstable(),
    }
    distinct.into_iter().enumerate().map(|(i, l)| (l, i + 1)).collect()
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoPairs,
    PairOutOfRange { pair_id: usize, n_pairs: usize },
    PairClusterCount { pair_id: usize, count: usize },
    PairTreatedCount { pair_id: usize, treated: usize },
    DuplicateClusterId { cluster_id: String },
    EmptyCluster { cluster_id: String },
    NonFiniteOutcome { cluster_id: String },
    MissingCovariate { cluster_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoPairs => write!(f, "dataset has no pairs"),
            Violation::PairOutOfRange { pair_id, n_pairs } => {
                write!(f, "pair {pair_id}: outside 1..={n_pairs}")
            }
            Violation::PairClusterCount { pair_id, count } => {
                let noun = if *count == 1 { "cluster" } else { "clusters" };
                write!(f, "pair {pair_id}: {count} {noun}")
            }
            Violation::PairTreatedCount { pair_id, treated: 0 } => write!(f, "pair {pair_id}: no treated cluster"),
            Violation::PairTreatedCount { pair_id, treated } => {
                let count = match treated {
                    2 => "two".to_string(),
                    n => n.to_string(),
                };
                write!(f, "pair {pair_id}: {count} treated clusters")
            }
            Violation::DuplicateClusterId { cluster_id } => write!(f, "cluster {cluster_id}: duplicate cluster_id"),
            Violation::EmptyCluster { cluster_id } => write!(f, "cluster {cluster_id}: no outcomes"),
            Violation::NonFiniteOutcome { cluster_id } => write!(f, "cluster {cluster_id}: non-finite outcome"),
            Violation::MissingCovariate { cluster_id } => {
                write!(f, "cluster {cluster_id}: covariate missing while other clusters have one")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Reports every structural problem with `dataset`. An empty report means
/// the dataset can be summarized and fitted.
pub fn validate(dataset: &TrialDataset) -> ValidationReport {
    let mut violations = Vec::new();
    if dataset.n_pairs == 0 {
        violations.push(Violation::NoPairs);
    }

    let mut seen_ids = HashSet::new();
    let mut by_pair: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let any_covariate = dataset.has_covariate();
    for c in &dataset.clusters {
        if !seen_ids.insert(c.cluster_id.as_str()) {
            violations.push(Violation::DuplicateClusterId { cluster_id: c.cluster_id.clone() });
        }
        if c.outcomes.is_empty() {
            violations.push(Violation::EmptyCluster { cluster_id: c.cluster_id.clone() });
        }
        if c.outcomes.iter().any(|y| !y.is_finite()) {
            violations.push(Violation::NonFiniteOutcome { cluster_id: c.cluster_id.clone() });
        }
        if any_covariate && c.covariate.is_none() {
            violations.push(Violation::MissingCovariate { cluster_id: c.cluster_id.clone() });
        }
        if c.pair_id == 0 || c.pair_id > dataset.n_pairs {
            violations.push(Violation::PairOutOfRange { pair_id: c.pair_id, n_pairs: dataset.n_pairs });
            continue;
        }
        let entry = by_pair.entry(c.pair_id).or_default();
        entry.0 += 1;
        entry.1 += usize::from(c.treated);
    }

    for pair_id in 1..=dataset.n_pairs {
        let (count, treated) = by_pair.get(&pair_id).copied().unwrap_or((0, 0));
        if count != 2 {
            violations.push(Violation::PairClusterCount { pair_id, count });
        } else if treated != 1 {
            violations.push(Violation::PairTreatedCount { pair_id, treated });
        }
    }
    ValidationReport { violations }
}

/// Per-pair sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSummary {
    pub pair_id: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub mean_treated: f64,
    pub mean_control: f64,
    /// Sum over both clusters of squared deviations from the cluster mean.
    pub sse_within: f64,
    pub x_treated: Option<f64>,
    pub x_control: Option<f64>,
}

impl PairSummary {
    pub fn n_total(&self) -> usize {
        self.n_treated + self.n_control
    }
}

/// Mean and sum of squared deviations, independent of the order of `values`.
fn moments(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let sse = sorted.iter().map(|y| (y - mean) * (y - mean)).sum();
    (mean, sse)
}

/// Reduces a valid dataset to one [`PairSummary`] per pair, sorted by pair.
pub fn pair_summaries(dataset: &TrialDataset) -> Result<Vec<PairSummary>> {
    let report = validate(dataset);
    if !report.is_valid() {
        return Err(Error::Invalid(report));
    }
    let mut slots: Vec<(Option<&ClusterRecord>, Option<&ClusterRecord>)> = vec![(None, None); dataset.n_pairs];
    for c in &dataset.clusters {
        let slot = &mut slots[c.pair_id - 1];
        if c.treated {
            slot.0 = Some(c);
        } else {
            slot.1 = Some(c);
        }
    }
    let summaries = slots
        .into_iter()
        .enumerate()
        .map(|(i, pair)| {
            let (t, c) = match pair {
                (Some(t), Some(c)) => (t, c),
                _ => unreachable!("validated pair {} lacks an arm", i + 1),
            };
            let (mean_treated, sse_t) = moments(&t.outcomes);
            let (mean_control, sse_c) = moments(&c.outcomes);
            PairSummary {
                pair_id: i + 1,
                n_treated: t.outcomes.len(),
                n_control: c.outcomes.len(),
                mean_treated,
                mean_control,
                sse_within: sse_t + sse_c,
                x_treated: t.covariate,
                x_control: c.covariate,
            }
        })
        .collect();
    Ok(summaries)
}

/// Stable 64-bit FNV-1a digest of a set of summaries, used to check that two
/// fits were computed on the same data.
pub fn fingerprint(summaries: &[PairSummary]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    };
    for s in summaries {
        feed(s.pair_id as u64);
        feed(s.n_treated as u64);
        feed(s.n_control as u64);
        feed(s.mean_treated.to_bits());
        feed(s.mean_control.to_bits());
        feed(s.sse_within.to_bits());
        feed(s.x_treated.map_or(u64::MAX, f64::to_bits));
        feed(s.x_control.map_or(u64::MAX, f64::to_bits));
    }
    h
}
