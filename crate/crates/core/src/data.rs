//! Per-site datasets, CSV ingestion and cleaning, fold splits.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::Estimand;
use crate::rng::stream;
use crate::stats;

/// Cleaned data for one hypothesis at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDataset {
    pub site: String,
    pub hypothesis: String,
    /// Names of the covariate columns of `x`.
    pub covariates: Vec<String>,
    /// `n x L` covariate matrix without missing values.
    pub x: DMatrix<f64>,
    /// Binary treatment indicators, absent for one-sample designs.
    pub t: Option<Vec<f64>>,
    pub y: Vec<f64>,
}

impl SiteDataset {
    pub fn new(
        site: impl Into<String>,
        hypothesis: impl Into<String>,
        covariates: Vec<String>,
        x: DMatrix<f64>,
        t: Option<Vec<f64>>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let site = site.into();
        let hypothesis = hypothesis.into();
        if y.is_empty() {
            return Err(Error::EmptyDataset(format!("{hypothesis}/{site}")));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: x.nrows(),
            });
        }
        if covariates.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: covariates.len(),
            });
        }
        if let Some(t) = &t {
            if t.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: y.len(),
                    got: t.len(),
                });
            }
            if let Some(&bad) = t.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::NonBinaryTreatment { value: bad });
            }
        }
        Ok(Self {
            site,
            hypothesis,
            covariates,
            x,
            t,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn covariate_means(&self) -> Vec<f64> {
        column_means(&self.x)
    }

    /// Rows `idx` of this dataset, in the given order.
    pub fn subset(&self, idx: &[usize]) -> SiteDataset {
        SiteDataset {
            site: self.site.clone(),
            hypothesis: self.hypothesis.clone(),
            covariates: self.covariates.clone(),
            x: self.x.select_rows(idx),
            t: self.t.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

pub fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| stats::mean(x.column(j).as_slice()))
        .collect()
}

pub fn column_sds(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| stats::sample_sd(x.column(j).as_slice()))
        .collect()
}

/// A source site together with the covariates of a target site. The target's
/// outcomes and treatments are only attached for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PairTask<'a> {
    pub source: &'a SiteDataset,
    pub target_x: &'a DMatrix<f64>,
    pub target_full: Option<&'a SiteDataset>,
}

impl<'a> PairTask<'a> {
    pub fn new(source: &'a SiteDataset, target_x: &'a DMatrix<f64>) -> Result<Self> {
        if target_x.ncols() != source.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: source.x.ncols(),
                got: target_x.ncols(),
            });
        }
        if target_x.nrows() == 0 {
            return Err(Error::EmptyDataset("target covariates".into()));
        }
        Ok(Self {
            source,
            target_x,
            target_full: None,
        })
    }

    /// Task with the full target attached, for computing evaluation measures.
    pub fn with_target(source: &'a SiteDataset, target: &'a SiteDataset) -> Result<Self> {
        let mut task = Self::new(source, &target.x)?;
        task.target_full = Some(target);
        Ok(task)
    }

    /// Fails if target labels are attached.
    pub fn ensure_covariates_only(&self, context: &str) -> Result<()> {
        match self.target_full {
            None => Ok(()),
            Some(_) => Err(Error::Leakage(context.to_string())),
        }
    }
}

/// Every site of one hypothesis.
#[derive(Debug, Clone)]
pub struct HypothesisData {
    pub id: String,
    pub estimand: Estimand,
    pub sites: Vec<SiteDataset>,
}

/// A multi-site, multi-hypothesis collection.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub hypotheses: Vec<HypothesisData>,
}

impl Corpus {
    /// Group sites by hypothesis (in order of first appearance) and attach an
    /// estimand to each group.
    pub fn from_sites<F>(sites: Vec<SiteDataset>, mut estimand: F) -> Result<Corpus>
    where
        F: FnMut(&str, &[SiteDataset]) -> Result<Estimand>,
    {
        let mut groups: Vec<(String, Vec<SiteDataset>)> = Vec::new();
        for s in sites {
            match groups.iter_mut().find(|(h, _)| *h == s.hypothesis) {
                Some((_, v)) => v.push(s),
                None => groups.push((s.hypothesis.clone(), vec![s])),
            }
        }
        let hypotheses = groups
            .into_iter()
            .map(|(id, sites)| {
                let estimand = estimand(&id, &sites)?;
                Ok(HypothesisData { id, estimand, sites })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { hypotheses })
    }

    pub fn sites(&self) -> impl Iterator<Item = &SiteDataset> {
        self.hypotheses.iter().flat_map(|h| h.sites.iter())
    }
}

/// Two-fold partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    /// Fold label (0 or 1) of each index.
    pub assignment: Vec<u8>,
    /// Indices of each fold in ascending order.
    pub folds: [Vec<usize>; 2],
}

/// Random split of `0..n` into two folds whose sizes differ by at most one.
pub fn split_folds(n: usize, seed: u64) -> FoldSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "folds"));
    let cut = n.div_ceil(2);
    let mut assignment = vec![0u8; n];
    for &i in &idx[cut..] {
        assignment[i] = 1;
    }
    let mut folds = [Vec::with_capacity(cut), Vec::with_capacity(n - cut)];
    for (i, &a) in assignment.iter().enumerate() {
        folds[a as usize].push(i);
    }
    FoldSplit { assignment, folds }
}

/// Indices of covariates whose target mean lies within the closed source
/// range. The others cannot be balanced by reweighting.
pub fn exclude_unbalanceable_covariates(source_x: &DMatrix<f64>, target_means: &[f64]) -> Vec<usize> {
    let mut kept = Vec::new();
    for (j, &m) in target_means.iter().enumerate().take(source_x.ncols()) {
        let col = source_x.column(j);
        let lo = col.min();
        let hi = col.max();
        if m >= lo && m <= hi {
            kept.push(j);
        } else {
            log::warn!("covariate {j}: target mean {m} outside source range [{lo}, {hi}], excluded");
        }
    }
    kept
}

/// How covariate columns are recognised in a CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateColumns {
    /// Columns named `<prefix><digits>`.
    Prefix(String),
    Named(Vec<String>),
}

/// Column names of the ingestion format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub site: String,
    pub hypothesis: String,
    pub outcome: String,
    pub treatment: Option<String>,
    pub covariates: CovariateColumns,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            site: "site".into(),
            hypothesis: "hypothesis".into(),
            outcome: "y".into(),
            treatment: Some("t".into()),
            covariates: CovariateColumns::Prefix("x".into()),
        }
    }
}

fn parse_cell(raw: &str, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::InvalidValue {
        column: column.to_string(),
        value: s.to_string(),
    })
}

struct RawGroup {
    site: String,
    hypothesis: String,
    y: Vec<Option<f64>>,
    t: Vec<Option<f64>>,
    x: Vec<Vec<Option<f64>>>,
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn read_groups(path: &Path, schema: &CsvSchema) -> Result<(Vec<String>, Vec<RawGroup>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = rdr.headers()?.clone();
    let site_col = find(&headers, &schema.site)?;
    let hyp_col = find(&headers, &schema.hypothesis)?;
    let y_col = find(&headers, &schema.outcome)?;
    let t_col = match &schema.treatment {
        Some(name) => headers.iter().position(|h| h.trim() == name),
        None => None,
    };
    let cov_cols: Vec<(usize, String)> = match &schema.covariates {
        CovariateColumns::Prefix(p) => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                let h = h.trim();
                h.len() > p.len()
                    && h.starts_with(p.as_str())
                    && h[p.len()..].chars().all(|c| c.is_ascii_digit())
            })
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect(),
        CovariateColumns::Named(names) => names
            .iter()
            .map(|n| find(&headers, n).map(|i| (i, n.clone())))
            .collect::<Result<_>>()?,
    };
    if cov_cols.is_empty() {
        let what = match &schema.covariates {
            CovariateColumns::Prefix(p) => format!("{p}1"),
            CovariateColumns::Named(_) => "covariates".to_string(),
        };
        return Err(Error::MissingColumn(what));
    }
    let names: Vec<String> = cov_cols.iter().map(|(_, n)| n.clone()).collect();

    let mut groups: Vec<RawGroup> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let site = rec.get(site_col).unwrap_or("").trim().to_string();
        let hyp = rec.get(hyp_col).unwrap_or("").trim().to_string();
        let gi = *index.entry((hyp.clone(), site.clone())).or_insert_with(|| {
            groups.push(RawGroup {
                site: site.clone(),
                hypothesis: hyp.clone(),
                y: Vec::new(),
                t: Vec::new(),
                x: vec![Vec::new(); cov_cols.len()],
            });
            groups.len() - 1
        });
        let g = &mut groups[gi];
        g.y.push(parse_cell(rec.get(y_col).unwrap_or(""), &schema.outcome)?);
        g.t.push(match t_col {
            Some(c) => parse_cell(rec.get(c).unwrap_or(""), "treatment")?,
            None => None,
        });
        for (k, (c, name)) in cov_cols.iter().enumerate() {
            g.x[k].push(parse_cell(rec.get(*c).unwrap_or(""), name)?);
        }
    }
    Ok((names, groups))
}

fn clean_group(g: RawGroup, names: &[String]) -> Result<SiteDataset> {
    let label = format!("{}/{}", g.hypothesis, g.site);
    let has_t = g.t.iter().any(Option::is_some);
    let keep: Vec<usize> = (0..g.y.len())
        .filter(|&i| g.y[i].is_some() && (!has_t || g.t[i].is_some()))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset(label));
    }
    let dropped = g.y.len() - keep.len();
    if dropped > 0 {
        log::info!("{label}: dropped {dropped} rows with missing outcome or treatment");
    }
    let y: Vec<f64> = keep.iter().map(|&i| g.y[i].unwrap()).collect();
    let t = if has_t {
        let t: Vec<f64> = keep.iter().map(|&i| g.t[i].unwrap()).collect();
        if let Some(&bad) = t.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryTreatment { value: bad });
        }
        Some(t)
    } else {
        None
    };

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut kept_names = Vec::new();
    for (k, col) in g.x.iter().enumerate() {
        let vals: Vec<Option<f64>> = keep.iter().map(|&i| col[i]).collect();
        let observed: Vec<f64> = vals.iter().flatten().copied().collect();
        let Some(med) = stats::median(&observed) else {
            log::info!("{label}: covariate {} entirely missing, dropped", names[k]);
            continue;
        };
        cols.push(vals.iter().map(|v| v.unwrap_or(med)).collect());
        kept_names.push(names[k].clone());
    }
    if cols.is_empty() {
        return Err(Error::AllCovariatesDropped(label));
    }
    let n = y.len();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    SiteDataset::new(g.site, g.hypothesis, kept_names, x, t, y)
}

/// Restrict every site of a hypothesis to the covariates observed at all of
/// its sites, so that column counts agree.
fn harmonize(sites: Vec<SiteDataset>) -> Result<Vec<SiteDataset>> {
    let mut by_hyp: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in sites.iter().enumerate() {
        match by_hyp.iter_mut().find(|(h, _)| *h == s.hypothesis) {
            Some((_, v)) => v.push(i),
            None => by_hyp.push((s.hypothesis.clone(), vec![i])),
        }
    }
    let mut out: Vec<Option<SiteDataset>> = sites.into_iter().map(Some).collect();
    for (hyp, members) in by_hyp {
        let common: Vec<String> = out[members[0]]
            .as_ref()
            .unwrap()
            .covariates
            .iter()
            .filter(|c| {
                members
                    .iter()
                    .all(|&m| out[m].as_ref().unwrap().covariates.contains(c))
            })
            .cloned()
            .collect();
        if common.is_empty() {
            return Err(Error::AllCovariatesDropped(hyp));
        }
        for &m in &members {
            let s = out[m].as_mut().unwrap();
            if s.covariates.len() != common.len() {
                let idx: Vec<usize> = common
                    .iter()
                    .map(|c| s.covariates.iter().position(|d| d == c).unwrap())
                    .collect();
                log::info!(
                    "{}/{}: keeping {} covariates shared by all sites",
                    s.hypothesis,
                    s.site,
                    common.len()
                );
                s.x = s.x.select_columns(&idx);
                s.covariates = common.clone();
            }
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Load and clean every (hypothesis, site) group of a CSV file, in order of
/// first appearance.
pub fn load_sites(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<SiteDataset>> {
    let (names, groups) = read_groups(path.as_ref(), schema)?;
    if groups.is_empty() {
        return Err(Error::EmptyDataset(path.as_ref().display().to_string()));
    }
    let sites = groups
        .into_iter()
        .map(|g| clean_group(g, &names))
        .collect::<Result<Vec<_>>>()?;
    harmonize(sites)
}

/// Load a file holding exactly one (hypothesis, site) group.
pub fn load_site_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SiteDataset> {
    let mut sites = load_sites(path.as_ref(), schema)?;
    if sites.len() != 1 {
        return Err(Error::Config(format!(
            "{} holds {} site/hypothesis groups, expected one",
            path.as_ref().display(),
            sites.len()
        )));
    }
    Ok(sites.pop().unwrap())
}

/// Read only the named covariate columns of a target file, in the given
/// order, filling gaps with the column median. Outcome and treatment columns
/// are never read.
pub fn load_target_covariates(path: impl AsRef<Path>, names: &[String]) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = rdr.headers()?.clone();
    let cols = names.iter().map(|n| find(&headers, n)).collect::<Result<Vec<_>>>()?;
    let mut vals: Vec<Vec<Option<f64>>> = vec![Vec::new(); cols.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (k, &c) in cols.iter().enumerate() {
            vals[k].push(parse_cell(rec.get(c).unwrap_or(""), &names[k])?);
        }
    }
    let n = vals.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let mut filled = Vec::with_capacity(cols.len());
    for (k, col) in vals.iter().enumerate() {
        let observed: Vec<f64> = col.iter().flatten().copied().collect();
        let med = stats::median(&observed).ok_or_else(|| Error::AllCovariatesDropped(format!("{}: {}", path.display(), names[k])))?;
        filled.push(col.iter().map(|v| v.unwrap_or(med)).collect::<Vec<_>>());
    }
    Ok(DMatrix::from_fn(n, cols.len(), |i, j| filled[j][i]))
}

/// Write datasets in the ingestion format (`site,hypothesis,y,t,x1..`).
pub fn write_sites_csv(path: impl AsRef<Path>, sites: &[SiteDataset]) -> Result<()> {
    let path = path.as_ref();
    let mut names: Vec<String> = Vec::new();
    for s in sites {
        for c in &s.covariates {
            if !names.contains(c) {
                names.push(c.clone());
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["site".to_string(), "hypothesis".into(), "y".into(), "t".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for s in sites {
        let pos: Vec<Option<usize>> = names
            .iter()
            .map(|n| s.covariates.iter().position(|c| c == n))
            .collect();
        for i in 0..s.n() {
            let mut rec = vec![s.site.clone(), s.hypothesis.clone(), s.y[i].to_string()];
            rec.push(s.t.as_ref().map(|t| t[i].to_string()).unwrap_or_default());
            for p in &pos {
                rec.push(p.map(|j| s.x[(i, j)].to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn imputes_site_median() {
        let f = write_tmp("site,hypothesis,y,x1\nA,h,1,1\nA,h,2,NA\nA,h,3,3\n");
        let d = load_site_dataset(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.x.column(0).as_slice(), &[1.0, 2.0, 3.0]);
        assert!(d.t.is_none());
    }

    #[test]
    fn drops_all_missing_column() {
        let f = write_tmp("site,hypothesis,y,x1,x2\nA,h,1,,5\nA,h,2,NA,6\n");
        let d = load_site_dataset(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.covariates, vec!["x2".to_string()]);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let f = write_tmp("site,hypothesis,y,t,x1\nA,h,1,2,0\nA,h,1,0,1\n");
        let e = load_site_dataset(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(e, Error::NonBinaryTreatment { value } if value == 2.0));
    }

    #[test]
    fn missing_outcome_column() {
        let f = write_tmp("site,hypothesis,t,x1\nA,h,1,0\n");
        let e = load_site_dataset(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(e, Error::MissingColumn(c) if c == "y"));
    }

    #[test]
    fn all_rows_missing_outcome_is_empty() {
        let f = write_tmp("site,hypothesis,y,x1\nA,h,NA,1\nA,h,,2\n");
        let e = load_site_dataset(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(e, Error::EmptyDataset(_)));
    }

    #[test]
    fn drops_rows_with_missing_treatment() {
        let f = write_tmp("site,hypothesis,y,t,x1\nA,h,1,1,0\nA,h,2,,1\nA,h,3,0,2\n");
        let d = load_site_dataset(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.y, vec![1.0, 3.0]);
        assert_eq!(d.t, Some(vec![1.0, 0.0]));
    }

    #[test]
    fn harmonizes_covariates_within_hypothesis() {
        let f = write_tmp("site,hypothesis,y,x1,x2\nA,h,1,1,NA\nA,h,2,2,NA\nB,h,1,1,3\nB,h,2,2,4\n");
        let sites = load_sites(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(sites.len(), 2);
        assert!(sites.iter().all(|s| s.covariates == vec!["x1".to_string()]));
    }

    #[test]
    fn round_trips_through_csv() {
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 1.0, -1.0, 2.0, 3.0, 0.0]);
        let d = SiteDataset::new("s1", "h1", vec!["x1".into(), "x2".into()], x, Some(vec![1.0, 0.0, 1.0]), vec![1.5, 2.5, -3.0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_sites_csv(f.path(), std::slice::from_ref(&d)).unwrap();
        let back = load_site_dataset(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn fold_split_halves() {
        let s = split_folds(10, 3);
        assert_eq!(s.folds[0].len(), 5);
        assert_eq!(s.folds[1].len(), 5);
        let mut all: Vec<usize> = s.folds.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let one = split_folds(1, 3);
        assert_eq!(one.folds[0].len() + one.folds[1].len(), 1);
        assert_eq!(split_folds(10, 3), s);
    }

    #[test]
    fn exclusion_is_closed_interval() {
        let x = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        assert_eq!(exclude_unbalanceable_covariates(&x, &[2.0, 2.5]), vec![0]);
        assert_eq!(exclude_unbalanceable_covariates(&x, &[0.0, -0.1]), vec![0]);
    }
}
