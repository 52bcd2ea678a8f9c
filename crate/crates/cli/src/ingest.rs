//! Delimited phenotype and genotype tables.
//!
//! Both files have a header row and one row per subject with the subject id in
//! the first column. Tab is used as the delimiter when the header contains one,
//! comma otherwise. `NA`, `.`, `NaN` and empty fields are missing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use cbmat::margins::DesignMatrix;
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub trait1: String,
    pub trait2: String,
    pub covars: Vec<String>,
    pub trait1_binary: bool,
    pub min_subjects: usize,
}

impl IngestOptions {
    pub fn new(trait1: &str, trait2: &str, covars: &[String], trait1_binary: bool) -> Self {
        IngestOptions {
            trait1: trait1.into(),
            trait2: trait2.into(),
            covars: covars.to_vec(),
            trait1_binary,
            min_subjects: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    /// Subject ids, sorted.
    pub ids: Vec<String>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub x: DesignMatrix,
    pub g: DMatrix<f64>,
    pub variants: Vec<String>,
    /// Minor allele frequency of each kept variant.
    pub maf: Vec<f64>,
    pub dropped_missing: usize,
    /// Subjects present in only one of the two files.
    pub unmatched: usize,
    pub dropped_variants: Vec<String>,
    pub imputed: usize,
    pub warnings: Vec<String>,
}

struct Table {
    header: Vec<String>,
    /// `(line number, fields)`.
    rows: Vec<(u64, Vec<String>)>,
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "N/A" | "." | "NaN" | "nan")
}

fn read_table(path: &Path, what: &str) -> CliResult<Table> {
    let stage = "ingest";
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::input(stage, format!("cannot read {what} file {}: {e}", path.display()), "check the path")
    })?;
    let first = text.lines().next().unwrap_or("");
    let delim = if first.contains('\t') { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input(stage, format!("{what} file line {line}: {e}"), "every row needs the same number of fields as the header")
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if header.is_none() {
            header = Some(fields);
        } else if !fields.iter().all(|f| f.is_empty()) {
            rows.push((line, fields));
        }
    }
    let header = header.ok_or_else(|| CliError::input(stage, format!("{what} file is empty"), "add a header row"))?;
    if header.len() < 2 {
        return Err(CliError::input(stage, format!("{what} file needs an id column and at least one data column"), "check the delimiter (tab or comma)"));
    }
    Ok(Table { header, rows })
}

fn column(t: &Table, name: &str, what: &str) -> CliResult<usize> {
    t.header.iter().skip(1).position(|h| h == name).map(|i| i + 1).ok_or_else(|| {
        CliError::input(
            "ingest",
            format!("column '{name}' not found in {what} file"),
            format!("available columns: {}", t.header[1..].join(", ")),
        )
    })
}

fn index_ids(t: &Table, what: &str) -> CliResult<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(t.rows.len());
    for (k, (line, f)) in t.rows.iter().enumerate() {
        if map.insert(f[0].clone(), k).is_some() {
            return Err(CliError::input("ingest", format!("{what} file line {line}: duplicate subject id '{}'", f[0]), "subject ids must be unique"));
        }
    }
    Ok(map)
}

/// Reads, validates and joins the two tables.
pub fn ingest(pheno_path: &Path, geno_path: &Path, opts: &IngestOptions) -> CliResult<Ingested> {
    let stage = "ingest";
    let pheno = read_table(pheno_path, "phenotype")?;
    let geno = read_table(geno_path, "genotype")?;
    let c1 = column(&pheno, &opts.trait1, "phenotype")?;
    let c2 = column(&pheno, &opts.trait2, "phenotype")?;
    let cc: Vec<usize> = opts.covars.iter().map(|c| column(&pheno, c, "phenotype")).collect::<CliResult<_>>()?;
    index_ids(&pheno, "phenotype")?;
    let geno_ids = index_ids(&geno, "genotype")?;

    // phenotype values, validated for every row so that errors carry line numbers
    let num = |line: u64, col: usize, s: &str| -> CliResult<Option<f64>> {
        if is_missing(s) {
            return Ok(None);
        }
        s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or_else(|| {
            CliError::input(stage, format!("phenotype file line {line}, column '{}': '{s}' is not a number", pheno.header[col]), "use NA for missing values")
        })
    };
    let mut kept: BTreeMap<String, (f64, f64, Vec<f64>, usize)> = BTreeMap::new();
    let mut dropped_missing = 0;
    let mut matched = 0;
    for (line, f) in &pheno.rows {
        let y1 = num(*line, c1, &f[c1])?;
        if opts.trait1_binary {
            if let Some(v) = y1 {
                if v != 0.0 && v != 1.0 {
                    return Err(CliError::input(
                        stage,
                        format!("phenotype file line {line}: binary trait '{}' has value '{}'", opts.trait1, f[c1]),
                        "binary traits must be coded 0, 1 or NA",
                    ));
                }
            }
        }
        let y2 = num(*line, c2, &f[c2])?;
        let cov: Vec<Option<f64>> = cc.iter().map(|&c| num(*line, c, &f[c])).collect::<CliResult<_>>()?;
        let Some(&gk) = geno_ids.get(&f[0]) else { continue };
        matched += 1;
        match (y1, y2, cov.iter().copied().collect::<Option<Vec<f64>>>()) {
            (Some(a), Some(b), Some(c)) => {
                kept.insert(f[0].clone(), (a, b, c, gk));
            }
            _ => dropped_missing += 1,
        }
    }
    let unmatched = (pheno.rows.len() - matched) + (geno.rows.len() - matched);
    let n = kept.len();
    if n < opts.min_subjects {
        return Err(CliError::input(
            stage,
            format!("{n} subjects with complete data after joining on id (need at least {})", opts.min_subjects),
            "check that both files use the same subject ids and that traits and covariates are not mostly missing",
        ));
    }

    // dosages for every genotype row are checked, joined or not
    let r_all = geno.header.len() - 1;
    let mut dosage = vec![vec![None; r_all]; geno.rows.len()];
    for (k, (line, f)) in geno.rows.iter().enumerate() {
        for j in 0..r_all {
            let s = &f[j + 1];
            if is_missing(s) {
                continue;
            }
            match s.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 || v == 2.0 => dosage[k][j] = Some(v),
                _ => {
                    return Err(CliError::input(
                        stage,
                        format!("genotype file line {line}, variant '{}': dosage '{s}' is not 0, 1 or 2", geno.header[j + 1]),
                        "dosages must be allele counts 0, 1, 2 or NA",
                    ))
                }
            }
        }
    }

    let rows: Vec<&(f64, f64, Vec<f64>, usize)> = kept.values().collect();
    let mut warnings = Vec::new();
    let mut variants = Vec::new();
    let mut maf = Vec::new();
    let mut dropped_variants = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut imputed = 0;
    for j in 0..r_all {
        let name = &geno.header[j + 1];
        let obs: Vec<f64> = rows.iter().filter_map(|r| dosage[r.3][j]).collect();
        if obs.is_empty() {
            warnings.push(format!("variant '{name}' has no observed dosage and was dropped"));
            dropped_variants.push(name.clone());
            continue;
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let p = mean / 2.0;
        let minor = p.min(1.0 - p);
        if minor <= 0.0 {
            warnings.push(format!("variant '{name}' is monomorphic (MAF = 0) and was dropped"));
            dropped_variants.push(name.clone());
            continue;
        }
        imputed += rows.len() - obs.len();
        columns.push(rows.iter().map(|r| dosage[r.3][j].unwrap_or(mean)).collect());
        variants.push(name.clone());
        maf.push(minor);
    }
    if variants.is_empty() {
        return Err(CliError::input(stage, "no polymorphic variant left in the region", "check the genotype file"));
    }
    if dropped_missing > 0 {
        warnings.push(format!("{dropped_missing} subjects dropped for missing trait or covariate values"));
    }
    let g = DMatrix::from_fn(n, variants.len(), |i, j| columns[j][i]);
    let x = if cc.is_empty() {
        DesignMatrix::intercept_only(n)
    } else {
        let cols: Vec<Vec<f64>> = (0..cc.len()).map(|k| rows.iter().map(|r| r.2[k]).collect()).collect();
        DesignMatrix::with_intercept(&cols, &opts.covars)
    }
    .map_err(|e| CliError::input(stage, e.to_string(), "drop constant or collinear covariates"))?;
    Ok(Ingested {
        ids: kept.keys().cloned().collect(),
        y1: rows.iter().map(|r| r.0).collect(),
        y2: rows.iter().map(|r| r.1).collect(),
        x,
        g,
        variants,
        maf,
        dropped_missing,
        unmatched,
        dropped_variants,
        imputed,
        warnings,
    })
}
