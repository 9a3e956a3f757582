use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// 17 significant digits; parses back to the same bits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct InputTable {
    pub ids: Vec<String>,
    pub pvalues: Vec<f64>,
    pub covariates: Vec<f64>,
}

const MAX_LISTED: usize = 20;

/// Reads `pvalue`, `covariate` and optionally `id` columns. Every bad row is
/// collected before failing so the message lists them together.
pub fn read_input(path: &Path) -> Result<InputTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = rdr.headers().context("cannot read header")?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing: Vec<&str> = ["pvalue", "covariate"].into_iter().filter(|c| find(c).is_none()).collect();
    if !missing.is_empty() {
        bail!(
            "missing required column(s) {} in {} (found: {})",
            missing.join(", "),
            path.display(),
            headers.iter().collect::<Vec<_>>().join(", ")
        );
    }
    let (pc, cc, ic) = (find("pvalue").unwrap(), find("covariate").unwrap(), find("id"));

    let mut t = InputTable { ids: Vec::new(), pvalues: Vec::new(), covariates: Vec::new() };
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.with_context(|| format!("malformed CSV at row {row}"))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let p = field(pc).parse::<f64>();
        let x = field(cc).parse::<f64>();
        match &p {
            Ok(v) if (0.0..=1.0).contains(v) => {}
            _ => bad.push(format!("row {row}: pvalue '{}' is not in [0, 1]", field(pc))),
        }
        match &x {
            Ok(v) if v.is_finite() => {}
            _ => bad.push(format!("row {row}: covariate '{}' is not a finite number", field(cc))),
        }
        t.ids.push(match ic {
            Some(c) if !field(c).is_empty() => field(c).to_string(),
            _ => row.to_string(),
        });
        t.pvalues.push(p.unwrap_or(f64::NAN));
        t.covariates.push(x.unwrap_or(f64::NAN));
    }
    if !bad.is_empty() {
        let mut msg = format!("{} invalid row(s) in {}:", bad.len(), path.display());
        for b in bad.iter().take(MAX_LISTED) {
            msg.push_str("\n  ");
            msg.push_str(b);
        }
        if bad.len() > MAX_LISTED {
            msg.push_str(&format!("\n  ... and {} more", bad.len() - MAX_LISTED));
        }
        bail!(msg);
    }
    if t.pvalues.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    Ok(t)
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}
