//! Run directories: JSON record, CSV tables, VTK fields and a hashed manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::{Cell, FieldDump, RunRecord, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// C's `%.17g`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mant), sign, exp.abs())
    }
}

fn sha256_hex(data: &[u8]) -> String {
    let d = Sha256::digest(data);
    let mut s = String::with_capacity(64);
    for b in d {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn table_csv(t: &Table) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(&t.header).map_err(io)?;
    for row in &t.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Num(v) => fmt_g17(*v),
                Cell::Text(s) => s.clone(),
            })
            .collect();
        w.write_record(&cells).map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Legacy VTK, ASCII structured points.
pub fn field_vtk(f: &FieldDump) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", f.name);
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", f.dims[0], f.dims[1], f.dims[2]);
    let _ = writeln!(
        s,
        "ORIGIN {} {} {}",
        fmt_g17(f.origin[0]),
        fmt_g17(f.origin[1]),
        fmt_g17(f.origin[2])
    );
    let _ = writeln!(
        s,
        "SPACING {} {} {}",
        fmt_g17(f.spacing[0]),
        fmt_g17(f.spacing[1]),
        fmt_g17(f.spacing[2])
    );
    let _ = writeln!(s, "POINT_DATA {}", f.values.len());
    let _ = writeln!(s, "SCALARS {} double 1", f.name);
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for chunk in f.values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|v| fmt_g17(*v)).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

/// Writes the run directory and returns its manifest.
pub fn write_results(rec: &RunRecord, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut json = serde_json::to_string_pretty(rec)?;
    json.push('\n');
    files.push(("record.json".into(), json.into_bytes()));
    files.push(("config.toml".into(), rec.config_text.clone().into_bytes()));
    for t in &rec.tables {
        files.push((format!("tables/{}.csv", t.name), table_csv(t)?));
    }
    for f in &rec.fields {
        files.push((format!("fields/{}.vtk", f.name), field_vtk(f).into_bytes()));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut entries = Vec::new();
    for (rel, data) in &files {
        let path: PathBuf = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, data)?;
        entries.push(ManifestEntry {
            path: rel.clone(),
            bytes: data.len() as u64,
            sha256: sha256_hex(data),
        });
    }
    let manifest = Manifest { files: entries };
    let mut m = serde_json::to_string_pretty(&manifest)?;
    m.push('\n');
    fs::write(dir.join(MANIFEST), m)?;
    Ok(manifest)
}

/// Files whose content no longer matches the manifest.
pub fn verify_manifest(dir: &Path) -> Result<(Manifest, Vec<String>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut bad = Vec::new();
    for e in &manifest.files {
        match fs::read(dir.join(&e.path)) {
            Ok(data) if sha256_hex(&data) == e.sha256 => {}
            _ => bad.push(e.path.clone()),
        }
    }
    Ok((manifest, bad))
}

/// Human-readable summary of a run directory; `Ok(true)` when every
/// assertion passed and every file matches the manifest.
pub fn report(dir: &Path) -> Result<(String, bool)> {
    let (manifest, bad) = verify_manifest(dir)?;
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("record.json"))?)?;
    let mut s = String::new();
    let _ = writeln!(s, "run: {}", dir.display());
    let _ = writeln!(s, "kind: {}", rec["kind"].as_str().unwrap_or("?"));
    let _ = writeln!(s, "files: {} ({} modified)", manifest.files.len(), bad.len());
    for b in &bad {
        let _ = writeln!(s, "  modified: {b}");
    }
    if let Some(stages) = rec["stages"].as_array() {
        for st in stages {
            match st["seconds"].as_f64() {
                Some(t) => {
                    let _ = writeln!(s, "stage {:<24} {t:>9.2} s", st["stage"].as_str().unwrap_or("?"));
                }
                None => {
                    let _ = writeln!(s, "stage {:<24}         -", st["stage"].as_str().unwrap_or("?"));
                }
            }
        }
    }
    let mut all = true;
    if let Some(list) = rec["assertions"].as_array() {
        for a in list {
            let ok = a["passed"].as_bool().unwrap_or(false);
            all &= ok;
            let _ = writeln!(
                s,
                "[{}] {:<28} {} {} {}",
                if ok { "PASS" } else { "FAIL" },
                a["name"].as_str().unwrap_or("?"),
                a["value"]
                    .as_f64()
                    .map(|v| format!("{v:.6e}"))
                    .unwrap_or_else(|| "nan".into()),
                a["relation"].as_str().unwrap_or("?"),
                a["threshold"].as_f64().map(|v| format!("{v:.3e}")).unwrap_or_default(),
            );
        }
    }
    for f in manifest.files.iter().filter(|f| f.path.starts_with("tables/")) {
        let text = fs::read_to_string(dir.join(&f.path))?;
        let _ = writeln!(s, "\n{}:", f.path);
        for line in text.lines() {
            let _ = writeln!(s, "  {}", line.replace(',', "  "));
        }
    }
    Ok((s, all && bad.is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(123456.0), "123456");
        assert_eq!(fmt_g17(0.0001), "0.0001");
        assert_eq!(fmt_g17(0.0), "0");
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-9, 6.02e23, -7.5e-300] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }
}
