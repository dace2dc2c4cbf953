//! File writers. Every real is printed with 17 significant digits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ksel::kernels::{KernelFamily, KernelSpec, Kernels};
use ksel::penalty::UsedPenalties;
use serde::Serialize;
use serde_json::value::RawValue;

pub const SCHEMA_VERSION: u32 = 1;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON number with 17 significant digits; `null` when not finite.
pub fn num(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() { fmt(x) } else { "null".to_string() };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

pub fn penalties(u: &UsedPenalties) -> BTreeMap<String, Box<RawValue>> {
    u.0.iter().map(|(p, v)| (p.name().to_string(), num(*v))).collect()
}

#[derive(Serialize)]
pub struct KernelJson {
    pub family: &'static str,
    pub lengthscales: Vec<Box<RawValue>>,
}

pub fn kernel_json(k: &KernelSpec) -> KernelJson {
    KernelJson {
        family: match k.family() {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Indicator => "indicator",
        },
        lengthscales: k.lengthscales().iter().map(|v| num(*v)).collect(),
    }
}

pub fn kernels_json(k: &Kernels) -> BTreeMap<&'static str, KernelJson> {
    let mut out = BTreeMap::new();
    out.insert("s", kernel_json(&k.s));
    out.insert("d", kernel_json(&k.d));
    out.insert("x", kernel_json(&k.x));
    if let Some(m) = &k.m {
        out.insert("m", kernel_json(m));
    }
    if let Some(v) = &k.v {
        out.insert("v", kernel_json(v));
    }
    out
}

pub fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(w)?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

/// CSV with a header and one row per record; `None` cells are left empty.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<Option<String>>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}
