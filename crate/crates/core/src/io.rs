//! Deterministic file emission: `%.17g` numeric formatting, long-format CSV
//! for phase-space tensors, JSON reports, and atomic writes.
//!
//! Identical inputs produce byte-identical files: numeric formatting is
//! locale-free, map keys are sorted, and rows are emitted in a fixed order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::wigner::WignerField;

/// Formats like C's `printf("%.17g", x)`: 17 significant digits, fixed or
/// scientific depending on the decimal exponent, trailing zeros trimmed.
/// 17 significant digits round-trip every f64.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // parse the mantissa and exponent out of Rust's scientific rendering,
    // letting it do the rounding to 17 significant digits
    let sci = format!("{:.16e}", x);
    let (mantissa, exp_str) = sci.split_once('e').unwrap();
    let exp: i32 = exp_str.parse().unwrap();
    if exp < -4 || exp >= 17 {
        let trimmed = trim_trailing_zeros(mantissa);
        format!("{}e{}{:02}", trimmed, if exp < 0 { "-" } else { "+" }, exp.abs())
    } else {
        // fixed notation with 16 - exp fractional digits
        let prec = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", prec, x);
        trim_trailing_zeros(&fixed).to_string()
    }
}

fn trim_trailing_zeros(s: &str) -> &str {
    if !s.contains('.') {
        return s;
    }
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s)
}

/// Writes bytes through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes a value as pretty JSON (LF line endings) and writes atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialization cannot fail");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Long-format CSV of a Wigner field: `j0,p,A,B,kj,kp,re,im`, one row per
/// tensor cell, `%.17g` numbers, UTF-8, LF. A `# {json}` comment line
/// embedding the run metadata precedes the header.
pub fn wigner_csv_bytes<T: Serialize>(w: &WignerField, meta: &T) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!(
        "# {}\n",
        serde_json::to_string(meta).expect("serialization cannot fail")
    ));
    out.push_str("j0,p,A,B,kj,kp,re,im\n");
    let tags = ["L", "R"];
    for p in 0..w.n_sites() {
        for a in 0..2 {
            for b in 0..2 {
                for mj in 0..w.kj_grid().len() {
                    for mp in 0..w.kp_grid().len() {
                        let v = w.value(p, a, b, mj, mp);
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{},{}\n",
                            w.base_time(),
                            p,
                            tags[a],
                            tags[b],
                            fmt_g17(w.kj_grid().k(mj)),
                            fmt_g17(w.kp_grid().k(mp)),
                            fmt_g17(v.re),
                            fmt_g17(v.im)
                        ));
                    }
                }
            }
        }
    }
    out.into_bytes()
}

pub fn write_wigner_csv<T: Serialize>(path: &Path, w: &WignerField, meta: &T) -> Result<()> {
    write_atomic(path, &wigner_csv_bytes(w, meta))
}

/// Long-format CSV of a correlation tensor: `j0,p,A,B,nj,np,re,im`.
pub fn omega_csv_bytes<T: Serialize>(om: &crate::wigner::OmegaTensor, meta: &T) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!(
        "# {}\n",
        serde_json::to_string(meta).expect("serialization cannot fail")
    ));
    out.push_str("j0,p,A,B,nj,np,re,im\n");
    let tags = ["L", "R"];
    let m = om.m_t() as isize;
    for p in 0..om.n_sites() {
        for a in 0..2 {
            for b in 0..2 {
                for nj in -m..=m {
                    for np in 0..om.n_sites() {
                        let v = om.value(p, a, b, nj, np);
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{},{}\n",
                            om.base_time(),
                            p,
                            tags[a],
                            tags[b],
                            nj,
                            np,
                            fmt_g17(v.re),
                            fmt_g17(v.im)
                        ));
                    }
                }
            }
        }
    }
    out.into_bytes()
}

pub fn write_omega_csv<T: Serialize>(
    path: &Path,
    om: &crate::wigner::OmegaTensor,
    meta: &T,
) -> Result<()> {
    write_atomic(path, &omega_csv_bytes(om, meta))
}

/// Generic small CSV: header plus rows of `%.17g`-formatted columns, with a
/// `# {json}` metadata comment line.
pub fn table_csv_bytes<T: Serialize>(
    header: &str,
    rows: &[Vec<CsvCell>],
    meta: &T,
) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!(
        "# {}\n",
        serde_json::to_string(meta).expect("serialization cannot fail")
    ));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cols: Vec<String> = row
            .iter()
            .map(|c| match c {
                CsvCell::Num(x) => fmt_g17(*x),
                CsvCell::Text(s) => s.clone(),
                CsvCell::Int(i) => i.to_string(),
            })
            .collect();
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// One CSV column value.
#[derive(Debug, Clone)]
pub enum CsvCell {
    Num(f64),
    Int(i64),
    Text(String),
}
