//! Report rows and their CSV / JSON encodings.
//!
//! Every float is written with 17 significant digits so files are
//! byte-stable and parse back to the same `f64`. Non-finite values are
//! written as `inf`, `-inf` and `NaN` (quoted strings in JSON).

use std::io::{self, Write};

use anyhow::Result;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// `f64` that serialises non-finite values as strings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&fmt_num(self.0))
        }
    }
}

fn write_json_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&fmt_num(n.as_f64().expect("f64 number")));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_json_value(out, item, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_json_value(out, item, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with fixed-precision floats and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = String::new();
    write_json_value(&mut s, &v, 0);
    s.push('\n');
    Ok(s)
}

/// A row type with a fixed CSV header.
pub trait CsvRow: Sized {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

pub fn write_csv<W: Write, R: CsvRow>(w: W, rows: &[R]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(R::HEADER)?;
    for r in rows {
        wtr.write_record(r.fields())?;
    }
    wtr.flush()
}

pub fn to_csv<R: CsvRow>(rows: &[R]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf)?)
}

/// Parse rows written by [`write_csv`]; `#` lines are skipped.
pub fn parse_csv<R: CsvRow + for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == R::HEADER, "unexpected CSV header {header:?}");
    Ok(rdr.deserialize().collect::<Result<Vec<R>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCurveRow {
    pub q: f64,
    pub bias_closed_form: Option<f64>,
    pub bias_quadrature: Option<f64>,
    pub bias_mc: Option<f64>,
    pub mc_stderr: Option<f64>,
}

impl CsvRow for BiasCurveRow {
    const HEADER: &'static [&'static str] = &["q", "bias_closed_form", "bias_quadrature", "bias_mc", "mc_stderr"];
    fn fields(&self) -> Vec<String> {
        vec![
            fmt_num(self.q),
            fmt_opt(self.bias_closed_form),
            fmt_opt(self.bias_quadrature),
            fmt_opt(self.bias_mc),
            fmt_opt(self.mc_stderr),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub q: f64,
    pub bias_bit: f64,
    pub bias_restricted_same_eps: f64,
    pub ratio: f64,
}

impl CsvRow for CompareRow {
    const HEADER: &'static [&'static str] = &["q", "bias_bit", "bias_restricted_same_eps", "ratio"];
    fn fields(&self) -> Vec<String> {
        vec![
            fmt_num(self.q),
            fmt_num(self.bias_bit),
            fmt_num(self.bias_restricted_same_eps),
            fmt_num(self.ratio),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McValidateRow {
    pub q: f64,
    pub bias_closed_form: f64,
    pub bias_mc: f64,
    pub mc_stderr: f64,
    pub z_score: f64,
    /// Semicolon-separated mechanism warnings, empty when none.
    pub warning: String,
}

impl CsvRow for McValidateRow {
    const HEADER: &'static [&'static str] = &["q", "bias_closed_form", "bias_mc", "mc_stderr", "z_score", "warning"];
    fn fields(&self) -> Vec<String> {
        vec![
            fmt_num(self.q),
            fmt_num(self.bias_closed_form),
            fmt_num(self.bias_mc),
            fmt_num(self.mc_stderr),
            fmt_num(self.z_score),
            self.warning.clone(),
        ]
    }
}
