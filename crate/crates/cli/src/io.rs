//! CSV schemas and number formatting.

use std::io::{Read, Write};

use macrobell::montecarlo::PulseRecord;
use serde_json::Value;

use crate::CliError;

pub const RECORD_HEADER: [&str; 5] = ["setting_id", "a_t", "a_r", "b_t", "b_r"];
pub const SWEEP_HEADER: [&str; 4] = ["angle_deg", "value", "std_err", "pulses"];

/// Twelve significant digits, fixed notation for moderate exponents.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

/// Rounds every float in a JSON tree to twelve significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r: f64 = fmt_num(x).parse().unwrap_or(x);
            serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let v = round_json(serde_json::to_value(value).expect("serializable"));
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), CliError> {
    for (k, &want) in expected.iter().enumerate() {
        match found.get(k) {
            Some(got) if got.trim() == want => {}
            Some(got) => {
                return Err(CliError::Schema {
                    column: want.into(),
                    reason: format!("header column {} is `{got}`", k + 1),
                })
            }
            None => {
                return Err(CliError::Schema {
                    column: want.into(),
                    reason: "missing from header".into(),
                })
            }
        }
    }
    if found.len() > expected.len() {
        return Err(CliError::Schema {
            column: found[expected.len()].to_string(),
            reason: "unexpected extra column".into(),
        });
    }
    Ok(())
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, k: usize, name: &str, line: u64) -> Result<T, CliError> {
    let raw = row.get(k).ok_or_else(|| CliError::Schema {
        column: name.into(),
        reason: format!("line {line}: missing value"),
    })?;
    raw.parse().map_err(|_| CliError::Schema {
        column: name.into(),
        reason: format!("line {line}: cannot parse `{raw}`"),
    })
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Validation(format!("csv: {e}"))
}

pub fn write_records<W: Write>(w: W, records: &[PulseRecord]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER).map_err(csv_err)?;
    for r in records {
        let c = r.counts.map(|x| x.to_string());
        out.write_record([r.setting_id.as_str(), &c[0], &c[1], &c[2], &c[3]]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| CliError::Validation(e.to_string()))
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<PulseRecord>, CliError> {
    let mut rdr = reader(r);
    check_header(&rdr.headers().map_err(csv_err)?.clone(), &RECORD_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let setting_id: String = field(&row, 0, RECORD_HEADER[0], line)?;
        let mut counts = [0u64; 4];
        for k in 0..4 {
            counts[k] = field(&row, k + 1, RECORD_HEADER[k + 1], line)?;
        }
        out.push(PulseRecord { setting_id, counts });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub angle_deg: f64,
    pub value: f64,
    pub std_err: f64,
    pub pulses: usize,
}

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([fmt_num(r.angle_deg), fmt_num(r.value), fmt_num(r.std_err), r.pulses.to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| CliError::Validation(e.to_string()))
}

pub fn read_sweep<R: Read>(r: R) -> Result<Vec<SweepRow>, CliError> {
    let mut rdr = reader(r);
    check_header(&rdr.headers().map_err(csv_err)?.clone(), &SWEEP_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        out.push(SweepRow {
            angle_deg: field(&row, 0, SWEEP_HEADER[0], line)?,
            value: field(&row, 1, SWEEP_HEADER[1], line)?,
            std_err: field(&row, 2, SWEEP_HEADER[2], line)?,
            pulses: field(&row, 3, SWEEP_HEADER[3], line)?,
        });
    }
    Ok(out)
}
