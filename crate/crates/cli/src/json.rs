//! Deterministic JSON output: sorted keys, 17 significant digits.

use std::io;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

/// Compact formatter writing floats in `{:.16e}` form.
struct Sig17;

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_string(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17);
    value
        .serialize(&mut ser)
        .expect("serializing a Value cannot fail");
    String::from_utf8(out).expect("JSON output is UTF-8")
}

/// A float; non-finite values become `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn vector(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

pub fn dvector(v: &DVector<f64>) -> Value {
    vector(v.as_slice())
}

/// Row-major nested arrays.
pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect()))
            .collect(),
    )
}

pub fn matrices(ms: &[DMatrix<f64>]) -> Value {
    Value::Array(ms.iter().map(matrix).collect())
}

/// An object tagged with the equation its numbers come from.
pub fn tagged(eq: &str, fields: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    map.insert("eq".into(), Value::String(eq.into()));
    for (k, v) in fields {
        map.insert(k.into(), v);
    }
    Value::Object(map)
}

pub fn object(fields: Vec<(&str, Value)>) -> Value {
    Value::Object(
        fields
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    )
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    max_abs(a.iter().zip(b).map(|(x, y)| x - y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits_and_keys_sort() {
        let v = object(vec![
            ("b", num(0.1)),
            ("a", num(-2.0)),
            ("c", num(f64::NAN)),
        ]);
        assert_eq!(
            to_string(&v),
            r#"{"a":-2.0000000000000000e0,"b":1.0000000000000001e-1,"c":null}"#
        );
    }

    #[test]
    fn matrices_are_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matrix(&m)[0][1], num(2.0));
        assert_eq!(matrix(&m)[1][0], num(3.0));
    }

    #[test]
    fn output_parses_back() {
        let v = tagged("x", vec![("m", vector(&[1e-300, 12345.678]))]);
        let back: Value = serde_json::from_str(&to_string(&v)).unwrap();
        assert_eq!(back, v);
    }
}
