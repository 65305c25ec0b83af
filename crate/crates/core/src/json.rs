//! JSON number formatting for reports.
//!
//! Reals are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly. Non-finite values become `null`.
//! Use these as `#[serde(serialize_with = "...")]` targets; they only work
//! with `serde_json` serializers.

use nalgebra::{DMatrix, DVector};
use serde::ser::{Error as _, SerializeSeq};
use serde::Serializer;
use serde_json::value::RawValue;

/// Formats one real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn raw(x: f64) -> std::result::Result<Box<RawValue>, serde_json::Error> {
    RawValue::from_string(format_real(x))
}

pub fn real<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    let r = raw(*x).map_err(S::Error::custom)?;
    s.serialize_some(&r)
}

pub fn reals<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for &x in xs {
        seq.serialize_element(&raw(x).map_err(S::Error::custom)?)?;
    }
    seq.end()
}

pub fn vector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    reals(v.as_slice(), s)
}

/// Row-major array of arrays.
pub fn matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Box<RawValue>>> = m
        .row_iter()
        .map(|r| r.iter().map(|&x| raw(x)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()
        .map_err(S::Error::custom)?;
    s.serialize_some(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Probe {
        #[serde(serialize_with = "real")]
        x: f64,
        #[serde(serialize_with = "matrix")]
        m: DMatrix<f64>,
    }

    #[test]
    fn reals_round_trip_exactly() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = format_real(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_real(0.5), "5.0000000000000000e-1");
        assert_eq!(format_real(f64::NAN), "null");
    }

    #[test]
    fn matrices_serialize_row_major() {
        let p = Probe {
            x: 2.0,
            m: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            r#"{"x":2.0000000000000000e0,"m":[[1.0000000000000000e0,2.0000000000000000e0],[3.0000000000000000e0,4.0000000000000000e0]]}"#
        );
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["m"][1][0].as_f64(), Some(3.0));
    }
}
