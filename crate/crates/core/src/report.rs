//! JSON number handling for reports.
//!
//! Floating-point fields are written as decimal strings with 17 significant
//! digits, which round-trip every `f64` exactly; `inf`, `-inf` and `nan` are
//! spelled out. Use with `#[serde(with = "crate::report::sig17")]`.

pub const SCHEMA_VERSION: u32 = 1;

/// `x` with 17 significant digits.
pub fn format_sig17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_sig17(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub mod sig17 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_sig17(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_sig17(&s).ok_or_else(|| D::Error::custom(format!("not a number: {s:?}")))
    }
}

pub mod sig17_vec {
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&super::format_sig17(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| {
                super::parse_sig17(s)
                    .ok_or_else(|| D::Error::custom(format!("not a number: {s:?}")))
            })
            .collect()
    }
}
