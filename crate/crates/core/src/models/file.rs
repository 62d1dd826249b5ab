//! TOML model files.
//!
//! ```toml
//! [model]
//! family = "tim"        # tim | xy | general
//! n = 3
//! boundary = "open"     # open | periodic
//! xi = 1.0
//!
//! [fields]
//! gamma = [1.0, 1.0, 1.0]   # a scalar is broadcast to every site
//! kz = [0.0, 0.1, 0.0]
//!
//! [couplings]               # tim only, 1-based sites
//! kzz = [[1, 2, -0.5], [2, 3, 0.25]]
//!
//! [bonds]                   # xy only, one value per bond
//! kxx = [0.5, 0.5]
//! kyy = [0.0, 0.0]
//! kzz = [0.1, 0.1]
//!
//! [general]                 # general only
//! terms = [[...16 row-major entries...], ...]
//! fictitious_field = 0.0
//! ```

use std::path::Path;

use toml::{Table, Value};

use super::{Boundary, GeneralChainModel, Model, TransverseIsingModel, XYChainModel};
use crate::error::{Error, Result};
use crate::linalg::Block4;

pub fn read_model_file(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read model file {}: {e}", path.display())))?;
    parse_model(&text)
}

/// Parses and structurally checks a model document. Physical invariants are
/// left to [`Model::validate`].
pub fn parse_model(text: &str) -> Result<Model> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.message().to_string()))?;
    let header =
        section(&doc, "model")?.ok_or_else(|| Error::Parse("missing [model] section".into()))?;
    let family = get_str(header, "model.family")?;
    let n = get_usize(header, "n", "model.n")?;
    if n == 0 {
        return Err(Error::InvalidModel("n must be at least 1".into()));
    }
    let boundary = match header.get("boundary") {
        None => Boundary::Open,
        Some(Value::String(s)) if s == "open" => Boundary::Open,
        Some(Value::String(s)) if s == "periodic" => Boundary::Periodic,
        Some(other) => {
            return Err(Error::Parse(format!(
                "model.boundary: expected \"open\" or \"periodic\", got {other}"
            )))
        }
    };
    let fields = section(&doc, "fields")?;
    let site_array = |key: &str, default: Option<f64>| -> Result<Vec<f64>> {
        match fields.and_then(|f| f.get(key)) {
            Some(v) => numbers(v, n, &format!("fields.{key}")),
            None => default
                .map(|d| vec![d; n])
                .ok_or_else(|| Error::Parse(format!("missing fields.{key}"))),
        }
    };

    match family.as_str() {
        "tim" => {
            let xi = match header.get("xi") {
                Some(v) => number(v, "model.xi")?,
                None => 1.0,
            };
            let gamma = site_array("gamma", None)?;
            let kz = site_array("kz", Some(0.0))?;
            let mut couplings = Vec::new();
            if let Some(c) = section(&doc, "couplings")? {
                if let Some(list) = c.get("kzz") {
                    let list = list.as_array().ok_or_else(|| {
                        Error::Parse("couplings.kzz must be an array of [j, k, value]".into())
                    })?;
                    for (idx, entry) in list.iter().enumerate() {
                        let what = format!("couplings.kzz[{idx}]");
                        let triple =
                            entry.as_array().filter(|a| a.len() == 3).ok_or_else(|| {
                                Error::Parse(format!("{what}: expected [j, k, value]"))
                            })?;
                        let j = one_based(&triple[0], n, &what)?;
                        let k = one_based(&triple[1], n, &what)?;
                        couplings.push((j, k, number(&triple[2], &what)?));
                    }
                }
            }
            Ok(Model::TransverseIsing(TransverseIsingModel::new(
                gamma, kz, couplings, xi, boundary,
            )?))
        }
        "xy" => {
            let bonds_n = boundary.bond_count(n);
            let bonds = section(&doc, "bonds")?;
            let bond_array = |key: &str| -> Result<Vec<f64>> {
                match bonds.and_then(|b| b.get(key)) {
                    Some(v) => numbers(v, bonds_n, &format!("bonds.{key}")),
                    None => Ok(vec![0.0; bonds_n]),
                }
            };
            Ok(Model::XYChain(XYChainModel {
                gamma: site_array("gamma", None)?,
                kz: site_array("kz", Some(0.0))?,
                kxx: bond_array("kxx")?,
                kyy: bond_array("kyy")?,
                kzz: bond_array("kzz")?,
                boundary,
            }))
        }
        "general" => {
            let g = section(&doc, "general")?
                .ok_or_else(|| Error::Parse("missing [general] section".into()))?;
            let terms = g.get("terms").and_then(Value::as_array).ok_or_else(|| {
                Error::Parse("general.terms must be an array of 16-entry arrays".into())
            })?;
            let mut blocks = Vec::with_capacity(terms.len());
            for (b, t) in terms.iter().enumerate() {
                let flat = numbers(t, 16, &format!("general.terms[{b}]"))?;
                let mut block: Block4 = [[0.0; 4]; 4];
                for (i, v) in flat.into_iter().enumerate() {
                    block[i / 4][i % 4] = v;
                }
                blocks.push(block);
            }
            let fictitious_field = match g.get("fictitious_field") {
                Some(v) => number(v, "general.fictitious_field")?,
                None => 0.0,
            };
            Ok(Model::General(GeneralChainModel {
                n,
                terms: blocks,
                boundary,
                fictitious_field,
            }))
        }
        other => Err(Error::Parse(format!(
            "model.family: unknown family {other:?} (expected tim, xy or general)"
        ))),
    }
}

/// Serializes a model to the file format read by [`parse_model`].
pub fn model_to_toml(model: &Model) -> String {
    let mut doc = Table::new();
    let mut header = Table::new();
    header.insert("family".into(), model.family().into());
    header.insert("n".into(), Value::Integer(model.n() as i64));
    let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
    let boundary = |b: Boundary| match b {
        Boundary::Open => "open",
        Boundary::Periodic => "periodic",
    };
    match model {
        Model::TransverseIsing(m) => {
            header.insert("boundary".into(), boundary(m.boundary).into());
            header.insert("xi".into(), Value::Float(m.xi));
            let mut fields = Table::new();
            fields.insert("gamma".into(), floats(&m.gamma));
            fields.insert("kz".into(), floats(&m.kz));
            doc.insert("fields".into(), Value::Table(fields));
            let list = m
                .kzz
                .iter()
                .map(|(&(j, k), &v)| {
                    Value::Array(vec![
                        Value::Integer(j as i64 + 1),
                        Value::Integer(k as i64 + 1),
                        Value::Float(v),
                    ])
                })
                .collect();
            let mut c = Table::new();
            c.insert("kzz".into(), Value::Array(list));
            doc.insert("couplings".into(), Value::Table(c));
        }
        Model::XYChain(m) => {
            header.insert("boundary".into(), boundary(m.boundary).into());
            let mut fields = Table::new();
            fields.insert("gamma".into(), floats(&m.gamma));
            fields.insert("kz".into(), floats(&m.kz));
            doc.insert("fields".into(), Value::Table(fields));
            let mut bonds = Table::new();
            bonds.insert("kxx".into(), floats(&m.kxx));
            bonds.insert("kyy".into(), floats(&m.kyy));
            bonds.insert("kzz".into(), floats(&m.kzz));
            doc.insert("bonds".into(), Value::Table(bonds));
        }
        Model::General(m) => {
            header.insert("boundary".into(), boundary(m.boundary).into());
            let mut g = Table::new();
            let terms = m
                .terms
                .iter()
                .map(|b| floats(&b.iter().flatten().copied().collect::<Vec<_>>()))
                .collect();
            g.insert("terms".into(), Value::Array(terms));
            g.insert("fictitious_field".into(), Value::Float(m.fictitious_field));
            doc.insert("general".into(), Value::Table(g));
        }
    }
    doc.insert("model".into(), Value::Table(header));
    toml::to_string(&doc).expect("model tables always serialize")
}

fn section<'a>(doc: &'a Table, name: &str) -> Result<Option<&'a Table>> {
    match doc.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::Parse(format!("[{name}] must be a table"))),
    }
}

fn get_str(t: &Table, what: &str) -> Result<String> {
    let key = what.rsplit('.').next().unwrap_or(what);
    t.get(key)
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| Error::Parse(format!("missing or non-string {what}")))
}

fn get_usize(t: &Table, key: &str, what: &str) -> Result<usize> {
    match t.get(key) {
        Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Parse(format!(
            "{what} must be a nonnegative integer"
        ))),
    }
}

fn number(v: &Value, what: &str) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Parse(format!("{what}: expected a number, got {v}"))),
    }
}

fn numbers(v: &Value, len: usize, what: &str) -> Result<Vec<f64>> {
    match v {
        Value::Array(a) => {
            if a.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: format!("{len} entries in {what}"),
                    got: a.len().to_string(),
                });
            }
            a.iter().map(|x| number(x, what)).collect()
        }
        scalar => Ok(vec![number(scalar, what)?; len]),
    }
}

fn one_based(v: &Value, n: usize, what: &str) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 1 && (*i as usize) <= n => Ok(*i as usize - 1),
        _ => Err(Error::Parse(format!(
            "{what}: site index {v} is not in 1..={n}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tim_with_one_based_couplings() {
        let m = parse_model(
            r#"
            [model]
            family = "tim"
            n = 3
            [fields]
            gamma = 1
            kz = [0.0, 0.5, 0.0]
            [couplings]
            kzz = [[1, 2, -0.5], [3, 2, 0.25]]
            "#,
        )
        .unwrap();
        let Model::TransverseIsing(t) = &m else {
            panic!()
        };
        assert_eq!(t.gamma, vec![1.0; 3]);
        assert_eq!(t.coupling(0, 1), -0.5);
        assert_eq!(t.coupling(1, 2), 0.25);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn rejects_zero_site_index() {
        let err = parse_model(
            "[model]\nfamily=\"tim\"\nn=2\n[fields]\ngamma=1\n[couplings]\nkzz=[[0,1,0.1]]\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn toml_roundtrip_all_families() {
        let tim = Model::TransverseIsing(
            TransverseIsingModel::new(
                vec![0.7, 1.3],
                vec![0.1, -0.2],
                [(0, 1, 0.3)],
                1.5,
                Boundary::Periodic,
            )
            .unwrap(),
        );
        let xy = Model::XYChain(XYChainModel {
            gamma: vec![1.0, 0.5, 0.25],
            kz: vec![0.0, 0.1, 0.2],
            kxx: vec![0.5, 0.25],
            kyy: vec![-0.5, 0.1],
            kzz: vec![0.3, -0.3],
            boundary: Boundary::Open,
        });
        let mut block = [[0.0; 4]; 4];
        block[0][3] = -1.0;
        block[3][0] = -1.0;
        block[1][1] = 0.125;
        let general = Model::General(GeneralChainModel {
            n: 2,
            terms: vec![block],
            boundary: Boundary::Open,
            fictitious_field: 0.01,
        });
        for m in [tim, xy, general] {
            assert_eq!(parse_model(&model_to_toml(&m)).unwrap(), m);
        }
    }
}
