//! Serde adapters for extended reals: finite values as JSON numbers,
//! infinities as the strings `"-inf"` and `"inf"`.

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtF64(pub f64);

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else if v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom("NaN cannot be serialized"))
        }
    }
}

struct ExtVisitor;

impl<'de> Visitor<'de> for ExtVisitor {
    type Value = ExtF64;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a number, \"-inf\" or \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtF64, E> {
        Ok(ExtF64(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtF64, E> {
        Ok(ExtF64(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtF64, E> {
        Ok(ExtF64(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtF64, E> {
        match v.trim() {
            "-inf" | "-Infinity" => Ok(ExtF64(f64::NEG_INFINITY)),
            "inf" | "+inf" | "Infinity" => Ok(ExtF64(f64::INFINITY)),
            other => other.parse().map(ExtF64).map_err(|_| E::custom(format!("bad number {other:?}"))),
        }
    }
}

impl<'de> Deserialize<'de> for ExtF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(ExtVisitor)
    }
}

pub mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        ExtF64(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        ExtF64::deserialize(d).map(|e| e.0)
    }
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| ExtF64(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<ExtF64>::deserialize(d).map(|v| v.into_iter().map(|e| e.0).collect())
    }
}

pub mod vec_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|row| row.iter().map(|&x| ExtF64(x)).collect::<Vec<_>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<ExtF64>>::deserialize(d).map(|v| v.into_iter().map(|r| r.into_iter().map(|e| e.0).collect()).collect())
    }
}

pub mod opt_vec_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(m) => s.serialize_some(&m.iter().map(|r| r.iter().map(|&x| ExtF64(x)).collect::<Vec<_>>()).collect::<Vec<_>>()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        Option::<Vec<Vec<ExtF64>>>::deserialize(d)
            .map(|o| o.map(|v| v.into_iter().map(|r| r.into_iter().map(|e| e.0).collect()).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Row {
        #[serde(with = "vec")]
        v: Vec<f64>,
    }

    #[test]
    fn roundtrip_with_infinity() {
        let r = Row { v: vec![1.5, f64::NEG_INFINITY, 0.0] };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"v":[1.5,"-inf",0.0]}"#);
        assert_eq!(serde_json::from_str::<Row>(&s).unwrap(), r);
        assert!(serde_json::to_string(&Row { v: vec![f64::NAN] }).is_err());
    }
}
