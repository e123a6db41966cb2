//! Serde adapters for decibel values that may be infinite.
//!
//! Finite values are written as numbers, infinities as the strings `"inf"`
//! and `"-inf"`. Both forms are accepted on input.

use serde::de::{self, Visitor};
use serde::{Deserializer, Serialize, Serializer};

#[derive(Serialize)]
#[serde(untagged)]
enum Repr<'a> {
    Num(f64),
    Text(&'a str),
}

fn repr(v: f64) -> Repr<'static> {
    if v == f64::INFINITY {
        Repr::Text("inf")
    } else if v == f64::NEG_INFINITY {
        Repr::Text("-inf")
    } else if v.is_nan() {
        Repr::Text("nan")
    } else {
        Repr::Num(v)
    }
}

struct DbVisitor;

impl<'de> Visitor<'de> for DbVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        match v.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => other
                .parse()
                .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

pub mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(DbVisitor)
    }
}

pub mod db_vec {
    use super::*;
    use serde::de::SeqAccess;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| repr(*x)))
    }

    struct SeqVisitor;

    impl<'de> Visitor<'de> for SeqVisitor {
        type Value = Vec<f64>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a list of decibel values")
        }

        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<f64>, A::Error> {
            let mut out = Vec::new();
            while let Some(Wrapped(v)) = seq.next_element()? {
                out.push(v);
            }
            Ok(out)
        }
    }

    struct Wrapped(f64);

    impl<'de> serde::Deserialize<'de> for Wrapped {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            d.deserialize_any(DbVisitor).map(Wrapped)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        d.deserialize_seq(SeqVisitor)
    }
}
