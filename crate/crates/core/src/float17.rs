//! Serde helpers writing `f64` values as 17-significant-digit decimals.
//!
//! Seventeen significant digits identify every finite `f64` uniquely, and a
//! fixed exponent format makes the text canonical: the same bits always give
//! the same bytes. Only meaningful with `serde_json` (values are emitted as
//! raw JSON numbers).

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

pub(crate) fn format(x: f64) -> Option<String> {
    x.is_finite().then(|| format!("{x:.16e}"))
}

fn raw<E: serde::ser::Error>(x: f64) -> Result<Box<RawValue>, E> {
    let text = format(x).ok_or_else(|| E::custom(format!("non-finite value {x}")))?;
    RawValue::from_string(text).map_err(E::custom)
}

pub mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        raw::<S::Error>(*x)?.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            seq.serialize_element(&raw::<S::Error>(x)?)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(x) => s.serialize_some(&raw::<S::Error>(*x)?),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d)
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "vec")] Vec<f64>);

    #[test]
    fn seventeen_digits() {
        assert_eq!(format(0.1).unwrap(), "1.0000000000000001e-1");
        assert_eq!(format(-2.0).unwrap(), "-2.0000000000000000e0");
        assert!(format(f64::NAN).is_none());
    }

    #[test]
    fn non_finite_refused() {
        assert!(serde_json::to_string(&Wrap(vec![f64::INFINITY])).is_err());
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(xs in proptest::collection::vec(
            any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..32)) {
            let text = serde_json::to_string(&Wrap(xs.clone())).unwrap();
            let back: Wrap = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.0.len(), xs.len());
            for (a, b) in back.0.iter().zip(&xs) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }
    }
}
