//! Serialization of exact rationals as `"num/den"` strings.
//!
//! JSON numbers cannot carry exact rationals, so every rational crossing a
//! serialization boundary travels as a string: `"13/18"`, or `"2"` when the
//! denominator is one. Parsing accepts both forms plus a leading sign.

use num_bigint::BigInt;
use num_traits::One;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ratpoly::Rat;

/// Canonical string form: `"num/den"`, or `"num"` for integers.
pub fn rat_to_string(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"num"` or `"num/den"`; the result is reduced automatically.
pub fn parse_rat(s: &str) -> Result<Rat> {
    let s = s.trim();
    let bad = || Error::InvalidArgument(format!("cannot parse rational from {s:?}"));
    match s.split_once('/') {
        None => {
            let n = BigInt::from_str(s).map_err(|_| bad())?;
            Ok(Rat::from_integer(n))
        }
        Some((num, den)) => {
            let n = BigInt::from_str(num.trim()).map_err(|_| bad())?;
            let d = BigInt::from_str(den.trim()).map_err(|_| bad())?;
            if d == BigInt::from(0) {
                return Err(Error::InvalidArgument(format!(
                    "zero denominator in rational {s:?}"
                )));
            }
            Ok(Rat::new(n, d))
        }
    }
}

/// For `#[serde(with = "ratio_serde::rat_string")]` on `Rat` fields.
pub mod rat_string {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{parse_rat, rat_to_string};
    use crate::ratpoly::Rat;

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&rat_to_string(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rat, D::Error> {
        let raw = String::deserialize(d)?;
        parse_rat(&raw).map_err(serde::de::Error::custom)
    }
}

/// For `#[serde(with = "ratio_serde::rat_string_opt")]` on `Option<Rat>`.
pub mod rat_string_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{parse_rat, rat_to_string};
    use crate::ratpoly::Rat;

    pub fn serialize<S: Serializer>(
        r: &Option<Rat>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&rat_to_string(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Rat>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        raw.map(|s| parse_rat(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// For `#[serde(with = "ratio_serde::rat_string_vec")]` on `Vec<Rat>`.
pub mod rat_string_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{parse_rat, rat_to_string};
    use crate::ratpoly::Rat;

    pub fn serialize<S: Serializer>(v: &[Rat], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(rat_to_string))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Rat>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| parse_rat(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratpoly::rat;

    #[test]
    fn round_trips_canonical_forms() {
        for (s, n, d) in [("13/18", 13, 18), ("-5/7", -5, 7), ("4", 4, 1), ("0", 0, 1)] {
            let r = parse_rat(s).unwrap();
            assert_eq!(r, rat(n, d));
            assert_eq!(rat_to_string(&r), s);
        }
    }

    #[test]
    fn parse_reduces_and_normalizes_sign() {
        assert_eq!(parse_rat("6/4").unwrap(), rat(3, 2));
        assert_eq!(parse_rat("5/-10").unwrap(), rat(-1, 2));
        assert_eq!(rat_to_string(&parse_rat("5/-10").unwrap()), "-1/2");
        assert_eq!(parse_rat(" 7 / 2 ").unwrap(), rat(7, 2));
    }

    #[test]
    fn parse_rejects_garbage() {
        for s in ["", "1/0", "a/b", "1.5", "1/2/3"] {
            assert!(parse_rat(s).is_err(), "{s:?} should fail");
        }
    }

    #[test]
    fn serde_with_attribute_works() {
        use serde::{Deserialize, Serialize};
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Holder {
            #[serde(with = "super::rat_string")]
            q: Rat,
            #[serde(with = "super::rat_string_vec")]
            w: Vec<Rat>,
        }
        let h = Holder {
            q: rat(20, 29),
            w: vec![rat(13, 18), rat(5, 18)],
        };
        let js = serde_json::to_string(&h).unwrap();
        assert_eq!(js, r#"{"q":"20/29","w":["13/18","5/18"]}"#);
        assert_eq!(serde_json::from_str::<Holder>(&js).unwrap(), h);
    }
}
