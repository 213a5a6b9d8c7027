//! JSON encodings for values plain JSON cannot hold: infinite radii and
//! bit-exact numeric arrays.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A float that may be infinite, written as a number or as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtF64(pub f64);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtRepr {
    Num(f64),
    Text(String),
}

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            ExtRepr::Num(self.0).serialize(s)
        } else if self.0 > 0.0 {
            "inf".serialize(s)
        } else if self.0 < 0.0 {
            "-inf".serialize(s)
        } else {
            "nan".serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for ExtF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match ExtRepr::deserialize(d)? {
            ExtRepr::Num(v) => Ok(ExtF64(v)),
            ExtRepr::Text(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(ExtF64(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(ExtF64(f64::NEG_INFINITY)),
                "nan" => Ok(ExtF64(f64::NAN)),
                _ => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{t}\""
                ))),
            },
        }
    }
}

/// `f64` values packed little-endian and base64 encoded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct F64Array(pub Vec<f64>);

/// `u64` values packed little-endian and base64 encoded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct U64Array(pub Vec<u64>);

fn decode_words<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 8]>, D::Error> {
    let text = String::deserialize(d)?;
    let bytes = STANDARD
        .decode(text.as_bytes())
        .map_err(serde::de::Error::custom)?;
    if bytes.len() % 8 != 0 {
        return Err(serde::de::Error::custom(
            "packed array length is not a multiple of 8 bytes",
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| c.try_into().expect("8 bytes"))
        .collect())
}

impl Serialize for F64Array {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.0.iter().flat_map(|v| v.to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }
}

impl<'de> Deserialize<'de> for F64Array {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(F64Array(
            decode_words(d)?
                .into_iter()
                .map(f64::from_le_bytes)
                .collect(),
        ))
    }
}

impl Serialize for U64Array {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.0.iter().flat_map(|v| v.to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }
}

impl<'de> Deserialize<'de> for U64Array {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(U64Array(
            decode_words(d)?
                .into_iter()
                .map(u64::from_le_bytes)
                .collect(),
        ))
    }
}
