//! Domain database and its canonical digest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};

/// A record document: a tree of scalars, lists and maps.
pub type Document = Value;

/// Collection name -> record id -> document, plus the names of the
/// collections that participate in the reward comparison.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainDb {
    #[serde(default, deserialize_with = "unique_keys::collections")]
    pub collections: BTreeMap<String, BTreeMap<String, Document>>,
    #[serde(default)]
    pub mutable_collections: BTreeSet<String>,
}

impl DomainDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mutable<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.mutable_collections = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn insert(&mut self, collection: &str, id: &str, doc: Document) -> Option<Document> {
        self.collections
            .entry(collection.to_string())
            .or_default()
            .insert(id.to_string(), doc)
    }

    pub fn get(&self, collection: &str, id: &str) -> Option<&Document> {
        self.collections.get(collection)?.get(id)
    }

    pub fn get_mut(&mut self, collection: &str, id: &str) -> Option<&mut Document> {
        self.collections.get_mut(collection)?.get_mut(id)
    }

    pub fn collection(&self, name: &str) -> impl Iterator<Item = (&String, &Document)> {
        self.collections.get(name).into_iter().flat_map(|c| c.iter())
    }
}

mod unique_keys {
    //! Plain map deserialization keeps the last of repeated keys; record
    //! ids must be unique, so repeats are rejected instead.

    use std::collections::BTreeMap;
    use std::fmt;
    use std::marker::PhantomData;

    use serde::de::{self, Deserialize, Deserializer, MapAccess, Visitor};

    use super::Document;

    struct UniqueMap<V>(BTreeMap<String, V>);

    impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
        fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
            struct MapVisitor<V>(PhantomData<V>);

            impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
                type Value = UniqueMap<V>;

                fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                    f.write_str("a map with unique keys")
                }

                fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                    let mut out = BTreeMap::new();
                    while let Some((key, value)) = access.next_entry::<String, V>()? {
                        if out.contains_key(&key) {
                            return Err(de::Error::custom(format!("duplicate key \"{key}\"")));
                        }
                        out.insert(key, value);
                    }
                    Ok(UniqueMap(out))
                }
            }

            deserializer.deserialize_map(MapVisitor(PhantomData))
        }
    }

    pub fn collections<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<String, BTreeMap<String, Document>>, D::Error> {
        let outer = UniqueMap::<UniqueMap<Document>>::deserialize(deserializer)?;
        Ok(outer.0.into_iter().map(|(k, v)| (k, v.0)).collect())
    }
}

/// 256-bit digest, rendered as lowercase hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DbDigest([u8; 32]);

impl DbDigest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for DbDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("digest must be 64 lowercase hex characters, got {0:?}")]
pub struct DigestParseError(pub String);

impl FromStr for DbDigest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowercase_hex = s.len() == 64
            && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !lowercase_hex {
            return Err(DigestParseError(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| DigestParseError(s.to_string()))?;
        Ok(DbDigest(out))
    }
}

impl Serialize for DbDigest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DbDigest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical text form of a document: map keys sorted by code point,
/// no insignificant whitespace, numbers in shortest round-trip decimal.
///
/// Integral numbers render without a fractional part whatever their
/// storage type, so `1`, `1.0` and `-0.0`/`0` collapse to one form.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out),
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(key, out);
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

fn write_number(n: &serde_json::Number, out: &mut String) {
    use std::fmt::Write;
    if let Some(i) = n.as_i64() {
        let _ = write!(out, "{i}");
    } else if let Some(u) = n.as_u64() {
        let _ = write!(out, "{u}");
    } else {
        let f = n.as_f64().unwrap_or(0.0);
        // 2^53: beyond this integral floats are not exactly representable as
        // distinct integers, keep the float rendering.
        if f.fract() == 0.0 && f.abs() < 9_007_199_254_740_992.0 {
            let _ = write!(out, "{}", f as i64);
        } else {
            let _ = write!(out, "{f}");
        }
    }
}

fn write_string(s: &str, out: &mut String) {
    // serde_json's string escaping is already deterministic.
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

/// Digest of the canonical serialization of the selected collections.
///
/// With `mutable_only`, only collections named in `mutable_collections`
/// are covered; the set itself is not part of the digest.
pub fn db_hash(db: &DomainDb, mutable_only: bool) -> DbDigest {
    let mut selected = serde_json::Map::new();
    for (name, records) in &db.collections {
        if mutable_only && !db.mutable_collections.contains(name) {
            continue;
        }
        let records: serde_json::Map<String, Value> =
            records.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        selected.insert(name.clone(), Value::Object(records));
    }
    let text = canonical_json(&Value::Object(selected));
    DbDigest(Sha256::digest(text.as_bytes()).into())
}
