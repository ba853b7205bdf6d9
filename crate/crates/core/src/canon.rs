//! Canonical JSON encoding and content-addressed identifiers.
//!
//! Wire format:
//! - object keys sorted by byte-wise comparison of their UTF-8 encodings
//! - no whitespace between tokens
//! - arrays in declaration order
//! - integers as plain JSON numbers; fractional numbers as decimal strings
//! - strings as literal UTF-8 with only the escapes the JSON grammar requires
//!   (`\"`, `\\`, and control characters below U+0020)
//!
//! An identifier is `<prefix>_<digest16>` where `digest16` is the first 16
//! lowercase hex characters of SHA-256 over the canonical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, DeserializeOwned, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Fractional digits kept by all decimal arithmetic.
pub const DECIMAL_SCALE: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonError {
    #[error("duplicate mapping key {0:?}")]
    DuplicateKey(String),
    #[error("binary floating point value {0} is not canonical; encode it as a decimal string")]
    Float(String),
    #[error("integer {0} is outside the signed 64-bit range")]
    IntegerRange(String),
    #[error("malformed canonical JSON: {0}")]
    Parse(String),
    #[error("content-addressed payload must be a mapping")]
    NotAMapping,
    #[error("content-addressed payload is missing the `version` field")]
    MissingVersion,
    #[error("invalid decimal {0:?}")]
    InvalidDecimal(String),
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("invalid payload hash {0:?}")]
    InvalidHash(String),
    #[error("value does not match expected shape: {0}")]
    Shape(String),
}

pub type Result<T, E = CanonError> = std::result::Result<T, E>;

// ---------------------------------------------------------------------------
// Decimal
// ---------------------------------------------------------------------------

/// Exact decimal number with at most [`DECIMAL_SCALE`] fractional digits.
///
/// Rendered with trailing zeros trimmed but at least one fractional digit,
/// so `1`, `1.0` and `1.000` all render as `1.0`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal(rust_decimal::Decimal);

impl Decimal {
    pub const ZERO: Decimal = Decimal(rust_decimal::Decimal::ZERO);
    pub const ONE: Decimal = Decimal(rust_decimal::Decimal::ONE);

    pub fn from_int(v: i64) -> Self {
        Decimal(rust_decimal::Decimal::from(v))
    }

    /// `mantissa * 10^-scale`, rounded to the fixed scale.
    pub fn from_scaled(mantissa: i64, scale: u32) -> Self {
        Decimal(rust_decimal::Decimal::new(mantissa, scale)).round()
    }

    fn round(self) -> Self {
        Decimal(
            self.0
                .round_dp_with_strategy(DECIMAL_SCALE, rust_decimal::RoundingStrategy::MidpointNearestEven),
        )
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_sign_negative() && !self.0.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn checked_add(self, rhs: Decimal) -> Option<Decimal> {
        self.0.checked_add(rhs.0).map(|d| Decimal(d).round())
    }

    pub fn checked_sub(self, rhs: Decimal) -> Option<Decimal> {
        self.0.checked_sub(rhs.0).map(|d| Decimal(d).round())
    }

    pub fn checked_mul(self, rhs: Decimal) -> Option<Decimal> {
        self.0.checked_mul(rhs.0).map(|d| Decimal(d).round())
    }

    pub fn checked_div(self, rhs: Decimal) -> Option<Decimal> {
        self.0.checked_div(rhs.0).map(|d| Decimal(d).round())
    }

    /// Midpoint of `self` and `other`, rounded half-even at the fixed scale.
    pub fn midpoint(self, other: Decimal) -> Decimal {
        let two = rust_decimal::Decimal::TWO;
        Decimal(
            ((self.0 + other.0) / two)
                .round_dp_with_strategy(DECIMAL_SCALE, rust_decimal::RoundingStrategy::MidpointNearestEven),
        )
    }

    /// Integer mantissa and scale of the exact value, for callers that need
    /// rational comparisons.
    pub fn mantissa_scale(&self) -> (i128, u32) {
        (self.0.mantissa(), self.0.scale())
    }
}

impl std::ops::Add for Decimal {
    type Output = Decimal;
    fn add(self, rhs: Decimal) -> Decimal {
        self.checked_add(rhs).expect("decimal overflow")
    }
}

impl std::ops::Sub for Decimal {
    type Output = Decimal;
    fn sub(self, rhs: Decimal) -> Decimal {
        self.checked_sub(rhs).expect("decimal overflow")
    }
}

impl std::ops::Mul for Decimal {
    type Output = Decimal;
    fn mul(self, rhs: Decimal) -> Decimal {
        self.checked_mul(rhs).expect("decimal overflow")
    }
}

impl std::iter::Sum for Decimal {
    fn sum<I: Iterator<Item = Decimal>>(iter: I) -> Decimal {
        iter.fold(Decimal::ZERO, |a, b| a + b)
    }
}

impl FromStr for Decimal {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CanonError::InvalidDecimal(s.to_string());
        let body = s.strip_prefix('-').unwrap_or(s);
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || frac.is_some_and(|f| !digits(f)) {
            return Err(bad());
        }
        if frac.is_some_and(|f| f.trim_end_matches('0').len() > DECIMAL_SCALE as usize) {
            return Err(bad());
        }
        let d = rust_decimal::Decimal::from_str_exact(s).map_err(|_| bad())?;
        Ok(Decimal(d).round())
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.normalize();
        let s = n.to_string();
        if s.contains('.') {
            f.write_str(&s)
        } else if s == "-0" {
            f.write_str("0.0")
        } else {
            write!(f, "{s}.0")
        }
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Decimal({self})")
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// CanonicalValue
// ---------------------------------------------------------------------------

/// JSON-like value tree restricted to what hashes deterministically.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum CanonicalValue {
    Null,
    Bool(bool),
    Integer(i64),
    Decimal(Decimal),
    Text(String),
    Seq(Vec<CanonicalValue>),
    Map(BTreeMap<String, CanonicalValue>),
}

impl CanonicalValue {
    /// Builds a mapping, rejecting duplicate keys.
    pub fn map_from_pairs<I, K>(pairs: I) -> Result<CanonicalValue>
    where
        I: IntoIterator<Item = (K, CanonicalValue)>,
        K: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.into();
            if map.contains_key(&k) {
                return Err(CanonError::DuplicateKey(k));
            }
            map.insert(k, v);
        }
        Ok(CanonicalValue::Map(map))
    }

    pub fn text(s: impl Into<String>) -> Self {
        CanonicalValue::Text(s.into())
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, CanonicalValue>> {
        match self {
            CanonicalValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&CanonicalValue> {
        self.as_map().and_then(|m| m.get(key))
    }

    /// Follows a sequence of mapping keys.
    pub fn get_path<S: AsRef<str>>(&self, path: &[S]) -> Option<&CanonicalValue> {
        path.iter().try_fold(self, |v, k| v.get(k.as_ref()))
    }

    pub fn as_seq(&self) -> Option<&[CanonicalValue]> {
        match self {
            CanonicalValue::Seq(s) => Some(s),
            _ => None,
        }
    }
}

impl Serialize for CanonicalValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::{SerializeMap, SerializeSeq};
        match self {
            CanonicalValue::Null => s.serialize_unit(),
            CanonicalValue::Bool(b) => s.serialize_bool(*b),
            CanonicalValue::Integer(i) => s.serialize_i64(*i),
            CanonicalValue::Decimal(d) => d.serialize(s),
            CanonicalValue::Text(t) => s.serialize_str(t),
            CanonicalValue::Seq(items) => {
                let mut seq = s.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(item)?;
                }
                seq.end()
            }
            CanonicalValue::Map(m) => {
                let mut map = s.serialize_map(Some(m.len()))?;
                for (k, v) in m {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }
    }
}

struct CanonicalVisitor;

impl<'de> Visitor<'de> for CanonicalVisitor {
    type Value = CanonicalValue;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a canonical JSON value")
    }

    fn visit_unit<E: de::Error>(self) -> std::result::Result<CanonicalValue, E> {
        Ok(CanonicalValue::Null)
    }

    fn visit_none<E: de::Error>(self) -> std::result::Result<CanonicalValue, E> {
        Ok(CanonicalValue::Null)
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> std::result::Result<CanonicalValue, E> {
        Ok(CanonicalValue::Bool(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<CanonicalValue, E> {
        Ok(CanonicalValue::Integer(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<CanonicalValue, E> {
        i64::try_from(v)
            .map(CanonicalValue::Integer)
            .map_err(|_| E::custom(CanonError::IntegerRange(v.to_string())))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<CanonicalValue, E> {
        Err(E::custom(CanonError::Float(v.to_string())))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CanonicalValue, E> {
        Ok(CanonicalValue::Text(v.to_string()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> std::result::Result<CanonicalValue, E> {
        Ok(CanonicalValue::Text(v))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<CanonicalValue, A::Error> {
        let mut out = Vec::new();
        while let Some(v) = seq.next_element()? {
            out.push(v);
        }
        Ok(CanonicalValue::Seq(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<CanonicalValue, A::Error> {
        let mut map = BTreeMap::new();
        while let Some(k) = access.next_key::<String>()? {
            if map.contains_key(&k) {
                return Err(de::Error::custom(CanonError::DuplicateKey(k)));
            }
            let v = access.next_value()?;
            map.insert(k, v);
        }
        Ok(CanonicalValue::Map(map))
    }
}

impl<'de> Deserialize<'de> for CanonicalValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        d.deserialize_any(CanonicalVisitor)
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Canonical JSON bytes of `value`.
pub fn canonical_encode(value: &CanonicalValue) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(&mut out, value);
    out
}

/// Canonical JSON of `value` as a string.
pub fn canonical_string(value: &CanonicalValue) -> String {
    String::from_utf8(canonical_encode(value)).expect("canonical encoding is UTF-8")
}

fn write_value(out: &mut Vec<u8>, value: &CanonicalValue) {
    match value {
        CanonicalValue::Null => out.extend_from_slice(b"null"),
        CanonicalValue::Bool(true) => out.extend_from_slice(b"true"),
        CanonicalValue::Bool(false) => out.extend_from_slice(b"false"),
        CanonicalValue::Integer(i) => out.extend_from_slice(i.to_string().as_bytes()),
        CanonicalValue::Decimal(d) => write_str(out, &d.to_string()),
        CanonicalValue::Text(s) => write_str(out, s),
        CanonicalValue::Seq(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(out, item);
            }
            out.push(b']');
        }
        CanonicalValue::Map(map) => {
            // BTreeMap<String, _> iterates in byte-wise key order.
            out.push(b'{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_str(out, k);
                out.push(b':');
                write_value(out, v);
            }
            out.push(b'}');
        }
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.push(b'"');
    for &b in s.as_bytes() {
        match b {
            b'"' => out.extend_from_slice(b"\\\""),
            b'\\' => out.extend_from_slice(b"\\\\"),
            b'\n' => out.extend_from_slice(b"\\n"),
            b'\r' => out.extend_from_slice(b"\\r"),
            b'\t' => out.extend_from_slice(b"\\t"),
            0x08 => out.extend_from_slice(b"\\b"),
            0x0c => out.extend_from_slice(b"\\f"),
            0x00..=0x1f => out.extend_from_slice(format!("\\u{b:04x}").as_bytes()),
            _ => out.push(b),
        }
    }
    out.push(b'"');
}

/// Parses JSON bytes into a canonical value. Duplicate keys and binary
/// floats are rejected.
pub fn canonical_decode(bytes: &[u8]) -> Result<CanonicalValue> {
    serde_json::from_slice(bytes).map_err(|e| {
        let msg = e.to_string();
        if let Some(key) = msg
            .strip_prefix("duplicate mapping key \"")
            .and_then(|rest| rest.split('"').next())
        {
            CanonError::DuplicateKey(key.to_string())
        } else if msg.contains("binary floating point") {
            CanonError::Float(msg)
        } else {
            CanonError::Parse(msg)
        }
    })
}

/// Converts any serializable value into the canonical tree.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<CanonicalValue> {
    let json = serde_json::to_value(value).map_err(|e| CanonError::Shape(e.to_string()))?;
    from_json(json)
}

fn from_json(json: serde_json::Value) -> Result<CanonicalValue> {
    use serde_json::Value;
    Ok(match json {
        Value::Null => CanonicalValue::Null,
        Value::Bool(b) => CanonicalValue::Bool(b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => CanonicalValue::Integer(i),
            None if n.is_u64() => return Err(CanonError::IntegerRange(n.to_string())),
            None => return Err(CanonError::Float(n.to_string())),
        },
        Value::String(s) => CanonicalValue::Text(s),
        Value::Array(items) => CanonicalValue::Seq(items.into_iter().map(from_json).collect::<Result<_>>()?),
        Value::Object(map) => CanonicalValue::Map(
            map.into_iter()
                .map(|(k, v)| Ok((k, from_json(v)?)))
                .collect::<Result<_>>()?,
        ),
    })
}

/// Deserializes a typed value out of the canonical tree.
pub fn from_canonical<T: DeserializeOwned>(value: &CanonicalValue) -> Result<T> {
    let json = serde_json::to_value(value).map_err(|e| CanonError::Shape(e.to_string()))?;
    serde_json::from_value(json).map_err(|e| CanonError::Shape(e.to_string()))
}

/// Canonical bytes of a serializable value.
pub fn encode_serializable<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    Ok(canonical_encode(&to_canonical(value)?))
}

/// Parses canonical bytes straight into a typed value.
pub fn decode_deserializable<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    from_canonical(&canonical_decode(bytes)?)
}

// ---------------------------------------------------------------------------
// Hashes and identifiers
// ---------------------------------------------------------------------------

/// First 16 hex characters (8 bytes) of a SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PayloadHash([u8; 8]);

impl PayloadHash {
    pub fn as_bytes(&self) -> &[u8; 8] {
        &self.0
    }
}

impl fmt::Display for PayloadHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PayloadHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PayloadHash({self})")
    }
}

impl FromStr for PayloadHash {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self> {
        let lower_hex = s.len() == 16 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !lower_hex {
            return Err(CanonError::InvalidHash(s.to_string()));
        }
        let mut out = [0u8; 8];
        hex::decode_to_slice(s, &mut out).map_err(|_| CanonError::InvalidHash(s.to_string()))?;
        Ok(PayloadHash(out))
    }
}

impl Serialize for PayloadHash {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PayloadHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

/// Truncated SHA-256 of raw bytes.
pub fn payload_hash(bytes: &[u8]) -> PayloadHash {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    PayloadHash(out)
}

/// Registered identifier prefixes, one per content-addressed entity kind.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum IdPrefix {
    Snap,
    Repr,
    Run,
    Dec,
    Pol,
    Plan,
}

impl IdPrefix {
    pub const ALL: [IdPrefix; 6] = [
        IdPrefix::Snap,
        IdPrefix::Repr,
        IdPrefix::Run,
        IdPrefix::Dec,
        IdPrefix::Pol,
        IdPrefix::Plan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IdPrefix::Snap => "snap",
            IdPrefix::Repr => "repr",
            IdPrefix::Run => "run",
            IdPrefix::Dec => "dec",
            IdPrefix::Pol => "pol",
            IdPrefix::Plan => "plan",
        }
    }
}

impl fmt::Display for IdPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IdPrefix {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self> {
        IdPrefix::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| CanonError::InvalidIdentifier(s.to_string()))
    }
}

/// Typed content-derived key, rendered `<prefix>_<digest16>`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identifier {
    prefix: IdPrefix,
    digest: PayloadHash,
}

impl Identifier {
    pub fn new(prefix: IdPrefix, digest: PayloadHash) -> Self {
        Identifier { prefix, digest }
    }

    pub fn prefix(&self) -> IdPrefix {
        self.prefix
    }

    pub fn digest(&self) -> PayloadHash {
        self.digest
    }

    /// Parses and additionally checks the prefix.
    pub fn parse_with(prefix: IdPrefix, s: &str) -> Result<Self> {
        let id: Identifier = s.parse()?;
        if id.prefix != prefix {
            return Err(CanonError::InvalidIdentifier(s.to_string()));
        }
        Ok(id)
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.prefix, self.digest)
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identifier({self})")
    }
}

impl FromStr for Identifier {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CanonError::InvalidIdentifier(s.to_string());
        let (prefix, digest) = s.split_once('_').ok_or_else(bad)?;
        Ok(Identifier {
            prefix: prefix.parse().map_err(|_| bad())?,
            digest: digest.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for Identifier {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

/// Identifier of a content-addressed payload. The payload must be a mapping
/// carrying a `version` field.
pub fn content_id(prefix: IdPrefix, payload: &CanonicalValue) -> Result<Identifier> {
    let map = payload.as_map().ok_or(CanonError::NotAMapping)?;
    if !map.contains_key("version") {
        return Err(CanonError::MissingVersion);
    }
    Ok(Identifier::new(prefix, payload_hash(&canonical_encode(payload))))
}

/// [`content_id`] over any serializable payload.
pub fn content_id_of<T: Serialize + ?Sized>(prefix: IdPrefix, payload: &T) -> Result<Identifier> {
    content_id(prefix, &to_canonical(payload)?)
}
