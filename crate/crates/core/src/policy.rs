//! Equivalence policies: content-addressed rules that reduce a raw engine
//! output to a discrete decision identity.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{self, CanonError, CanonicalValue, IdPrefix, Identifier, PayloadHash};
use crate::store::{decision_id_for, Store, StoreError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy: {0}")]
    Validation(String),
    #[error("raw output has no value at hash source {0}")]
    MissingPath(String),
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalizationRule {
    CanonicalJsonUtf8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Sha256Equality,
}

/// The identifying content of a policy. Its canonical encoding is both the
/// `pol` identifier payload and the persisted spec blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// Key path into the raw output.
    pub hash_source: Vec<String>,
    pub canonicalization_rule: CanonicalizationRule,
    pub match_rule: MatchRule,
    pub version: String,
}

impl PolicySpec {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.hash_source.is_empty() {
            return Err(PolicyError::Validation("hash_source must name at least one key".into()));
        }
        if self.hash_source.iter().any(String::is_empty) {
            return Err(PolicyError::Validation("hash_source keys must be non-empty".into()));
        }
        if self.version.is_empty() {
            return Err(PolicyError::Validation("version must be non-empty".into()));
        }
        Ok(())
    }

    pub fn hash_source_display(&self) -> String {
        self.hash_source.join(".")
    }
}

/// Content-addressed identifier of a policy spec.
pub fn policy_identifier(spec: &PolicySpec) -> Result<Identifier, PolicyError> {
    spec.validate()?;
    Ok(canon::content_id_of(IdPrefix::Pol, spec)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivalencePolicy {
    policy_id: Identifier,
    spec: PolicySpec,
}

impl EquivalencePolicy {
    pub fn new(spec: PolicySpec) -> Result<Self, PolicyError> {
        Ok(EquivalencePolicy {
            policy_id: policy_identifier(&spec)?,
            spec,
        })
    }

    /// Two routes share an identity iff they traverse the same node sequence.
    pub fn route_nodes() -> Self {
        Self::new(PolicySpec {
            hash_source: vec!["route_nodes".into()],
            canonicalization_rule: CanonicalizationRule::CanonicalJsonUtf8,
            match_rule: MatchRule::Sha256Equality,
            version: "1".into(),
        })
        .expect("built-in policy is valid")
    }

    /// Parses a policy spec file. Unknown rule names and unknown fields are
    /// validation errors.
    pub fn from_json(bytes: &[u8]) -> Result<Self, PolicyError> {
        let value = canon::canonical_decode(bytes)?;
        let spec: PolicySpec = canon::from_canonical(&value).map_err(|e| PolicyError::Validation(e.to_string()))?;
        Self::new(spec)
    }

    pub fn id(&self) -> Identifier {
        self.policy_id
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canon::encode_serializable(&self.spec).expect("policy spec is canonical")
    }

    /// Stores the spec blob so replay can reload it by identifier.
    pub fn persist(&self, store: &Store) -> Result<(), PolicyError> {
        let blob = store.put_blob(&self.canonical_bytes())?;
        debug_assert_eq!(blob.hash, self.policy_id.digest());
        Ok(())
    }

    /// Reloads a persisted policy, verifying the blob.
    pub fn load(store: &Store, id: &Identifier) -> Result<Self, PolicyError> {
        let bytes = store.spec_blob(id)?.ok_or_else(|| StoreError::Referential {
            kind: "policy",
            missing: id.to_string(),
        })?;
        Self::from_json(&bytes)
    }

    /// The value at the hash source.
    pub fn extract_payload<'a>(&self, raw: &'a CanonicalValue) -> Result<&'a CanonicalValue, PolicyError> {
        raw.get_path(&self.spec.hash_source)
            .ok_or_else(|| PolicyError::MissingPath(self.spec.hash_source_display()))
    }

    /// Reduces a raw output to its decision identity.
    pub fn extract_decision(&self, raw: &CanonicalValue) -> Result<DecisionIdentity, PolicyError> {
        let payload = self.extract_payload(raw)?;
        let payload_hash = match self.spec.canonicalization_rule {
            CanonicalizationRule::CanonicalJsonUtf8 => canon::payload_hash(&canon::canonical_encode(payload)),
        };
        Ok(DecisionIdentity {
            decision_id: decision_id_for(self.policy_id, payload_hash)?,
            policy_id: self.policy_id,
            payload_hash,
        })
    }
}

/// Free-function form of [`EquivalencePolicy::extract_decision`].
pub fn extract_decision(raw: &CanonicalValue, policy: &EquivalencePolicy) -> Result<DecisionIdentity, PolicyError> {
    policy.extract_decision(raw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecisionIdentity {
    pub decision_id: Identifier,
    pub policy_id: Identifier,
    pub payload_hash: PayloadHash,
}

impl fmt::Display for DecisionIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} / {})", self.decision_id, self.policy_id, self.payload_hash)
    }
}

/// Identity under the shipped match rule: same policy and equal payload hash.
pub fn same_decision(a: &DecisionIdentity, b: &DecisionIdentity) -> bool {
    a.policy_id == b.policy_id && a.payload_hash == b.payload_hash
}
