//! DecisionDB: materializes decision-valued maps over a fixed snapshot and
//! engine, stores every stage as a content-addressed write-once artifact,
//! and verifies by replay that recorded decision identities are recoverable.

pub mod canon;
pub mod policy;
pub mod replay;
pub mod routing;
pub mod store;
pub mod sweep;

pub use canon::{CanonError, CanonicalValue, Decimal, IdPrefix, Identifier, PayloadHash};
pub use policy::{DecisionIdentity, EquivalencePolicy};
pub use store::{Store, StoreError, TableCounts};
