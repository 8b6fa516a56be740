//! Location privacy under prior-aware adversaries: Hilbert-ordered
//! protection location sets, exponential obfuscation mechanisms, adversary
//! metrics and differential-privacy audits.

pub mod audit;
pub mod domain;
pub mod error;
pub mod harness;
pub mod hilbert;
pub mod mechanism;
pub mod metrics;
pub mod pls;

pub use domain::{bundled_example, LocationDomain, PriorDistribution};
pub use error::{Error, Result};
pub use mechanism::{ObfuscationMatrix, Scheme};
pub use pls::{DomainPartition, ProtectionLocationSet, SearchParams, TieBreak};
