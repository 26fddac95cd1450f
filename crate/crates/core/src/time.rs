use std::fmt;

use serde::{Deserialize, Serialize};

/// Seconds since the Unix epoch, UTC. Passed explicitly wherever time matters
/// so that runs never depend on the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    /// 2018-01-01T00:00:00Z, the default reference time for certificate checks.
    pub const DEFAULT_REFERENCE: Timestamp = Timestamp(1_514_764_800);

    pub fn from_unix(secs: i64) -> Self {
        Self(secs)
    }

    pub fn unix(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}
