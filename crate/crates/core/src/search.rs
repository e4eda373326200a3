//! Hammer-count search: exponential ramp to bracket the first success, then bisection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    pub start: u64,
    pub cap: u64,
    pub resolution: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            start: 8 * 1024,
            cap: 512 * 1024,
            resolution: 256,
        }
    }
}

impl SearchParams {
    /// Exact search from a single activation upwards.
    pub fn exact(cap: u64) -> Self {
        Self {
            start: 1,
            cap,
            resolution: 1,
        }
    }
}

/// Smallest tested count at which `pred` holds, assuming `pred` is monotone and
/// false at `floor`. The answer is within `resolution` above the true threshold.
/// Returns `None` if `pred` fails at the cap.
pub fn search_first(params: &SearchParams, floor: u64, mut pred: impl FnMut(u64) -> bool) -> Option<u64> {
    let cap = params.cap.max(1);
    let mut lo = floor;
    let mut hi = params.start.max(floor + 1).min(cap);
    if hi <= lo {
        return None;
    }
    loop {
        if pred(hi) {
            break;
        }
        lo = hi;
        if hi >= cap {
            return None;
        }
        hi = hi.saturating_mul(2).min(cap);
    }
    let res = params.resolution.max(1);
    while hi - lo > res {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}
