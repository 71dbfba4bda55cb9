//! Largest-remainder apportionment.
//!
//! Every integer split in the crate (zone shares, turn shares, phase greens,
//! lane shares) goes through here so that totals are conserved exactly.
//! Ties on equal fractional parts go to the lower index.

/// Split `total` into integers proportional to `weights`.
///
/// Returns all zeros when `total` is zero or every weight is zero.
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    apportion_quotas(total, &quotas)
}

/// Round real quotas that already sum to `total` into integers summing to
/// `total` exactly, each within one unit of its quota.
pub fn apportion_quotas(total: u64, quotas: &[f64]) -> Vec<u64> {
    let mut out: Vec<u64> = quotas.iter().map(|q| q.max(0.0).floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    if assigned >= total {
        return out;
    }
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a].max(0.0) - out[a] as f64;
        let rb = quotas[b].max(0.0) - out[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - assigned;
    // Float drift can leave `left` above the number of slots; cycle until spent.
    while left > 0 {
        for &i in &order {
            if left == 0 {
                break;
            }
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Round half away from zero to the nearest integer.
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}
