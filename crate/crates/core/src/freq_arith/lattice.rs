//! Walks over integer vectors in the l1 ball, modulo `k ~ -k`.

use std::cmp::Ordering;

/// Calls `visit(r, |r|_1)` for every `r` in Z^dim with `|r|_1 <= radius`
/// whose first nonzero entry is positive. The zero vector is visited first
/// when `include_zero` is set.
pub fn for_each_half_space<F: FnMut(&[i64], u64)>(
    dim: usize,
    radius: u64,
    include_zero: bool,
    mut visit: F,
) {
    let mut buf = vec![0i64; dim];
    if include_zero {
        visit(&buf, 0);
    }
    // Position `lead` holds the first nonzero (positive) entry.
    for lead in 0..dim {
        for v in 1..=radius as i64 {
            buf.iter_mut().for_each(|x| *x = 0);
            buf[lead] = v;
            fill(&mut buf, lead + 1, radius - v as u64, v as u64, &mut visit);
        }
    }
}

fn fill<F: FnMut(&[i64], u64)>(buf: &mut [i64], pos: usize, budget: u64, used: u64, visit: &mut F) {
    if pos == buf.len() {
        visit(buf, used);
        return;
    }
    let b = budget as i64;
    for v in -b..=b {
        buf[pos] = v;
        fill(
            buf,
            pos + 1,
            budget - v.unsigned_abs(),
            used + v.unsigned_abs(),
            visit,
        );
    }
    buf[pos] = 0;
}

/// Flips `k` so that its first nonzero entry is positive.
pub fn canonical(k: &mut [i64]) {
    if let Some(first) = k.iter().find(|&&x| x != 0) {
        if *first < 0 {
            k.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub fn l1(k: &[i64]) -> u64 {
    k.iter().map(|x| x.unsigned_abs()).sum()
}

/// Total order used to pick a unique minimiser: divisor, then `|k|_1`, then
/// the canonical representative lexicographically.
pub fn candidate_order(a: (f64, &[i64]), b: (f64, &[i64])) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| l1(a.1).cmp(&l1(b.1)))
        .then_with(|| a.1.cmp(b.1))
}
