//! Associative scan for first-order linear recurrences `x_t = a_t x_{t-1} + b_t`.
//!
//! An element `(a, b)` stands for the affine map `x -> a x + b`; composing
//! "first then second" gives [`combine`]. The inclusive prefix of the
//! elements, applied to `x_{-1} = 0`, is the recurrence's state sequence.

use super::C64;

pub type Element = (C64, C64);

pub const IDENTITY: Element = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));

/// `((a1, b1), (a2, b2)) -> (a2 a1, a2 b1 + b2)`.
pub fn combine(first: Element, second: Element) -> Element {
    (second.0 * first.0, second.0 * first.1 + second.1)
}

/// Inclusive prefix under [`combine`], evaluated as a balanced tree: pairs
/// are reduced level by level (each level is independent work), then the
/// even positions are filled in on the way back down. `O(n)` combines,
/// `O(log n)` depth.
pub fn associative_scan(elems: &[Element]) -> Vec<Element> {
    let n = elems.len();
    if n <= 1 {
        return elems.to_vec();
    }
    let pairs: Vec<Element> = elems.chunks_exact(2).map(|p| combine(p[0], p[1])).collect();
    let reduced = associative_scan(&pairs);
    let mut out = Vec::with_capacity(n);
    out.push(elems[0]);
    for i in 1..n {
        out.push(if i % 2 == 1 {
            reduced[i / 2]
        } else {
            combine(reduced[i / 2 - 1], elems[i])
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(a: f64, b: f64, c: f64, d: f64) -> Element {
        (C64::new(a, b), C64::new(c, d))
    }

    #[test]
    fn identity_leaves_operand() {
        let x = el(0.3, -0.2, 1.5, 0.7);
        assert_eq!(combine(IDENTITY, x), x);
        assert_eq!(combine(x, IDENTITY), x);
    }

    #[test]
    fn matches_sequential_fold() {
        for n in [1usize, 2, 3, 5, 8, 13, 64, 100] {
            let xs: Vec<Element> = (0..n)
                .map(|i| {
                    let t = i as f64;
                    el(
                        0.9 * (0.3 * t).cos(),
                        0.1 * (0.7 * t).sin(),
                        (1.1 * t).sin(),
                        (0.4 * t).cos(),
                    )
                })
                .collect();
            let got = associative_scan(&xs);
            let mut acc = IDENTITY;
            for (i, &x) in xs.iter().enumerate() {
                acc = combine(acc, x);
                assert!((got[i].0 - acc.0).norm() < 1e-12);
                assert!((got[i].1 - acc.1).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_input() {
        assert!(associative_scan(&[]).is_empty());
    }
}
