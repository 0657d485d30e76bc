//! Version ordering.
//!
//! One comparison serves every ecosystem: the Debian algorithm (epoch,
//! upstream, revision; alternating non-digit and digit runs, `~` sorting
//! before everything). It orders semver, PEP 440 release numbers, RPM
//! `version-release` and Alpine `-rN` suffixes sensibly for the one
//! question asked of it: did a version go up?

use std::cmp::Ordering;

/// Compares two version strings. A leading `v` is ignored.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let (ea, ua, ra) = split(a);
    let (eb, ub, rb) = split(b);
    ea.cmp(&eb)
        .then_with(|| compare_part(ua, ub))
        .then_with(|| compare_part(ra, rb))
}

/// `true` when `new` sorts strictly after `old`.
pub fn is_upgrade(old: &str, new: &str) -> bool {
    compare_versions(old, new) == Ordering::Less
}

fn split(v: &str) -> (u64, &str, &str) {
    let v = v.trim();
    let v = v
        .strip_prefix(['v', 'V'])
        .filter(|rest| rest.starts_with(|c: char| c.is_ascii_digit()))
        .unwrap_or(v);
    let (epoch, rest) = match v.split_once(':') {
        Some((e, rest)) if !e.is_empty() && e.bytes().all(|b| b.is_ascii_digit()) => {
            (e.parse().unwrap_or(u64::MAX), rest)
        }
        _ => (0, v),
    };
    match rest.rfind('-') {
        Some(i) => (epoch, &rest[..i], &rest[i + 1..]),
        None => (epoch, rest, ""),
    }
}

fn char_order(c: Option<u8>) -> i32 {
    match c {
        None => 0,
        Some(b'~') => -1,
        Some(c) if c.is_ascii_digit() => 0,
        Some(c) if c.is_ascii_alphabetic() => c as i32,
        Some(c) => c as i32 + 256,
    }
}

fn compare_part(a: &str, b: &str) -> Ordering {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        // Non-digit prefix.
        while (i < a.len() && !a[i].is_ascii_digit()) || (j < b.len() && !b[j].is_ascii_digit()) {
            let ca = a.get(i).copied().filter(|c| !c.is_ascii_digit());
            let cb = b.get(j).copied().filter(|c| !c.is_ascii_digit());
            let (oa, ob) = (char_order(ca), char_order(cb));
            if oa != ob {
                return oa.cmp(&ob);
            }
            if ca.is_some() {
                i += 1;
            }
            if cb.is_some() {
                j += 1;
            }
        }
        // Digit run, compared numerically without overflow.
        while i < a.len() && a[i] == b'0' {
            i += 1;
        }
        while j < b.len() && b[j] == b'0' {
            j += 1;
        }
        let si = i;
        while i < a.len() && a[i].is_ascii_digit() {
            i += 1;
        }
        let sj = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        let (da, db) = (&a[si..i], &b[sj..j]);
        let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use std::process::Command;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn basic_orders() {
        assert_eq!(compare_versions("1.0", "1.1"), Ordering::Less);
        assert_eq!(compare_versions("1.10", "1.9"), Ordering::Greater);
        assert_eq!(compare_versions("1.0~rc1", "1.0"), Ordering::Less);
        assert_eq!(compare_versions("1:0.1", "2.0"), Ordering::Greater);
        assert_eq!(compare_versions("7.88.1-10", "7.88.1-10+deb12u5"), Ordering::Less);
        assert_eq!(compare_versions("v1.8.0", "1.8.0"), Ordering::Equal);
        assert_eq!(compare_versions("1.2.4-r1", "1.2.4-r2"), Ordering::Less);
        assert_eq!(compare_versions("007", "7"), Ordering::Equal);
        assert!(is_upgrade("1.0", "1.1"));
        assert!(!is_upgrade("1.1", "1.1"));
    }

    fn dpkg_available() -> bool {
        Command::new("dpkg").arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
    }

    fn dpkg_cmp(a: &str, b: &str) -> Ordering {
        let run = |op: &str| {
            Command::new("dpkg")
                .args(["--compare-versions", a, op, b])
                .status()
                .map(|s| s.success())
                .unwrap_or(false)
        };
        if run("lt") {
            Ordering::Less
        } else if run("eq") {
            Ordering::Equal
        } else {
            Ordering::Greater
        }
    }

    /// The reference implementation is the Debian tool itself.
    #[test]
    fn agrees_with_dpkg() {
        if !dpkg_available() {
            eprintln!("dpkg not installed; skipping oracle comparison");
            return;
        }
        let versions = [
            "1.0", "1.0-1", "1.0-2", "1.0~beta", "1.0~~", "1.0+b1", "1:0.9", "2:1.0", "0.0.1",
            "1.2.3", "1.2.10", "1.2.3a", "1.2.3-4ubuntu1", "1.2.3-4ubuntu1.1", "20260601~22.04.1",
            "1.16.5-1.3", "14.0-55~exp2", "1.0a", "1.0.a", "10", "9.9.9",
        ];
        for a in versions {
            for b in versions {
                assert_eq!(compare_versions(a, b), dpkg_cmp(a, b), "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn antisymmetric(a in "[0-9a-z.~+:-]{1,12}", b in "[0-9a-z.~+:-]{1,12}") {
            prop_assert_eq!(compare_versions(&a, &b), compare_versions(&b, &a).reverse());
        }

        #[test]
        fn reflexive(a in "[0-9a-z.~+-]{1,12}") {
            prop_assert_eq!(compare_versions(&a, &a), Ordering::Equal);
        }
    }
}
