//! Every hash in the services goes through the derivation module, so the
//! formulas live in exactly one place. Scans the sources for stray uses.

use std::path::{Path, PathBuf};

const PRIMITIVE_OWNERS: &[&str] = &["crypto.rs"];
const DERIVATION_OWNERS: &[&str] = &["crypto.rs", "derive.rs"];
/// Resolution replays `H^i(rnd_v)` for a stored batch index.
const ITERATED_HASH_USERS: &[&str] = &["pca.rs"];

fn sources() -> Vec<(PathBuf, String)> {
    fn walk(dir: &Path, out: &mut Vec<(PathBuf, String)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, out);
            } else if path.extension().is_some_and(|e| e == "rs") {
                let text = std::fs::read_to_string(&path).unwrap();
                out.push((path, text));
            }
        }
    }
    let mut out = Vec::new();
    walk(&Path::new(env!("CARGO_MANIFEST_DIR")).join("src"), &mut out);
    assert!(out.len() > 10, "source tree not found");
    out
}

fn code_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_start()))
        .filter(|(_, l)| !l.starts_with("//"))
}

fn name(path: &Path) -> &str {
    path.file_name().unwrap().to_str().unwrap()
}

#[test]
fn only_crypto_touches_the_hash_primitive() {
    for (path, text) in sources() {
        if PRIMITIVE_OWNERS.contains(&name(&path)) {
            continue;
        }
        for (n, line) in code_lines(&text) {
            assert!(
                !line.contains("sha2") && !line.contains("Sha256"),
                "{}:{n} uses the hash primitive directly: {line}",
                path.display()
            );
        }
    }
}

#[test]
fn services_hash_only_through_derivations() {
    let needles = ["hash_fields(", "crypto::hash(", "hash_chain(", "iterated_hash("];
    for (path, text) in sources() {
        let file = name(&path);
        if DERIVATION_OWNERS.contains(&file) {
            continue;
        }
        for (n, line) in code_lines(&text) {
            for needle in needles {
                if !line.contains(needle) {
                    continue;
                }
                let allowed = needle == "iterated_hash(" && ITERATED_HASH_USERS.contains(&file);
                assert!(allowed, "{}:{n} hashes outside the derivation module: {line}", path.display());
            }
        }
    }
}

#[test]
fn audit_sees_the_derivations() {
    let all = sources();
    let derive = all.iter().find(|(p, _)| name(p) == "derive.rs").expect("derive.rs");
    assert!(derive.1.contains("hash_fields("));
}
