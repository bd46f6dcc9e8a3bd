//! Brute-force reference scorer.
//!
//! A literal nested-loop evaluation over the four raw text inputs, sharing no
//! parsing or scoring code with the main pipeline: linear searches instead of
//! maps, its own field splitting and clock parsing. It applies the same
//! conventions (per-pid deduplication, one-level library propagation, full
//! credit to every owner, an `(unowned)` bucket) so the two can be compared
//! number for number. Lines it cannot read are skipped.

use std::collections::BTreeMap;

use crate::scorer::ScoreConfig;

const UNOWNED_BUCKET: &str = "(unowned)";

/// `(s_fs, s_ps, total)` per file and total per package.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleResult {
    pub files: BTreeMap<String, (f64, f64, f64)>,
    pub packages: BTreeMap<String, f64>,
}

fn digits(s: &str) -> Option<u64> {
    let mut n: u64 = 0;
    if s.is_empty() {
        return None;
    }
    for c in s.chars() {
        let d = c.to_digit(10)?;
        n = n.checked_mul(10)?.checked_add(d as u64)?;
    }
    Some(n)
}

/// `path,a,b,c` with commas allowed in the path.
fn four_fields(line: &str) -> Option<(String, String, String, String)> {
    let commas: Vec<usize> = line.char_indices().filter(|(_, c)| *c == ',').map(|(i, _)| i).collect();
    if commas.len() < 3 {
        return None;
    }
    let k = commas.len();
    let (c1, c2, c3) = (commas[k - 3], commas[k - 2], commas[k - 1]);
    Some((
        line[..c1].to_string(),
        line[c1 + 1..c2].to_string(),
        line[c2 + 1..c3].to_string(),
        line[c3 + 1..].to_string(),
    ))
}

fn clock_seconds(text: &str) -> Option<u64> {
    let mut days = 0;
    let mut clock = text;
    let has_days = text.contains('-');
    if has_days {
        let pos = text.find('-')?;
        days = digits(&text[..pos])?;
        clock = &text[pos + 1..];
    }
    let pieces: Vec<&str> = clock.split(':').collect();
    let mut hours = 0;
    let minutes;
    let seconds;
    if pieces.len() == 3 {
        hours = digits(pieces[0])?;
        minutes = digits(pieces[1])?;
        seconds = digits(pieces[2])?;
    } else if pieces.len() == 2 && !has_days {
        minutes = digits(pieces[0])?;
        seconds = digits(pieces[1])?;
    } else {
        return None;
    }
    if minutes >= 60 || seconds >= 60 || (has_days && hours >= 24) {
        return None;
    }
    Some(days * 86_400 + hours * 3_600 + minutes * 60 + seconds)
}

fn find<'a, V>(list: &'a mut Vec<(String, V)>, key: &str, init: V) -> &'a mut V {
    let mut at = None;
    for (i, (k, _)) in list.iter().enumerate() {
        if k == key {
            at = Some(i);
            break;
        }
    }
    let i = match at {
        Some(i) => i,
        None => {
            list.push((key.to_string(), init));
            list.len() - 1
        }
    };
    &mut list[i].1
}

fn text_lines(text: &str) -> impl Iterator<Item = &str> {
    text.split('\n').map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty())
}

pub fn oracle_score(refsinfo: &str, psinfo: &str, manifest: &str, depmap: &str, cfg: &ScoreConfig) -> OracleResult {
    // kernel counts, summed over duplicate lines
    let mut kmap: Vec<(String, [u64; 3])> = Vec::new();
    for line in text_lines(refsinfo) {
        let Some((name, a, b, c)) = four_fields(line) else { continue };
        let (Some(a), Some(b), Some(c)) = (digits(&a), digits(&b), digits(&c)) else { continue };
        if !name.starts_with('/') {
            continue;
        }
        let v = find(&mut kmap, &name, [0, 0, 0]);
        v[0] += a;
        v[1] += b;
        v[2] += c;
    }

    let mut smap: Vec<(String, [f64; 3])> = Vec::new();
    for (name, v) in &kmap {
        let (nopen, nread, nclose) = (v[0] as f64, v[1] as f64, v[2] as f64);
        let mut diff = nopen - nclose;
        if cfg.clamp_net_open && diff < 0.0 {
            diff = 0.0;
        }
        let score1 = cfg.open_bonus * diff + cfg.w_open * nopen + cfg.w_read * nread + cfg.w_close * nclose;
        find(&mut smap, name, [0.0; 3])[0] = score1;
    }

    // latest sample per pid: (exe, pid, elapsed, cpu)
    let mut kept: Vec<(String, u64, u64, u64)> = Vec::new();
    for line in text_lines(psinfo) {
        let Some((exe, et, pid, ct)) = four_fields(line) else { continue };
        let (Some(te), Some(pid), Some(tc)) = (clock_seconds(&et), digits(&pid), clock_seconds(&ct)) else {
            continue;
        };
        if !exe.starts_with('/') || pid == 0 || pid > u32::MAX as u64 {
            continue;
        }
        let mut slot = None;
        for (i, k) in kept.iter().enumerate() {
            if k.1 == pid {
                slot = Some(i);
            }
        }
        match slot {
            None => kept.push((exe, pid, te, tc)),
            Some(i) => {
                let old = &kept[i];
                let replace = te > old.2 || (te == old.2 && tc > old.3) || (te == old.2 && tc == old.3 && exe < old.0);
                if replace {
                    kept[i] = (exe, pid, te, tc);
                }
            }
        }
    }

    let mut dep_lines: Vec<(String, String)> = Vec::new();
    for line in text_lines(depmap) {
        if let Some((exe, lib)) = line.split_once('\t') {
            if exe != lib {
                dep_lines.push((exe.to_string(), lib.to_string()));
            }
        }
    }

    let mut exes_done: Vec<String> = Vec::new();
    for (exe, _, _, _) in &kept {
        if exes_done.contains(exe) {
            continue;
        }
        exes_done.push(exe.clone());
        let mut score2 = 0.0;
        for (other, _, te, tc) in &kept {
            if other == exe {
                score2 += cfg.w_elapsed * *te as f64 + cfg.w_cpu * *tc as f64;
            }
        }
        find(&mut smap, exe, [0.0; 3])[1] += score2;
        if score2 > 0.0 {
            let mut seen: Vec<&str> = Vec::new();
            for (e, lib) in &dep_lines {
                if e == exe && !seen.contains(&lib.as_str()) {
                    seen.push(lib);
                    find(&mut smap, lib, [0.0; 3])[1] += score2;
                }
            }
        }
    }

    for (_, v) in smap.iter_mut() {
        v[2] = cfg.w_f * v[0] + cfg.w_r * v[1];
    }

    let mut pkg_lines: Vec<(String, String)> = Vec::new();
    for line in text_lines(manifest) {
        if let Some((pkg, path)) = line.split_once('\t') {
            pkg_lines.push((pkg.to_string(), path.to_string()));
        }
    }
    let mut pmap: Vec<(String, f64)> = Vec::new();
    for (pkg, _) in &pkg_lines {
        find(&mut pmap, pkg, 0.0);
    }
    for (path, v) in &smap {
        let mut owners: Vec<&str> = Vec::new();
        for (pkg, p) in &pkg_lines {
            if p == path && !owners.contains(&pkg.as_str()) {
                owners.push(pkg);
            }
        }
        if owners.is_empty() {
            owners.push(UNOWNED_BUCKET);
        }
        for owner in owners {
            *find(&mut pmap, owner, 0.0) += v[2];
        }
    }

    OracleResult {
        files: smap.into_iter().map(|(k, v)| (k, (v[0], v[1], v[2]))).collect(),
        packages: pmap.into_iter().collect(),
    }
}
