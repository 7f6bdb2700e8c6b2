//! Brute-force caption metrics: n-gram lists scanned linearly, LCS by
//! subset enumeration, alignments by exhaustive search.

use vidcap::metrics::EvalPair;

pub fn ngrams(s: &[String], n: usize) -> Vec<&[String]> {
    if s.len() < n {
        Vec::new()
    } else {
        (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
    }
}

pub fn count(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

pub fn bleu_oracle(pairs: &[EvalPair], n_max: usize) -> Vec<f64> {
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        c += p.candidate.len();
        let mut best = usize::MAX;
        for reference in &p.references {
            let len = reference.len();
            let d = len.abs_diff(p.candidate.len());
            if best == usize::MAX || d < best.abs_diff(p.candidate.len()) || (d == best.abs_diff(p.candidate.len()) && len < best) {
                best = len;
            }
        }
        r += best;
        for n in 1..=n_max {
            let cand = ngrams(&p.candidate, n);
            total[n - 1] += cand.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &cand {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let max_ref = p.references.iter().map(|x| count(&ngrams(x, n), g)).max().unwrap();
                matched[n - 1] += count(&cand, g).min(max_ref);
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    (1..=n_max)
        .map(|n| {
            if (0..n).any(|k| matched[k] == 0) {
                return 0.0;
            }
            let logs: f64 = (0..n).map(|k| (matched[k] as f64 / total[k] as f64).ln()).sum();
            bp * (logs / n as f64).exp()
        })
        .collect()
}

pub fn is_subsequence(sub: &[&String], s: &[String]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

/// Every alignment of candidate words to distinct equal reference words.
pub fn alignments(cand: &[String], reference: &[String], i: usize, used: &mut Vec<bool>, map: &mut Vec<Option<usize>>, out: &mut Vec<(usize, usize)>) {
    if i == cand.len() {
        let m = map.iter().flatten().count();
        let mut chunks = 0;
        for k in 0..cand.len() {
            if let Some(j) = map[k] {
                let continues = k > 0 && j > 0 && map[k - 1] == Some(j - 1);
                chunks += usize::from(!continues);
            }
        }
        out.push((m, chunks));
        return;
    }
    map.push(None);
    alignments(cand, reference, i + 1, used, map, out);
    map.pop();
    for j in 0..reference.len() {
        if !used[j] && reference[j] == cand[i] {
            used[j] = true;
            map.push(Some(j));
            alignments(cand, reference, i + 1, used, map, out);
            map.pop();
            used[j] = false;
        }
    }
}

pub fn align_oracle(cand: &[String], reference: &[String]) -> (usize, usize) {
    let mut out = Vec::new();
    alignments(cand, reference, 0, &mut vec![false; reference.len()], &mut Vec::new(), &mut out);
    let m = out.iter().map(|x| x.0).max().unwrap();
    let chunks = out.iter().filter(|x| x.0 == m).map(|x| x.1).min().unwrap();
    (m, chunks)
}

pub fn cider_oracle(pairs: &[EvalPair], n_max: usize) -> Vec<f64> {
    let n_docs = pairs.len() as f64;
    let mut out = vec![0.0; pairs.len()];
    for n in 1..=n_max {
        let df = |g: &[String]| {
            pairs
                .iter()
                .filter(|p| p.references.iter().any(|r| ngrams(r, n).contains(&g)))
                .count()
                .max(1) as f64
        };
        let vector = |s: &[String]| -> Vec<(Vec<String>, f64)> {
            let list = ngrams(s, n);
            let mut v: Vec<(Vec<String>, f64)> = Vec::new();
            for g in &list {
                if !v.iter().any(|(k, _)| k.as_slice() == *g) {
                    v.push((g.to_vec(), count(&list, g) as f64 * (n_docs / df(g)).ln()));
                }
            }
            v
        };
        for (i, p) in pairs.iter().enumerate() {
            let c = vector(&p.candidate);
            let mut total = 0.0;
            for r in &p.references {
                let rv = vector(r);
                let dot: f64 = c
                    .iter()
                    .map(|(k, x)| rv.iter().find(|(k2, _)| k2 == k).map_or(0.0, |(_, y)| x * y))
                    .sum();
                let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                let (na, nb) = (norm(&c), norm(&rv));
                if na > 0.0 && nb > 0.0 {
                    total += dot / (na * nb);
                }
            }
            out[i] += 10.0 * total / p.references.len() as f64 / n_max as f64;
        }
    }
    out
}


/// ROUGE-L F-score against the best reference, LCS by subset enumeration.
pub fn rouge_oracle(cand: &[String], refs: &[Vec<String>], beta: f64) -> f64 {
    let b2 = beta * beta;
    refs.iter()
        .map(|r| {
            let l = lcs_oracle(cand, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (p, rec) = (l / cand.len() as f64, l / r.len() as f64);
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Exact-match METEOR against the best reference, alignment by enumeration.
pub fn meteor_oracle(cand: &[String], refs: &[Vec<String>]) -> f64 {
    refs.iter()
        .map(|r| {
            let (m, chunks) = align_oracle(cand, r);
            if m == 0 {
                return 0.0;
            }
            let (p, rec) = (m as f64 / cand.len() as f64, m as f64 / r.len() as f64);
            let f = p * rec / (0.9 * p + 0.1 * rec);
            f * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
        })
        .fold(0.0, f64::max)
}
