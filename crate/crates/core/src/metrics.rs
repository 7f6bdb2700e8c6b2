//! Caption scoring: corpus BLEU-1..4, ROUGE-L, exact-match METEOR and CIDEr.
//!
//! All metrics take tokenized candidates and references. Per-pair work runs
//! in parallel; reductions happen in pair order.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::{Error, Result};

/// A generated caption and the references for its video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub video_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(video_id: impl Into<String>, candidate: Vec<String>, references: Vec<Vec<String>>) -> Self {
        Self {
            video_id: video_id.into(),
            candidate,
            references,
        }
    }
}

fn check_pairs(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::usage("cannot score an empty corpus"));
    }
    if let Some(p) = pairs.iter().find(|p| p.references.is_empty()) {
        return Err(Error::usage(format!("video {} has no references", p.video_id)));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Clipped matches and candidate n-gram totals for one pair, per order.
fn bleu_stats(pair: &EvalPair, n_max: usize) -> Vec<(usize, usize)> {
    (1..=n_max)
        .map(|n| {
            let cand = ngram_counts(&pair.candidate, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &pair.references {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            let matched = cand
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            (matched, pair.candidate.len().saturating_sub(n - 1))
        })
        .collect()
}

/// Corpus BLEU-1..`n_max` with uniform weights, no smoothing.
///
/// An order with no candidate n-grams, or no matches, makes that BLEU-n and
/// every higher order 0.
pub fn bleu(pairs: &[EvalPair], n_max: usize) -> Result<Vec<f64>> {
    check_pairs(pairs)?;
    if !(1..=4).contains(&n_max) {
        return Err(Error::usage(format!("BLEU order must be in 1..=4, got {n_max}")));
    }
    let stats: Vec<Vec<(usize, usize)>> = pairs.par_iter().map(|p| bleu_stats(p, n_max)).collect();
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    for s in &stats {
        for (k, &(m, t)) in s.iter().enumerate() {
            matched[k] += m;
            total[k] += t;
        }
    }
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let r: usize = pairs
        .iter()
        .map(|p| closest_ref_len(p.candidate.len(), &p.references))
        .sum();
    if c == 0 {
        return Ok(vec![0.0; n_max]);
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let mut out = Vec::with_capacity(n_max);
    let mut log_sum = 0.0;
    let mut zero = false;
    for k in 0..n_max {
        if matched[k] == 0 || total[k] == 0 {
            zero = true;
        } else {
            log_sum += (matched[k] as f64 / total[k] as f64).ln();
        }
        out.push(if zero {
            0.0
        } else {
            bp * (log_sum / (k + 1) as f64).exp()
        });
    }
    Ok(out)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// Sentence ROUGE-L F-score against the best-matching reference.
pub fn rouge_l_pair(candidate: &[String], references: &[Vec<String>], beta: f64) -> f64 {
    references
        .iter()
        .map(|r| {
            let l = lcs_len(candidate, r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rec = l as f64 / r.len() as f64;
            let b2 = beta * beta;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn rouge_l_with_beta(pairs: &[EvalPair], beta: f64) -> Result<f64> {
    check_pairs(pairs)?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| rouge_l_pair(&p.candidate, &p.references, beta))
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Corpus mean ROUGE-L with β = 1.2.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    rouge_l_with_beta(pairs, ROUGE_BETA)
}

/// Exact unigram alignment of maximum size, and among those the fewest
/// chunks. Returns `(matches, chunks)`.
pub fn align_exact(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let mut cand_left: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *cand_left.entry(t).or_insert(0) += 1;
    }
    let mut ref_count: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *ref_count.entry(t).or_insert(0) += 1;
    }
    let m: usize = cand_left
        .iter()
        .map(|(t, &c)| c.min(ref_count.get(t).copied().unwrap_or(0)))
        .sum();
    if m == 0 {
        return (0, 0);
    }
    if reference.len() > 128 {
        return (m, greedy_chunks(candidate, reference));
    }

    // Search over candidate positions, choosing for each either no match or
    // an unused reference position with the same token, keeping only
    // branches that can still reach `m` matches.
    struct Search<'a> {
        cand: &'a [String],
        reference: &'a [String],
        m: usize,
        memo: HashMap<(usize, u128, usize), Option<usize>>,
    }
    impl Search<'_> {
        fn reachable(&self, i: usize, used: u128) -> usize {
            let mut need: HashMap<&str, usize> = HashMap::new();
            for t in &self.cand[i..] {
                *need.entry(t).or_insert(0) += 1;
            }
            need.iter()
                .map(|(t, &c)| {
                    let free = self
                        .reference
                        .iter()
                        .enumerate()
                        .filter(|(j, r)| used & (1 << j) == 0 && r.as_str() == *t)
                        .count();
                    c.min(free)
                })
                .sum()
        }

        /// Fewest chunks still to open from position `i`; `prev` is the
        /// reference position matched by `i − 1` plus two, or 0.
        fn go(&mut self, i: usize, used: u128, prev: usize) -> Option<usize> {
            let done = used.count_ones() as usize;
            if done == self.m {
                return Some(0);
            }
            if i == self.cand.len() || done + self.reachable(i, used) < self.m {
                return None;
            }
            if let Some(&v) = self.memo.get(&(i, used, prev)) {
                return v;
            }
            let mut best = self.go(i + 1, used, 0);
            for j in 0..self.reference.len() {
                if used & (1 << j) == 0 && self.reference[j] == self.cand[i] {
                    let opens = usize::from(prev != j + 1);
                    if let Some(rest) = self.go(i + 1, used | (1 << j), j + 2) {
                        let total = rest + opens;
                        best = Some(best.map_or(total, |b| b.min(total)));
                    }
                }
            }
            self.memo.insert((i, used, prev), best);
            best
        }
    }
    let mut s = Search {
        cand: candidate,
        reference,
        m,
        memo: HashMap::new(),
    };
    let chunks = s.go(0, 0, 0).expect("maximum matching is reachable");
    (m, chunks)
}

fn greedy_chunks(candidate: &[String], reference: &[String]) -> usize {
    let mut used = vec![false; reference.len()];
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for t in candidate {
        let pick = prev
            .map(|p| p + 1)
            .filter(|&j| j < reference.len() && !used[j] && &reference[j] == t)
            .or_else(|| (0..reference.len()).find(|&j| !used[j] && &reference[j] == t));
        match pick {
            Some(j) => {
                chunks += usize::from(prev.is_none_or(|p| p + 1 != j));
                used[j] = true;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}

/// Exact-match METEOR of one candidate against one reference.
pub fn meteor_single(candidate: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = align_exact(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor_pair(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| meteor_single(candidate, r))
        .fold(0.0, f64::max)
}

/// Corpus mean of per-pair exact-match METEOR (best reference per pair).
pub fn meteor_exact(pairs: &[EvalPair]) -> Result<f64> {
    check_pairs(pairs)?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| meteor_pair(&p.candidate, &p.references))
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

type TfIdf<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(&[String]) -> f64) -> TfIdf<'a> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, c)| (g, c as f64 * idf(g)))
        .collect()
}

fn cosine(a: &TfIdf<'_>, b: &TfIdf<'_>) -> f64 {
    let norm = |v: &TfIdf<'_>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // Sum in a fixed key order so the score does not depend on hash order.
    let mut shared: Vec<(&[String], f64)> = a
        .iter()
        .filter_map(|(g, x)| b.get(g).map(|y| (*g, x * y)))
        .collect();
    shared.sort_unstable_by(|x, y| x.0.cmp(y.0));
    shared.iter().map(|(_, v)| v).sum::<f64>() / (na * nb)
}

/// Per-pair CIDEr scores, n = 1..=`n_max`.
///
/// IDF is `ln(N / max(1, df))`, with `N` the number of pairs and `df` the
/// number of pairs whose references contain the n-gram.
pub fn cider_scores(pairs: &[EvalPair], n_max: usize) -> Result<Vec<f64>> {
    check_pairs(pairs)?;
    if pairs.len() < 2 {
        return Err(Error::usage(
            "CIDEr needs at least 2 videos: with one, every reference n-gram has IDF ln(1/1) = 0",
        ));
    }
    if n_max == 0 {
        return Err(Error::usage("CIDEr order must be at least 1"));
    }
    let n_docs = pairs.len() as f64;
    let mut per_n = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for p in pairs {
            let mut seen: Vec<&[String]> = p.references.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| (n_docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        let scores: Vec<f64> = pairs
            .par_iter()
            .map(|p| {
                let cand = tfidf(&p.candidate, n, &idf);
                let total: f64 = p
                    .references
                    .iter()
                    .map(|r| cosine(&cand, &tfidf(r, n, &idf)))
                    .sum();
                total / p.references.len() as f64
            })
            .collect();
        per_n.push(scores);
    }
    Ok((0..pairs.len())
        .map(|i| 10.0 * per_n.iter().map(|s| s[i]).sum::<f64>() / n_max as f64)
        .collect())
}

/// Corpus CIDEr: mean of per-pair scores.
pub fn cider(pairs: &[EvalPair], n_max: usize) -> Result<f64> {
    let s = cider_scores(pairs, n_max)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoScores {
    pub video_id: String,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub per_video: Vec<VideoScores>,
}

pub const REPORT_HEADER: &str = "RNN\tBleu1\tBleu2\tBleu3\tBleu4\tMETEOR-ex\tROUGE_L\tCIDEr";

impl ScoreReport {
    /// Column values in report order.
    pub fn columns(&self) -> [f64; 7] {
        let b = self.bleu;
        [b[0], b[1], b[2], b[3], self.meteor, self.rouge_l, self.cider]
    }

    pub fn tsv_row(&self, label: &str) -> String {
        let mut s = label.to_string();
        for v in self.columns() {
            write!(s, "\t{v:.4}").unwrap();
        }
        s
    }

    pub fn per_video_tsv(&self) -> String {
        let mut s = String::from("video_id\tBleu4\tMETEOR-ex\tROUGE_L\tCIDEr\n");
        for v in &self.per_video {
            writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                v.video_id, v.bleu4, v.meteor, v.rouge_l, v.cider
            )
            .unwrap();
        }
        s
    }
}

/// Header plus one row per `(label, report)`.
pub fn report_table(rows: &[(String, ScoreReport)]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for (label, r) in rows {
        writeln!(s, "{}", r.tsv_row(label)).unwrap();
    }
    s
}

/// All metrics over a corpus; per-video BLEU-4 is sentence-level.
pub fn evaluate_corpus(pairs: &[EvalPair]) -> Result<ScoreReport> {
    let b = bleu(pairs, 4)?;
    let cider_each = cider_scores(pairs, 4)?;
    let per_video: Vec<VideoScores> = pairs
        .par_iter()
        .zip(cider_each.par_iter())
        .map(|(p, &c)| {
            let single = std::slice::from_ref(p);
            Ok(VideoScores {
                video_id: p.video_id.clone(),
                bleu4: bleu(single, 4)?[3],
                meteor: meteor_pair(&p.candidate, &p.references),
                rouge_l: rouge_l_pair(&p.candidate, &p.references, ROUGE_BETA),
                cider: c,
            })
        })
        .collect::<Result<_>>()?;
    let n = per_video.len() as f64;
    Ok(ScoreReport {
        bleu: [b[0], b[1], b[2], b[3]],
        meteor: per_video.iter().map(|v| v.meteor).sum::<f64>() / n,
        rouge_l: per_video.iter().map(|v| v.rouge_l).sum::<f64>() / n,
        cider: cider_each.iter().sum::<f64>() / n,
        per_video,
    })
}
