//! Corpus caption metrics: BLEU-1..4, ROUGE-L and CIDEr-D.
//!
//! Inputs are pre-tokenized; [`tokenize`] lowercases and splits on
//! whitespace. N-gram tables are ordered maps so every floating-point sum
//! runs in the same order on every run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_N: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("input error: {0}")]
    Input(String),
}

type Result<T> = std::result::Result<T, MetricError>;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = Counts::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_corpus(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<()> {
    if cands.is_empty() {
        return Err(MetricError::Input("empty candidate set".into()));
    }
    if cands.len() != refs.len() {
        return Err(MetricError::Input(format!(
            "{} candidates but {} reference sets",
            cands.len(),
            refs.len()
        )));
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(MetricError::Input(format!(
            "candidate {i} has no references"
        )));
    }
    Ok(())
}

/// Clipped n-gram matches and candidate n-gram totals for orders 1..=max_n.
struct BleuStats {
    matches: [usize; MAX_N],
    totals: [usize; MAX_N],
    cand_len: usize,
    ref_len: usize,
}

fn bleu_stats(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> BleuStats {
    let mut s = BleuStats {
        matches: [0; MAX_N],
        totals: [0; MAX_N],
        cand_len: 0,
        ref_len: 0,
    };
    for (c, rs) in cands.iter().zip(refs) {
        s.cand_len += c.len();
        // Closest reference length; ties go to the shorter one.
        s.ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c.len()), l))
            .unwrap_or(0);
        for n in 1..=MAX_N {
            let cc = ngrams(c, n);
            let mut max_ref: Counts = Counts::new();
            for r in rs {
                for (g, k) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &cc {
                s.matches[n - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
                s.totals[n - 1] += k;
            }
        }
    }
    s
}

impl BleuStats {
    fn score(&self, n: usize) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        let bp = if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * (log_sum / n as f64).exp()
    }
}

/// Corpus BLEU-`n` with uniform weights, the closest-reference brevity
/// penalty and no smoothing: any zero precision gives 0.
pub fn bleu(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], n: usize) -> Result<f64> {
    if !(1..=MAX_N).contains(&n) {
        return Err(MetricError::Input(format!(
            "BLEU order {n} is outside 1..=4"
        )));
    }
    check_corpus(cands, refs)?;
    Ok(bleu_stats(cands, refs).score(n))
}

/// BLEU-1 through BLEU-4 from one counting pass.
pub fn bleu_all(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<[f64; MAX_N]> {
    check_corpus(cands, refs)?;
    let s = bleu_stats(cands, refs);
    Ok([s.score(1), s.score(2), s.score(3), s.score(4)])
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L: best precision and best recall over the references,
/// combined as an F-measure with β = 1.2.
pub fn rouge_l(cand: &[String], refs: &[Vec<String>]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in refs.iter().filter(|x| !x.is_empty()) {
        let l = lcs_len(cand, reference) as f64;
        p = p.max(l / cand.len() as f64);
        r = r.max(l / reference.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L over the corpus.
pub fn rouge_l_corpus(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    check_corpus(cands, refs)?;
    Ok(cands
        .iter()
        .zip(refs)
        .map(|(c, r)| rouge_l(c, r))
        .sum::<f64>()
        / cands.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderResult {
    pub score: f64,
    pub per_image: Vec<f64>,
    /// Set when the corpus has a single image, where every IDF weight is 0.
    pub degenerate: bool,
}

struct TfIdf {
    /// One weight table per n-gram order.
    vec: Vec<BTreeMap<Vec<String>, f64>>,
    norm: [f64; MAX_N],
    len: usize,
}

fn tf_idf(tokens: &[String], df: &BTreeMap<Vec<String>, usize>, log_n: f64) -> TfIdf {
    let mut vec = vec![BTreeMap::new(); MAX_N];
    let mut norm = [0.0; MAX_N];
    for n in 1..=MAX_N {
        for (g, k) in ngrams(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = k as f64 * (log_n - d.ln());
            norm[n - 1] += w * w;
            vec[n - 1].insert(g.to_vec(), w);
        }
    }
    TfIdf {
        vec,
        norm: norm.map(f64::sqrt),
        len: tokens.len(),
    }
}

fn cider_sim(h: &TfIdf, r: &TfIdf) -> f64 {
    let delta = h.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..MAX_N {
        let mut v = 0.0;
        for (g, &wh) in &h.vec[n] {
            if let Some(&wr) = r.vec[n].get(g) {
                v += wh.min(wr) * wr;
            }
        }
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            v /= h.norm[n] * r.norm[n];
        }
        total += v * penalty;
    }
    total / MAX_N as f64
}

/// CIDEr-D with document frequencies over the reference corpus, clipped
/// TF-IDF cosines, a Gaussian length penalty (σ = 6) and the ×10 scale.
pub fn cider_d(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<CiderResult> {
    check_corpus(cands, refs)?;
    let mut df: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for rs in refs {
        let mut seen: BTreeSet<&[String]> = BTreeSet::new();
        for r in rs {
            for n in 1..=MAX_N {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    let log_n = (refs.len() as f64).ln();
    let per_image: Vec<f64> = cands
        .iter()
        .zip(refs)
        .map(|(c, rs)| {
            let h = tf_idf(c, &df, log_n);
            let sum: f64 = rs
                .iter()
                .map(|r| cider_sim(&h, &tf_idf(r, &df, log_n)))
                .sum();
            10.0 * sum / rs.len() as f64
        })
        .collect();
    Ok(CiderResult {
        score: per_image.iter().sum::<f64>() / per_image.len() as f64,
        per_image,
        degenerate: refs.len() < 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub candidate: String,
    pub rouge_l: f64,
    pub cider_d: f64,
}

/// Scores rounded to four decimals for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub per_image: Vec<ImageScore>,
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Scores a corpus. `ids` name each image in the per-image breakdown.
pub fn evaluate(
    ids: &[String],
    cands: &[Vec<String>],
    refs: &[Vec<Vec<String>>],
) -> Result<EvalReport> {
    check_corpus(cands, refs)?;
    if ids.len() != cands.len() {
        return Err(MetricError::Input(format!(
            "{} ids for {} candidates",
            ids.len(),
            cands.len()
        )));
    }
    let b = bleu_all(cands, refs)?;
    let cider = cider_d(cands, refs)?;
    let rouge: Vec<f64> = cands.iter().zip(refs).map(|(c, r)| rouge_l(c, r)).collect();
    let mut warnings = Vec::new();
    if cider.degenerate {
        warnings.push("single-image corpus: CIDEr-D IDF weights are all zero".to_string());
    }
    Ok(EvalReport {
        bleu1: round4(b[0]),
        bleu2: round4(b[1]),
        bleu3: round4(b[2]),
        bleu4: round4(b[3]),
        rouge_l: round4(rouge.iter().sum::<f64>() / rouge.len() as f64),
        cider_d: round4(cider.score),
        warnings,
        per_image: ids
            .iter()
            .zip(cands)
            .zip(rouge.iter().zip(&cider.per_image))
            .map(|((id, c), (&r, &cd))| ImageScore {
                id: id.clone(),
                candidate: c.join(" "),
                rouge_l: round4(r),
                cider_d: round4(cd),
            })
            .collect(),
    })
}
