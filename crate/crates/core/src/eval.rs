//! Corpus metrics: token error rate, BLEU, length ratio and real-time
//! factor.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Seconds of audio per input frame.
pub const FRAME_SHIFT_SECONDS: f64 = 0.01;
/// Added to the matched count of an n-gram order with no matches.
pub const BLEU_ZERO_MATCH_EPSILON: f64 = 0.1;
pub const BLEU_MAX_ORDER: usize = 4;

/// Token-level Levenshtein distance.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

fn check_aligned(refs: &[Vec<usize>], hyps: &[Vec<usize>]) -> Result<()> {
    if refs.len() != hyps.len() {
        return Err(Error::contract(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    Ok(())
}

/// `(S + D + I) / N` pooled over the corpus.
pub fn wer(refs: &[Vec<usize>], hyps: &[Vec<usize>]) -> Result<f64> {
    check_aligned(refs, hyps)?;
    let n: usize = refs.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::contract("reference corpus has no tokens"));
    }
    let edits: usize = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r, h)).sum();
    Ok(edits as f64 / n as f64)
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU over 1- to 4-grams with brevity penalty, on a 0 to 100
/// scale. An order with no matched n-grams gets 0.1 added to its matched
/// count; an order with no hypothesis n-grams at all makes the score 0.
pub fn bleu(refs: &[Vec<usize>], hyps: &[Vec<usize>]) -> Result<f64> {
    check_aligned(refs, hyps)?;
    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (r, h) in refs.iter().zip(hyps) {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched += c.min(rc.get(g).copied().unwrap_or(0));
            }
            total += h.len().saturating_sub(n - 1);
        }
        if total == 0 {
            return Ok(0.0);
        }
        let m = if matched == 0 {
            BLEU_ZERO_MATCH_EPSILON
        } else {
            matched as f64
        };
        log_precision += (m / total as f64).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_precision / BLEU_MAX_ORDER as f64).exp())
}

/// Total hypothesis tokens over total reference tokens.
pub fn length_ratio(refs: &[Vec<usize>], hyps: &[Vec<usize>]) -> Result<f64> {
    check_aligned(refs, hyps)?;
    let r: usize = refs.iter().map(Vec::len).sum();
    if r == 0 {
        return Err(Error::contract("reference corpus has no tokens"));
    }
    Ok(hyps.iter().map(Vec::len).sum::<usize>() as f64 / r as f64)
}

/// Processing seconds over audio seconds at a 10 ms frame shift.
pub fn rtf(seconds: f64, frames: usize) -> Result<f64> {
    if frames == 0 {
        return Err(Error::contract("rtf needs at least one frame"));
    }
    Ok(seconds / (frames as f64 * FRAME_SHIFT_SECONDS))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub edits: usize,
    pub ref_len: usize,
    pub hyp_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub wer: f64,
    pub bleu: f64,
    pub length_ratio: f64,
    pub rtf: Option<f64>,
    pub utterances: Vec<UtteranceRecord>,
}

impl EvalReport {
    /// Scores `(id, reference, hypothesis)` triples.
    pub fn score(rows: &[(String, Vec<usize>, Vec<usize>)], rtf: Option<f64>) -> Result<Self> {
        let refs: Vec<Vec<usize>> = rows.iter().map(|r| r.1.clone()).collect();
        let hyps: Vec<Vec<usize>> = rows.iter().map(|r| r.2.clone()).collect();
        Ok(Self {
            wer: wer(&refs, &hyps)?,
            bleu: bleu(&refs, &hyps)?,
            length_ratio: length_ratio(&refs, &hyps)?,
            rtf,
            utterances: rows
                .iter()
                .map(|(id, r, h)| UtteranceRecord {
                    id: id.clone(),
                    edits: edit_distance(r, h),
                    ref_len: r.len(),
                    hyp_len: h.len(),
                })
                .collect(),
        })
    }

    /// `metric value` lines, then the per-utterance table when asked.
    pub fn render(&self, per_utterance: bool) -> String {
        let mut out = String::new();
        writeln!(out, "wer\t{}", self.wer).unwrap();
        writeln!(out, "bleu\t{}", self.bleu).unwrap();
        writeln!(out, "length_ratio\t{}", self.length_ratio).unwrap();
        if let Some(r) = self.rtf {
            writeln!(out, "rtf\t{r}").unwrap();
        }
        if per_utterance {
            out.push_str("\n# id\tedits\tref_len\thyp_len\n");
            for u in &self.utterances {
                writeln!(out, "{}\t{}\t{}\t{}", u.id, u.edits, u.ref_len, u.hyp_len).unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: &Path, per_utterance: bool) -> Result<()> {
        std::fs::write(path, self.render(per_utterance)).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<usize> {
        s.split_whitespace().map(|w| w.bytes().next().unwrap() as usize).collect()
    }

    fn corpus(lines: &[&str]) -> Vec<Vec<usize>> {
        lines.iter().map(|l| toks(l)).collect()
    }

    #[test]
    fn wer_examples() {
        let r = corpus(&["a b c"]);
        assert_eq!(wer(&r, &r).unwrap(), 0.0);
        assert!((wer(&r, &corpus(&["a c"])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer(&corpus(&["a b"]), &corpus(&["b a"])).unwrap(), 1.0);
        assert!(wer(&corpus(&[""]), &corpus(&["a"])).is_err());
        assert!(wer(&r, &[]).is_err());
    }

    #[test]
    fn wer_can_exceed_one() {
        assert_eq!(wer(&corpus(&["a"]), &corpus(&["b c d"])).unwrap(), 3.0);
    }

    #[test]
    fn bleu_examples() {
        let r = corpus(&["a b c d", "e f g h i"]);
        assert_eq!(bleu(&r, &r).unwrap(), 100.0);
        assert_eq!(bleu(&r, &corpus(&["", ""])).unwrap(), 0.0);
        let one = bleu(&corpus(&["a b c d"]), &corpus(&["a b c d e"])).unwrap();
        let expected = 100.0 * (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((one - expected).abs() < 1e-12);
        assert!((one - 66.87).abs() < 0.01);
    }

    #[test]
    fn bleu_zero_match_smoothing_and_brevity() {
        // No 4-gram matches: 4-gram precision is 0.1 / 1.
        let s = bleu(&corpus(&["a b c d"]), &corpus(&["a b c e"])).unwrap();
        let expected = 100.0 * (0.75f64 * (2.0 / 3.0) * 0.5 * 0.1).powf(0.25);
        assert!((s - expected).abs() < 1e-12);
        let short = bleu(&corpus(&["a b c d e f"]), &corpus(&["a b c d"])).unwrap();
        assert!((short - 100.0 * (1.0f64 - 1.5).exp()).abs() < 1e-12);
    }

    #[test]
    fn corpus_order_does_not_matter() {
        let r = corpus(&["a b c d e", "f g h", "i j k l"]);
        let h = corpus(&["a b d e", "f g h h", "i k l"]);
        let (mut r2, mut h2) = (r.clone(), h.clone());
        r2.reverse();
        h2.reverse();
        assert_eq!(bleu(&r, &h).unwrap(), bleu(&r2, &h2).unwrap());
        assert_eq!(wer(&r, &h).unwrap(), wer(&r2, &h2).unwrap());
    }

    #[test]
    fn length_ratio_and_rtf() {
        let r = corpus(&["a b", "c d"]);
        assert_eq!(length_ratio(&r, &r).unwrap(), 1.0);
        assert_eq!(length_ratio(&r, &corpus(&["", ""])).unwrap(), 0.0);
        assert_eq!(length_ratio(&r, &corpus(&["a", ""])).unwrap(), 0.25);
        assert!((rtf(1.0, 1000).unwrap() - 0.1).abs() < 1e-15);
        assert!(rtf(1.0, 0).is_err());
    }

    #[test]
    fn report_lines() {
        let rows = vec![("u1".to_string(), toks("a b c d"), toks("a b c d"))];
        let rep = EvalReport::score(&rows, Some(0.5)).unwrap();
        let text = rep.render(true);
        assert!(text.starts_with("wer\t0\nbleu\t100\nlength_ratio\t1\nrtf\t0.5\n"));
        assert!(text.contains("u1\t0\t4\t4"));
    }
}
