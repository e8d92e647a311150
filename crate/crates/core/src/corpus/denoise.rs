use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::index;
use rand::Rng;

use super::{tag_tokens, EncodedPair, Tokenizer};
use crate::error::{Error, Result};
use crate::lang::LangCode;

/// Span-corrupted input and the sentinel-delimited target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    pub spans: Vec<Range<usize>>,
}

/// Replace each span with the next sentinel; the target lists
/// `sentinel_k ++ span_k` for every span in order.
pub fn corrupt_spans(tokens: &[u32], spans: &[Range<usize>], sentinels: &[u32]) -> Result<Corruption> {
    if spans.len() > sentinels.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} spans but only {} sentinels",
            spans.len(),
            sentinels.len()
        )));
    }
    let mut prev_end = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.start >= s.end || s.end > tokens.len() || (i > 0 && s.start < prev_end) {
            return Err(Error::InvalidArgument(alloc::format!("bad span {s:?}")));
        }
        prev_end = s.end;
    }
    let mut input = Vec::with_capacity(tokens.len());
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, s) in spans.iter().enumerate() {
        input.extend_from_slice(&tokens[pos..s.start]);
        input.push(sentinels[k]);
        target.push(sentinels[k]);
        target.extend_from_slice(&tokens[s.clone()]);
        pos = s.end;
    }
    input.extend_from_slice(&tokens[pos..]);
    Ok(Corruption {
        input,
        target,
        spans: spans.to_vec(),
    })
}

/// Splice target spans back into the sentinel positions of `input`.
pub fn reconstruct(input: &[u32], target: &[u32], sentinels: &[u32]) -> Option<Vec<u32>> {
    let sentinel_index = |t: u32| sentinels.iter().position(|s| *s == t);
    let mut segments: Vec<(usize, &[u32])> = Vec::new();
    let mut i = 0;
    while i < target.len() {
        let k = sentinel_index(target[i])?;
        let start = i + 1;
        let mut end = start;
        while end < target.len() && sentinel_index(target[end]).is_none() {
            end += 1;
        }
        segments.push((k, &target[start..end]));
        i = end;
    }
    let mut out = Vec::with_capacity(input.len() + target.len());
    for &t in input {
        match sentinel_index(t) {
            Some(k) => out.extend_from_slice(segments.iter().find(|(sk, _)| *sk == k)?.1),
            None => out.push(t),
        }
    }
    Some(out)
}

/// Random span corruption of about `corruption_rate * len` tokens in spans of
/// mean length `mean_span`.
///
/// The noise count is `round(len * rate)` (at least one token, and at least one
/// token kept when `len >= 2`); the span count is `round(noise / mean_span)`
/// limited by the available sentinels and by the kept tokens needed to
/// separate spans.
pub fn span_corrupt<R: Rng + ?Sized>(
    tokens: &[u32],
    corruption_rate: f64,
    mean_span: f64,
    sentinels: &[u32],
    rng: &mut R,
) -> Result<Corruption> {
    if !(corruption_rate > 0.0 && corruption_rate < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "corruption rate {corruption_rate} outside (0, 1)"
        )));
    }
    if mean_span.is_nan() || mean_span < 1.0 {
        return Err(Error::InvalidArgument(alloc::format!("mean span {mean_span} below 1")));
    }
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("nothing to corrupt".into()));
    }
    if sentinels.is_empty() {
        return Err(Error::InvalidArgument("no sentinel tokens".into()));
    }
    let n = tokens.len();
    let max_noise = if n >= 2 { n - 1 } else { 1 };
    let noise = (libm::round(n as f64 * corruption_rate) as usize).clamp(1, max_noise);
    let kept = n - noise;
    let spans = (libm::round(noise as f64 / mean_span) as usize).clamp(1, noise.min(kept + 1).min(sentinels.len()));

    let noise_lengths = positive_partition(noise, spans, rng);
    // spans - 1 separating gaps of at least one token; the rest spread over
    // the leading gap, the separating gaps and the tail.
    let extra = kept - (spans - 1);
    let gaps = nonnegative_partition(extra, spans + 1, rng);

    let mut ranges = Vec::with_capacity(spans);
    let mut pos = gaps[0];
    for (k, len) in noise_lengths.iter().enumerate() {
        ranges.push(pos..pos + len);
        pos += len;
        if k + 1 < spans {
            pos += 1 + gaps[k + 1];
        }
    }
    debug_assert_eq!(pos + gaps[spans], n);
    corrupt_spans(tokens, &ranges, sentinels)
}

/// `total` split into `parts` positive integers, uniformly over compositions.
fn positive_partition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    let mut cuts: Vec<usize> = index::sample(rng, total - 1, parts - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

/// `total` split into `parts` non-negative integers (stars and bars).
fn nonnegative_partition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    let slots = total + parts - 1;
    let mut bars: Vec<usize> = index::sample(rng, slots, parts - 1).into_iter().collect();
    bars.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev: isize = -1;
    for b in bars {
        out.push((b as isize - prev - 1) as usize);
        prev = b as isize;
    }
    out.push((slots as isize - prev - 1) as usize);
    out
}

/// Tagged denoising example from monolingual text.
#[allow(clippy::too_many_arguments)]
pub fn denoising_pair<T: Tokenizer + ?Sized, R: Rng + ?Sized>(
    text: &str,
    lang: &LangCode,
    tokenizer: &T,
    corruption_rate: f64,
    mean_span: f64,
    max_source_len: usize,
    rng: &mut R,
) -> Result<EncodedPair> {
    let mut tokens = tokenizer.encode(text);
    tokens.truncate(max_source_len);
    let sentinels = tokenizer.sentinels();
    let c = span_corrupt(&tokens, corruption_rate, mean_span, &sentinels, rng)?;
    let input = tag_tokens(&c.input, lang, tokenizer, max_source_len)?;
    let mut target = c.target;
    target.push(tokenizer.eos_id());
    Ok(EncodedPair { input, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SENT: [u32; 8] = [100, 101, 102, 103, 104, 105, 106, 107];

    #[test]
    fn fixed_span_two_to_four() {
        let tokens = [10, 11, 12, 13, 14, 15];
        let c = corrupt_spans(&tokens, &[2..4], &SENT).unwrap();
        assert_eq!(c.input, vec![10, 11, 100, 14, 15]);
        assert_eq!(c.target, vec![100, 12, 13]);
        assert_eq!(reconstruct(&c.input, &c.target, &SENT).unwrap(), tokens);
    }

    #[test]
    fn rate_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(span_corrupt(&[1, 2, 3], 1.5, 3.0, &SENT, &mut rng).is_err());
        assert!(span_corrupt(&[1, 2, 3], 0.0, 3.0, &SENT, &mut rng).is_err());
        assert!(span_corrupt(&[], 0.15, 3.0, &SENT, &mut rng).is_err());
    }

    #[test]
    fn overlapping_spans_rejected() {
        assert!(corrupt_spans(&[1, 2, 3, 4], &[0..2, 1..3], &SENT).is_err());
        assert!(corrupt_spans(&[1, 2, 3, 4], &[3..5], &SENT).is_err());
    }

    #[test]
    fn monte_carlo_noise_budget() {
        // 100 tokens at rate 0.15 and mean span 3: 15 noise tokens in 5 spans.
        let tokens: Vec<u32> = (0..100).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 1000;
        let (mut noise, mut spans) = (0usize, 0usize);
        for _ in 0..draws {
            let c = span_corrupt(&tokens, 0.15, 3.0, &SENT, &mut rng).unwrap();
            noise += c.spans.iter().map(|s| s.len()).sum::<usize>();
            spans += c.spans.len();
        }
        let mean_noise = noise as f64 / draws as f64;
        let mean_spans = spans as f64 / draws as f64;
        assert!((mean_noise - 15.0).abs() <= 1.5, "{mean_noise}");
        assert!((mean_spans - 5.0).abs() <= 0.5, "{mean_spans}");
        assert!((mean_noise / mean_spans - 3.0).abs() <= 0.3);
    }

    #[test]
    fn partitions_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = positive_partition(10, 4, &mut rng);
            assert_eq!(p.iter().sum::<usize>(), 10);
            assert!(p.iter().all(|x| *x >= 1));
            let q = nonnegative_partition(5, 3, &mut rng);
            assert_eq!(q.len(), 3);
            assert_eq!(q.iter().sum::<usize>(), 5);
        }
        assert_eq!(nonnegative_partition(0, 3, &mut rng), vec![0, 0, 0]);
    }

    proptest! {
        #[test]
        fn reconstruction_identity(
            tokens in proptest::collection::vec(0u32..50, 1..80),
            rate in 0.01f64..0.99,
            mean in 1.0f64..6.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = span_corrupt(&tokens, rate, mean, &SENT, &mut rng).unwrap();
            prop_assert!(!c.spans.is_empty());
            prop_assert_eq!(reconstruct(&c.input, &c.target, &SENT).unwrap(), tokens);
        }
    }
}
