//! Caption similarity for dense captioning and step localization.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CaptionedSegment;
use crate::metrics::iou;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("embedder returned a malformed response: {0}")]
    BadResponse(String),
    #[error("unmatched-gt score {0} outside [0, 1]")]
    BadConfig(f64),
}

/// Maps texts to fixed-dimension vectors, unit-norm except for empty text.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SimError>;
}

pub const EMBED_DIM: usize = 384;

/// Bag of hashed lowercase word tokens, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackEmbedder;

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn fallback_embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    let lower = text.to_lowercase();
    for tok in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        v[(fnv1a(tok) % EMBED_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl Embedder for FallbackEmbedder {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SimError> {
        Ok(texts.iter().map(|t| fallback_embed(t)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

/// Client for an `/embed` HTTP service.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    max_in_flight: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub const BATCH: usize = 256;
    pub const MAX_TEXT_BYTES: usize = 8192;

    pub fn new(base_url: &str, max_in_flight: usize) -> Result<Self, SimError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| SimError::EmbedderUnavailable(e.to_string()))?;
        Ok(RemoteEmbedder {
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            dim: EMBED_DIM,
            max_in_flight: max_in_flight.max(1),
            client,
        })
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SimError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| SimError::EmbedderUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(SimError::EmbedderUnavailable(format!(
                "{} returned {status}",
                self.url
            )));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| SimError::BadResponse(e.to_string()))?;
        if body.dim != self.dim
            || body.embeddings.len() != texts.len()
            || body.embeddings.iter().any(|v| v.len() != self.dim)
        {
            return Err(SimError::BadResponse(format!(
                "expected {} vectors of dim {}, got {} of dim {}",
                texts.len(),
                self.dim,
                body.embeddings.len(),
                body.dim
            )));
        }
        Ok(body.embeddings)
    }
}

fn truncate_utf8(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_owned();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_owned()
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Chunks of at most 256 texts, at most `max_in_flight` requests at once;
    /// output order matches input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SimError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<String> = texts
            .iter()
            .map(|t| truncate_utf8(t, Self::MAX_TEXT_BYTES))
            .collect();
        let chunks: Vec<&[String]> = texts.chunks(Self::BATCH).collect();
        let mut results: Vec<Option<Result<Vec<Vec<f64>>, SimError>>> =
            (0..chunks.len()).map(|_| None).collect();
        for (wave, slots) in chunks
            .chunks(self.max_in_flight)
            .zip(results.chunks_mut(self.max_in_flight))
        {
            std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|c| s.spawn(move || self.embed_chunk(c)))
                    .collect();
                for (slot, h) in slots.iter_mut().zip(handles) {
                    *slot = Some(h.join().unwrap_or_else(|_| {
                        Err(SimError::EmbedderUnavailable("worker panicked".into()))
                    }));
                }
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r.expect("every chunk ran")?);
        }
        Ok(out)
    }
}

/// Cosine similarity clamped to [0, 1]; 0 when either vector is zero.
pub fn cosine01(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    unmatched_gt_score: f64,
}

impl SimConfig {
    pub fn new(unmatched_gt_score: f64) -> Result<Self, SimError> {
        if (0.0..=1.0).contains(&unmatched_gt_score) {
            Ok(SimConfig { unmatched_gt_score })
        } else {
            Err(SimError::BadConfig(unmatched_gt_score))
        }
    }

    pub fn unmatched_gt_score(&self) -> f64 {
        self.unmatched_gt_score
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            unmatched_gt_score: 0.0,
        }
    }
}

/// One-to-one pairing of gts with preds, greedily by descending IoU
/// (ties by gt index, then pred index); pairs need IoU > 0.
/// Entry `i` holds the pred paired with gt `i`.
pub fn pair_segments(preds: &[CaptionedSegment], gts: &[CaptionedSegment]) -> Vec<Option<usize>> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (g, gs) in gts.iter().enumerate() {
        for (p, ps) in preds.iter().enumerate() {
            let v = iou(&gs.interval, &ps.interval);
            if v > 0.0 {
                cands.push((v, g, p));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut out = vec![None; gts.len()];
    let mut used = vec![false; preds.len()];
    for (_, g, p) in cands {
        if out[g].is_none() && !used[p] {
            out[g] = Some(p);
            used[p] = true;
        }
    }
    out
}

/// Mean over gts of caption similarity with the paired prediction.
pub fn sim_score(
    preds: &[CaptionedSegment],
    gts: &[CaptionedSegment],
    cfg: &SimConfig,
    embedder: &dyn Embedder,
) -> Result<f64, SimError> {
    if gts.is_empty() {
        return Ok(0.0);
    }
    let pairing = pair_segments(preds, gts);
    let mut texts = Vec::new();
    for (g, p) in pairing.iter().enumerate() {
        if let Some(p) = p {
            texts.push(gts[g].caption.clone());
            texts.push(preds[*p].caption.clone());
        }
    }
    let vecs = embedder.embed(&texts)?;
    if vecs.len() != texts.len() {
        return Err(SimError::BadResponse(format!(
            "{} vectors for {} texts",
            vecs.len(),
            texts.len()
        )));
    }
    let matched: f64 = vecs
        .chunks(2)
        .map(|pair| cosine01(&pair[0], &pair[1]))
        .sum();
    let unmatched = pairing.iter().filter(|p| p.is_none()).count() as f64;
    Ok((matched + unmatched * cfg.unmatched_gt_score) / gts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TimeInterval;
    use proptest::prelude::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn seg(a: f64, b: f64, c: &str) -> CaptionedSegment {
        CaptionedSegment {
            interval: TimeInterval::new(a, b).unwrap(),
            caption: c.into(),
        }
    }

    #[test]
    fn fallback_examples() {
        let a = fallback_embed("cut apple");
        assert_eq!(a, fallback_embed("cut apple"));
        assert!((cosine01(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(cosine01(&fallback_embed("abc"), &fallback_embed("")), 0.0);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(fallback_embed("Cut, APPLE!"), a);
    }

    #[test]
    fn pairing_examples() {
        let gts = [seg(0.0, 10.0, "a"), seg(20.0, 30.0, "b")];
        assert_eq!(pair_segments(&gts, &gts), vec![Some(0), Some(1)]);
        assert_eq!(pair_segments(&[], &gts), vec![None, None]);
        // Overlaps gt 0 by 8 s and gt 1 by 2 s.
        let preds = [seg(2.0, 22.0, "x")];
        let oracle = {
            let i0 = iou(&gts[0].interval, &preds[0].interval);
            let i1 = iou(&gts[1].interval, &preds[0].interval);
            if i0 >= i1 {
                vec![Some(0), None]
            } else {
                vec![None, Some(0)]
            }
        };
        assert_eq!(pair_segments(&preds, &gts), oracle);
    }

    #[test]
    fn sim_examples() {
        let cfg = SimConfig::default();
        let gts = [seg(0.0, 10.0, "cut apple"), seg(20.0, 30.0, "wash dishes")];
        assert_eq!(sim_score(&gts, &gts, &cfg, &FallbackEmbedder).unwrap(), 1.0);
        assert_eq!(sim_score(&[], &gts, &cfg, &FallbackEmbedder).unwrap(), 0.0);
        let half = sim_score(&gts[..1], &gts, &cfg, &FallbackEmbedder).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let lenient = SimConfig::new(1.0).unwrap();
        assert_eq!(
            sim_score(&gts[..1], &gts, &lenient, &FallbackEmbedder).unwrap(),
            1.0
        );
        assert!(SimConfig::new(1.5).is_err());
    }

    /// Serves `/embed` with fallback vectors; counts requests.
    fn stub_server(status: u16) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let l = line.to_ascii_lowercase();
                        if let Some(v) = l.strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap();
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let texts: Vec<String> = serde_json::from_value(req["texts"].clone()).unwrap();
                    let embeddings: Vec<Vec<f64>> =
                        texts.iter().map(|t| fallback_embed(t)).collect();
                    let out =
                        serde_json::json!({"dim": EMBED_DIM, "embeddings": embeddings}).to_string();
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{out}",
                        out.len()
                    );
                });
            }
        });
        (format!("http://{addr}"), hits)
    }

    #[test]
    fn remote_embedder_chunks_and_preserves_order() {
        let (url, hits) = stub_server(200);
        let remote = RemoteEmbedder::new(&url, 2).unwrap();
        let texts: Vec<String> = (0..600).map(|i| format!("caption number {i}")).collect();
        let got = remote.embed(&texts).unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        assert_eq!(got, FallbackEmbedder.embed(&texts).unwrap());
    }

    #[test]
    fn remote_errors_are_not_masked() {
        let (url, _) = stub_server(503);
        let remote = RemoteEmbedder::new(&url, 1).unwrap();
        let gts = [seg(0.0, 10.0, "cut apple")];
        let err = sim_score(&gts, &gts, &SimConfig::default(), &remote).unwrap_err();
        assert!(matches!(err, SimError::EmbedderUnavailable(_)));

        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let dead = RemoteEmbedder::new(&format!("http://127.0.0.1:{port}"), 1).unwrap();
        assert!(matches!(
            dead.embed(&["x".to_owned()]),
            Err(SimError::EmbedderUnavailable(_))
        ));
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let s = "é".repeat(5000);
        let t = truncate_utf8(&s, RemoteEmbedder::MAX_TEXT_BYTES);
        assert!(t.len() <= RemoteEmbedder::MAX_TEXT_BYTES);
        assert!(s.starts_with(&t));
    }

    fn arb_segs() -> impl Strategy<Value = Vec<CaptionedSegment>> {
        proptest::collection::vec(
            (
                0.0f64..100.0,
                0.1f64..20.0,
                proptest::sample::select(vec!["cut", "wash", "pour tea", ""]),
            ),
            0..6,
        )
        .prop_map(|v| v.into_iter().map(|(a, l, c)| seg(a, a + l, c)).collect())
    }

    proptest! {
        #[test]
        fn sim_is_bounded_and_pairing_injective(preds in arb_segs(), gts in arb_segs()) {
            let pairing = pair_segments(&preds, &gts);
            let mut seen: Vec<usize> = pairing.iter().flatten().copied().collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
            let s = sim_score(&preds, &gts, &SimConfig::default(), &FallbackEmbedder).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn self_similarity_is_one(gts in arb_segs()) {
            let nonempty: Vec<_> = gts.into_iter().filter(|s| !s.caption.is_empty()).collect();
            prop_assume!(!nonempty.is_empty());
            let s = sim_score(&nonempty, &nonempty, &SimConfig::default(), &FallbackEmbedder).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn gt_order_does_not_matter(
            a in (0.0f64..50.0, 1.0f64..10.0), b in (60.0f64..100.0, 1.0f64..10.0), preds in arb_segs(),
        ) {
            let g1 = seg(a.0, a.0 + a.1, "cut apple");
            let g2 = seg(b.0, b.0 + b.1, "wash dishes");
            let cfg = SimConfig::default();
            let x = sim_score(&preds, &[g1.clone(), g2.clone()], &cfg, &FallbackEmbedder).unwrap();
            let y = sim_score(&preds, &[g2, g1], &cfg, &FallbackEmbedder).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
