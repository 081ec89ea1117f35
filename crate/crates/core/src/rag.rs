//! Chunking, exact cosine retrieval and answer-prompt assembly over the
//! intersection document.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::RagError;
use crate::gateway::{Embedder, LanguageModel, ModelUsage};
use crate::types::{format_timestamp, IntersectionDocument};

pub const DEFAULT_CHUNK_CHARS: usize = 1200;
pub const DEFAULT_TOP_K: usize = 4;
pub const DEFAULT_ANSWER_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub chunk_id: u64,
    pub text: String,
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl KnowledgeChunk {
    pub fn timestamp(&self) -> String {
        format_timestamp(self.start_ms)
    }
}

/// Splits after each sentence terminator and the whitespace following it.
/// The pieces concatenate back to `text`.
fn sentence_pieces(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let next_ws = iter.peek().is_none_or(|(_, n)| n.is_whitespace());
        if !next_ws {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, n)) = iter.peek() {
            if !n.is_whitespace() {
                break;
            }
            end = j + n.len_utf8();
            iter.next();
        }
        pieces.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces
}

/// Splits an over-long sentence at whitespace, or hard at `max_chars`
/// characters when a single word is longer than that.
fn split_long(piece: &str, max_chars: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = piece;
    while rest.chars().count() > max_chars {
        let (cut, _) = rest.char_indices().nth(max_chars).expect("longer than max");
        let head = &rest[..cut];
        let at = match head.rfind(char::is_whitespace) {
            Some(ws) if ws > 0 => ws + head[ws..].chars().next().map_or(1, char::len_utf8),
            _ => cut,
        };
        out.push(&rest[..at]);
        rest = &rest[at..];
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// One chunk per non-empty document entry; entries longer than `max_chars`
/// are packed sentence by sentence into consecutive chunks that share the
/// entry's time range.
pub fn chunk_document(
    doc: &IntersectionDocument,
    max_chars: usize,
) -> Result<Vec<KnowledgeChunk>, RagError> {
    let max_chars = max_chars.max(1);
    let mut chunks = Vec::new();
    for entry in &doc.entries {
        if entry.text.trim().is_empty() {
            continue;
        }
        let mut parts: Vec<String> = Vec::new();
        let mut current = String::new();
        let mut current_len = 0;
        for piece in sentence_pieces(&entry.text)
            .into_iter()
            .flat_map(|p| split_long(p, max_chars))
        {
            let len = piece.chars().count();
            if current_len > 0 && current_len + len > max_chars {
                parts.push(std::mem::take(&mut current));
                current_len = 0;
            }
            current.push_str(piece);
            current_len += len;
        }
        if !current.is_empty() {
            parts.push(current);
        }
        for text in parts {
            chunks.push(KnowledgeChunk {
                chunk_id: chunks.len() as u64,
                text,
                start_ms: entry.start_ms,
                end_ms: entry.end_ms,
                embedding: None,
            });
        }
    }
    if chunks.is_empty() {
        return Err(RagError::EmptyDocument);
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: u64,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
    pub vec: Vec<f64>,
}

impl IndexEntry {
    fn to_chunk(&self) -> KnowledgeChunk {
        KnowledgeChunk {
            chunk_id: self.id,
            text: self.text.clone(),
            start_ms: self.start_ms,
            end_ms: self.end_ms,
            embedding: Some(self.vec.clone()),
        }
    }
}

/// Exact-scan vector store of unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    dim: usize,
    count: usize,
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && (norm - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds a chunk with its embedding, normalizing the vector.
    pub fn insert(&mut self, chunk: &KnowledgeChunk, embedding: Vec<f64>) -> Result<(), RagError> {
        if embedding.len() != self.dimension {
            return Err(RagError::Dimension {
                expected: self.dimension,
                found: embedding.len(),
            });
        }
        self.entries.push(IndexEntry {
            id: chunk.chunk_id,
            start_ms: chunk.start_ms,
            end_ms: chunk.end_ms,
            text: chunk.text.clone(),
            vec: normalized(embedding),
        });
        Ok(())
    }

    /// Header line `{"dim":D,"count":N}` followed by one JSON record per
    /// entry.
    pub fn persist<W: Write>(&self, mut out: W) -> Result<(), RagError> {
        serde_json::to_writer(
            &mut out,
            &IndexHeader {
                dim: self.dimension,
                count: self.entries.len(),
            },
        )
        .map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, RagError> {
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or_else(|| RagError::Format {
            line: 1,
            reason: "missing header".into(),
        })??;
        let header: IndexHeader =
            serde_json::from_str(&header_line).map_err(|e| RagError::Format {
                line: 1,
                reason: e.to_string(),
            })?;
        let mut entries = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry = serde_json::from_str(&line).map_err(|e| RagError::Format {
                line: i + 2,
                reason: e.to_string(),
            })?;
            if entry.vec.len() != header.dim {
                return Err(RagError::Format {
                    line: i + 2,
                    reason: format!(
                        "vector has {} values, header says {}",
                        entry.vec.len(),
                        header.dim
                    ),
                });
            }
            entries.push(entry);
        }
        if entries.len() != header.count {
            return Err(RagError::Format {
                line: 1,
                reason: format!(
                    "header count {} but {} entries",
                    header.count,
                    entries.len()
                ),
            });
        }
        Ok(Self {
            dimension: header.dim,
            entries,
        })
    }
}

/// Embeds every chunk (concurrently) and inserts them in chunk order.
pub fn build_index(
    chunks: &[KnowledgeChunk],
    embedder: &dyn Embedder,
) -> Result<VectorIndex, RagError> {
    if chunks.is_empty() {
        return Err(RagError::EmptyDocument);
    }
    let vectors: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|c| {
            embedder.embed(&c.text).map_err(|source| RagError::Embed {
                chunk_id: c.chunk_id,
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut index = VectorIndex::new(embedder.dimension());
    for (chunk, v) in chunks.iter().zip(vectors) {
        index.insert(chunk, v)?;
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk: KnowledgeChunk,
    pub score: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact top-`k` entries by cosine similarity to a unit query vector; ties
/// go to the earlier start time, then the lower id.
pub fn retrieve_by_vector(
    query: &[f64],
    index: &VectorIndex,
    k: usize,
) -> Result<Vec<RetrievalResult>, RagError> {
    if index.is_empty() {
        return Err(RagError::EmptyIndex);
    }
    if query.len() != index.dimension {
        return Err(RagError::Dimension {
            expected: index.dimension,
            found: query.len(),
        });
    }
    let query = normalized(query.to_vec());
    let mut scored: Vec<(f64, &IndexEntry)> = index
        .entries
        .iter()
        .map(|e| (dot(&query, &e.vec), e))
        .collect();
    let order = |a: &(f64, &IndexEntry), b: &(f64, &IndexEntry)| -> Ordering {
        b.0.total_cmp(&a.0)
            .then(a.1.start_ms.cmp(&b.1.start_ms))
            .then(a.1.id.cmp(&b.1.id))
    };
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored
        .into_iter()
        .map(|(score, e)| RetrievalResult {
            chunk: e.to_chunk(),
            score,
        })
        .collect())
}

pub fn retrieve(
    query: &str,
    index: &VectorIndex,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<RetrievalResult>, RagError> {
    if index.is_empty() {
        return Err(RagError::EmptyIndex);
    }
    let q = embedder.embed(query)?;
    retrieve_by_vector(&q, index, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer_text: String,
    pub used_chunks: Vec<RetrievalResult>,
    pub usage: ModelUsage,
}

/// The LLM prompt for a query over retrieved chunks.
pub fn answer_prompt(query: &str, chunks: &[RetrievalResult]) -> String {
    let context = chunks
        .iter()
        .map(|r| format!("{} :\n{}", r.chunk.timestamp(), r.chunk.text))
        .collect::<Vec<_>>()
        .join("\n");
    format!("Context:\n{context}\n\nQuestion: {query}\nAnswer using only the context.")
}

pub fn answer(
    query: &str,
    index: &VectorIndex,
    k: usize,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
) -> Result<Answer, RagError> {
    let used_chunks = retrieve(query, index, k, embedder)?;
    let prompt = answer_prompt(query, &used_chunks);
    let generation = llm.complete(&prompt, DEFAULT_ANSWER_TOKENS)?;
    Ok(Answer {
        answer_text: generation.text,
        used_chunks,
        usage: generation.usage,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::gateway::{MockBackend, NO_ANSWER};
    use crate::types::DocumentEntry;

    fn doc(entries: &[(u64, &str)]) -> IntersectionDocument {
        IntersectionDocument {
            entries: entries
                .iter()
                .map(|(s, t)| DocumentEntry {
                    start_ms: *s,
                    end_ms: s + 10_000,
                    text: (*t).to_owned(),
                })
                .collect(),
        }
    }

    #[test]
    fn short_entries_map_one_to_one() {
        let d = doc(&[(0, "A car."), (10_000, "A bus."), (20_000, "A dog.")]);
        let chunks = chunk_document(&d, DEFAULT_CHUNK_CHARS).unwrap();
        assert_eq!(chunks.len(), 3);
        for (c, e) in chunks.iter().zip(&d.entries) {
            assert_eq!((c.start_ms, c.end_ms), (e.start_ms, e.end_ms));
            assert_eq!(c.text, e.text);
        }
    }

    #[test]
    fn long_entry_splits_and_reassembles() {
        let sentence = "A pedestrian with a red umbrella waits at the corner near the bus stop. ";
        let text: String = sentence
            .repeat(3000 / sentence.len() + 1)
            .trim_end()
            .to_owned();
        assert!(text.len() >= 3000);
        let chunks = chunk_document(&doc(&[(5000, &text)]), 1200).unwrap();
        assert!(chunks.len() >= 3);
        assert!(chunks.iter().all(|c| c.text.chars().count() <= 1200));
        assert!(chunks.iter().all(|c| c.start_ms == 5000));
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(joined, text);
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(
            chunk_document(&IntersectionDocument::default(), 100),
            Err(RagError::EmptyDocument)
        ));
        assert!(matches!(
            chunk_document(&doc(&[(0, "")]), 100),
            Err(RagError::EmptyDocument)
        ));
    }

    #[test]
    fn index_basics_and_round_trip() {
        let m = MockBackend::default();
        let chunks =
            chunk_document(&doc(&[(0, "A white SUV."), (10_000, "A white SUV.")]), 100).unwrap();
        let index = build_index(&chunks[..1], &m).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.dimension(), 256);
        let index = build_index(&chunks, &m).unwrap();
        assert_eq!(index.entries()[0].vec, index.entries()[1].vec);

        let mut bytes = Vec::new();
        index.persist(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"{\"dim\":256,\"count\":2}\n"));
        let loaded = VectorIndex::load(&bytes[..]).unwrap();
        assert_eq!(loaded, index);
        let mut again = Vec::new();
        loaded.persist(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn load_rejects_bad_files() {
        assert!(VectorIndex::load(&b""[..]).is_err());
        assert!(VectorIndex::load(&b"{\"dim\":2,\"count\":1}\n"[..]).is_err());
        let bad = b"{\"dim\":2,\"count\":1}\n{\"id\":0,\"start_ms\":0,\"end_ms\":1,\"text\":\"x\",\"vec\":[1.0]}\n";
        assert!(matches!(
            VectorIndex::load(&bad[..]),
            Err(RagError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn self_query_ranks_first() {
        let m = MockBackend::default();
        let d = doc(&[
            (0, "A bus is waiting at the stop."),
            (10_000, "A white SUV is parked on the side of the road."),
            (20_000, "Two pedestrians cross the street."),
        ]);
        let index = build_index(&chunk_document(&d, 1200).unwrap(), &m).unwrap();
        let r = retrieve(
            "A white SUV is parked on the side of the road.",
            &index,
            2,
            &m,
        )
        .unwrap();
        assert_eq!(r[0].chunk.start_ms, 10_000);
        assert!((r[0].score - 1.0).abs() < 1e-9);
        assert_eq!(retrieve("bus", &index, 10, &m).unwrap().len(), 3);
        assert!(matches!(
            retrieve("bus", &VectorIndex::new(256), 1, &m),
            Err(RagError::EmptyIndex)
        ));
    }

    #[test]
    fn answers_use_retrieved_context() {
        let m = MockBackend::default();
        let d = doc(&[
            (0, "A bus is waiting at the stop."),
            (
                443_000,
                "A black SUV and a white SUV are parked on the side of the road.",
            ),
            (460_000, "A cyclist rides in the bike lane."),
        ]);
        let index = build_index(&chunk_document(&d, 1200).unwrap(), &m).unwrap();
        let a = answer("Is there any white SUV?", &index, 2, &m, &m).unwrap();
        assert!(a.answer_text.starts_with("Yes, "), "{}", a.answer_text);
        assert!(a.answer_text.contains("white SUV"));
        assert_eq!(a.used_chunks[0].chunk.timestamp(), "00:07:23");

        let a = answer("Any flamingos?", &index, 2, &m, &m).unwrap();
        assert_eq!(a.answer_text, NO_ANSWER);
    }

    #[test]
    fn prompt_template() {
        let r = RetrievalResult {
            chunk: KnowledgeChunk {
                chunk_id: 0,
                text: "A car.".into(),
                start_ms: 443_000,
                end_ms: 453_000,
                embedding: None,
            },
            score: 0.5,
        };
        assert_eq!(
            answer_prompt("Any car?", &[r]),
            "Context:\n00:07:23 :\nA car.\n\nQuestion: Any car?\nAnswer using only the context."
        );
    }

    proptest! {
        #[test]
        fn chunks_reassemble_entries(
            sentences in prop::collection::vec("[A-Za-z]{1,12}( [a-z]{1,9}){0,12}[.!?]?", 1..30),
            max in 20usize..200,
        ) {
            let text = sentences.join(" ");
            let chunks = chunk_document(&doc(&[(0, &text)]), max).unwrap();
            let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(joined, text);
            for c in &chunks {
                prop_assert!(c.text.chars().count() <= max);
            }
        }
    }
}
