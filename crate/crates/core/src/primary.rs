//! Primary event selection: the caption event the image most likely shows.

use serde::Serialize;

use crate::corpus::CorpusRecord;
use crate::encoder::{cosine, embed_image, embed_span, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::ontology::Ontology;

pub const CRITERIA: [&str; 4] = ["depth", "arguments", "frequency", "image_similarity"];

/// Per-criterion ranks (1 = best) and the resulting vote.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimaryVote {
    pub ranks: [Vec<usize>; 4],
    pub first_places: Vec<usize>,
    pub winner: usize,
    /// True when the first-place count alone did not decide.
    pub tie_broken: bool,
}

/// Competition ranking ("1224"): equal keys share the best rank. Lower key
/// is better.
fn competition_rank<K: PartialOrd>(keys: &[K]) -> Vec<usize> {
    keys.iter()
        .map(|k| 1 + keys.iter().filter(|o| *o < k).count())
        .collect()
}

/// Rank events by the four criteria and vote. See [`select_primary`].
pub fn vote(
    record: &CorpusRecord,
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
) -> Result<PrimaryVote> {
    let events = &record.events;
    if events.is_empty() {
        return Err(Error::NoEvents(record.id.clone()));
    }
    let depth: Vec<u32> = events.iter().map(|e| e.dependency_depth).collect();
    let args: Vec<i64> = events.iter().map(|e| -(e.arguments.len() as i64)).collect();
    let freq: Vec<i128> = events
        .iter()
        .map(|e| -(ont.frequency(&e.event_type) as i128))
        .collect();
    let image = embed_image(p, record)?;
    let sim = events
        .iter()
        .map(|e| Ok(-cosine(&embed_span(p, record, e.trigger.span)?, &image)?))
        .collect::<Result<Vec<f64>>>()?;
    let ranks = [
        competition_rank(&depth),
        competition_rank(&args),
        competition_rank(&freq),
        competition_rank(&sim),
    ];
    let first_places: Vec<usize> = (0..events.len())
        .map(|i| ranks.iter().filter(|r| r[i] == 1).count())
        .collect();
    let best = *first_places.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..events.len())
        .filter(|&i| first_places[i] == best)
        .collect();
    let winner = *tied
        .iter()
        .min_by_key(|&&i| (ranks[0][i], ranks[1][i], ranks[2][i], ranks[3][i], i))
        .expect("non-empty");
    Ok(PrimaryVote {
        ranks,
        first_places,
        winner,
        tie_broken: tied.len() > 1,
    })
}

/// Index of the primary event.
///
/// Each of the four criteria ranks the events: shallower dependency depth,
/// more arguments, more frequent event type, and higher trigger/image cosine.
/// The event ranked first by the most criteria wins. Ties go to the best rank
/// vector compared lexicographically in criterion order, then to the lowest
/// index.
pub fn select_primary(
    record: &CorpusRecord,
    ont: &Ontology,
    p: &dyn EmbeddingProvider,
) -> Result<usize> {
    let v = vote(record, ont, p)?;
    if v.tie_broken {
        log::debug!("record `{}`: primary event chosen by tie-break", record.id);
    }
    Ok(v.winner)
}
