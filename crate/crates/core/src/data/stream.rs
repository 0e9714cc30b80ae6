use rand::seq::SliceRandom;

use super::synthetic::StreamGenerator;
use super::Sample;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone)]
pub enum StreamSource {
    /// Finite pool, visited in a seeded permutation per phase.
    Pool(Vec<Sample>),
    Generator(StreamGenerator),
}

/// Free unlabeled data stream with a single-owner cursor.
#[derive(Debug, Clone)]
pub struct FreeStream {
    source: StreamSource,
    seed: u64,
    phase: u64,
    cursor: u64,
    order: Vec<usize>,
    reshuffles: u64,
    reshuffle_on_exhaustion: bool,
    draw_calls: u64,
    samples_drawn: u64,
}

impl FreeStream {
    pub fn new(source: StreamSource, seed: u64) -> Self {
        let source = match source {
            StreamSource::Pool(p) => StreamSource::Pool(p.iter().map(Sample::stripped).collect()),
            g => g,
        };
        let mut s = Self {
            source,
            seed,
            phase: 0,
            cursor: 0,
            order: Vec::new(),
            reshuffles: 0,
            reshuffle_on_exhaustion: true,
            draw_calls: 0,
            samples_drawn: 0,
        };
        s.begin_phase(0);
        s
    }

    pub fn pool(samples: Vec<Sample>, seed: u64) -> Self {
        Self::new(StreamSource::Pool(samples), seed)
    }

    pub fn generator(generator: StreamGenerator, seed: u64) -> Self {
        Self::new(StreamSource::Generator(generator), seed)
    }

    /// When disabled, an exhausted pool yields short draws instead of reshuffling.
    pub fn with_reshuffle(mut self, enabled: bool) -> Self {
        self.reshuffle_on_exhaustion = enabled;
        self
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.source {
            StreamSource::Pool(p) => p.first().map(|s| s.features.len()),
            StreamSource::Generator(g) => Some(g.dim()),
        }
    }

    pub fn pool_len(&self) -> Option<usize> {
        match &self.source {
            StreamSource::Pool(p) => Some(p.len()),
            StreamSource::Generator(_) => None,
        }
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Number of `draw_candidates` calls served so far.
    pub fn draw_calls(&self) -> u64 {
        self.draw_calls
    }

    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn
    }

    /// Resets a pool stream to a fresh phase-seeded permutation. Generator
    /// streams keep their global cursor so ids never repeat.
    pub fn begin_phase(&mut self, phase: u64) {
        self.phase = phase;
        self.reshuffles = 0;
        if let StreamSource::Pool(p) = &self.source {
            self.cursor = 0;
            self.order = (0..p.len()).collect();
            self.order
                .shuffle(&mut seed::rng(self.seed, 0, &[phase, 0]));
        }
    }

    fn next(&mut self) -> Result<Option<Sample>> {
        match &self.source {
            StreamSource::Generator(g) => {
                let s = g.sample(self.cursor);
                self.cursor += 1;
                Ok(Some(s))
            }
            StreamSource::Pool(p) => {
                if p.is_empty() {
                    return Err(Error::StreamExhausted("stream pool is empty".into()));
                }
                if self.cursor as usize >= self.order.len() {
                    if !self.reshuffle_on_exhaustion {
                        return Ok(None);
                    }
                    self.reshuffles += 1;
                    self.order.shuffle(&mut seed::rng(
                        self.seed,
                        0,
                        &[self.phase, self.reshuffles],
                    ));
                    self.cursor = 0;
                }
                let s = p[self.order[self.cursor as usize]].clone();
                self.cursor += 1;
                Ok(Some(s))
            }
        }
    }
}

/// Unlabeled candidates `U` awaiting scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateBuffer {
    pub samples: Vec<Sample>,
}

impl CandidateBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Loads `count` samples into a fresh candidate buffer of capacity `capacity`.
pub fn draw_candidates(
    stream: &mut FreeStream,
    count: usize,
    capacity: usize,
) -> Result<CandidateBuffer> {
    if count > capacity {
        return Err(Error::Domain(format!(
            "cannot draw {count} candidates into a buffer of {capacity}"
        )));
    }
    stream.draw_calls += 1;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        match stream.next()? {
            Some(s) => samples.push(s),
            None => break,
        }
    }
    stream.samples_drawn += samples.len() as u64;
    Ok(CandidateBuffer { samples })
}
