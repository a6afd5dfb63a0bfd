//! Corpus ingestion: manifests, rater votes, fixed-length word segments and
//! speaker-disjoint fold planning.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Longest word segment of the reference corpus, about 1.79 s at 16 kHz.
pub const DEFAULT_L_MAX: usize = 28_660;
pub const DEFAULT_NUM_RATERS: u32 = 7;
pub const MAX_PAUSE_MS: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterVotes {
    pub prominence_votes: u32,
    pub boundary_votes: u32,
    pub num_raters: u32,
}

impl RaterVotes {
    pub fn new(prominence_votes: u32, boundary_votes: u32) -> Self {
        Self {
            prominence_votes,
            boundary_votes,
            num_raters: DEFAULT_NUM_RATERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_raters == 0 {
            return Err(Error::validation("num_raters", "must be at least 1"));
        }
        if self.prominence_votes > self.num_raters {
            return Err(Error::validation(
                "prominence_votes",
                format!("{} exceeds num_raters = {}", self.prominence_votes, self.num_raters),
            ));
        }
        if self.boundary_votes > self.num_raters {
            return Err(Error::validation(
                "boundary_votes",
                format!("{} exceeds num_raters = {}", self.boundary_votes, self.num_raters),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyLabels {
    pub prominence_degree: f64,
    pub boundary_degree: f64,
    pub votes: RaterVotes,
}

/// Degree = votes / raters.
pub fn aggregate_votes(votes: RaterVotes) -> Result<ProsodyLabels> {
    votes.validate()?;
    let n = votes.num_raters as f64;
    Ok(ProsodyLabels {
        prominence_degree: votes.prominence_votes as f64 / n,
        boundary_degree: votes.boundary_votes as f64 / n,
        votes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSegment {
    /// Pause tail, word, then zero padding; always `l_max` long.
    pub samples: Vec<f32>,
    pub token: String,
    pub word_index: usize,
    /// As given in the manifest, before the 500 ms cap.
    pub pause_before_ms: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub words: Vec<WordSegment>,
    pub labels: Vec<ProsodyLabels>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn prominence(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.prominence_degree).collect()
    }

    pub fn boundary(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.boundary_degree).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub l_max: usize,
    pub sample_rate_hz: u32,
    pub max_pause_ms: f64,
    /// Scale each segment to peak |x| = 1.
    pub normalize: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            l_max: DEFAULT_L_MAX,
            sample_rate_hz: SAMPLE_RATE_HZ,
            max_pause_ms: MAX_PAUSE_MS,
            normalize: false,
        }
    }
}

/// Builds `[pause tail] ++ [word] ++ [zeros]` of exactly `cfg.l_max` samples.
///
/// `pause_audio` is the audio preceding the word, most recent sample last.
/// When it is missing or too short, zeros stand in for the missing pause.
/// A word that does not fit after the pause loses its tail.
pub fn prepare_segment(
    word: &[f64],
    pause_audio: Option<&[f64]>,
    pause_before_ms: f64,
    sample_rate_hz: u32,
    cfg: &SegmentConfig,
) -> Result<Vec<f64>> {
    if word.is_empty() {
        return Err(Error::validation("word", "empty word waveform"));
    }
    if sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::validation(
            "sample_rate_hz",
            format!("expected {} Hz audio, got {sample_rate_hz} Hz", cfg.sample_rate_hz),
        ));
    }
    if !(pause_before_ms >= 0.0) {
        return Err(Error::validation("pause_before_ms", format!("must be >= 0, got {pause_before_ms}")));
    }
    let pause_ms = pause_before_ms.min(cfg.max_pause_ms);
    let pause_len = ((pause_ms * sample_rate_hz as f64 / 1000.0).round() as usize).min(cfg.l_max);
    let mut out = vec![0.0; cfg.l_max];
    if let Some(audio) = pause_audio {
        let avail = audio.len().min(pause_len);
        let src = &audio[audio.len() - avail..];
        out[pause_len - avail..pause_len].copy_from_slice(src);
    }
    let room = cfg.l_max - pause_len;
    let take = word.len().min(room);
    out[pause_len..pause_len + take].copy_from_slice(&word[..take]);
    if cfg.normalize {
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            out.iter_mut().for_each(|v| *v /= peak);
        }
    }
    Ok(out)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub speaker_id: String,
    pub word_index: usize,
    pub token: String,
    pub audio_path: String,
    pub word_start_s: f64,
    pub word_end_s: f64,
    pub pause_before_ms: f64,
    pub prominence_votes: u32,
    pub boundary_votes: u32,
    #[serde(default = "default_raters")]
    pub num_raters: u32,
}

fn default_raters() -> u32 {
    DEFAULT_NUM_RATERS
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn num_words(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.utterances.iter().map(|u| u.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn refs(&self) -> Vec<&Utterance> {
        self.utterances.iter().collect()
    }
}

/// Parses manifest rows. Blank lines are skipped; row numbers are 1-based lines.
pub fn read_manifest_rows(path: &Path) -> Result<Vec<(usize, ManifestRow)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            row: i + 1,
            reason: format!("malformed row: {e}"),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

/// Reads a mono 16-bit PCM WAV as samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let audio_err = |reason: String| Error::Audio {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(audio_err("expected 16-bit linear PCM".into()));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32_768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| audio_err(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| Error::Audio {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in samples {
        let v = (s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
        w.write_sample(v).map_err(audio_err)?;
    }
    w.finalize().map_err(audio_err)
}

/// Loads a manifest and every audio file it references.
pub fn load_manifest(path: &Path, cfg: &SegmentConfig) -> Result<Corpus> {
    let rows = read_manifest_rows(path)?;
    if rows.is_empty() {
        log::warn!("manifest {} has no rows; corpus is empty", path.display());
        return Ok(Corpus::default());
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut audio_cache: HashMap<PathBuf, (Vec<f64>, u32)> = HashMap::new();
    let mut utterances: Vec<Utterance> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (row_no, row) in rows {
        let bad = |reason: String| Error::Manifest { row: row_no, reason };
        let labels = aggregate_votes(RaterVotes {
            prominence_votes: row.prominence_votes,
            boundary_votes: row.boundary_votes,
            num_raters: row.num_raters,
        })
        .map_err(|e| bad(e.to_string()))?;
        if !(row.word_start_s >= 0.0 && row.word_end_s > row.word_start_s) {
            return Err(bad(format!(
                "word times must satisfy 0 <= start < end, got {}..{}",
                row.word_start_s, row.word_end_s
            )));
        }
        let audio_path = base.join(&row.audio_path);
        if !audio_cache.contains_key(&audio_path) {
            let loaded = read_wav(&audio_path).map_err(|e| bad(e.to_string()))?;
            audio_cache.insert(audio_path.clone(), loaded);
        }
        let (audio, rate) = &audio_cache[&audio_path];
        let start = (row.word_start_s * *rate as f64).round() as usize;
        let end = ((row.word_end_s * *rate as f64).round() as usize).min(audio.len());
        if start >= end {
            return Err(bad(format!("word span {start}..{end} lies outside the audio")));
        }
        let samples = prepare_segment(
            &audio[start..end],
            Some(&audio[..start]),
            row.pause_before_ms,
            *rate,
            cfg,
        )
        .map_err(|e| bad(e.to_string()))?;
        let segment = WordSegment {
            samples: samples.into_iter().map(|v| v as f32).collect(),
            token: row.token.clone(),
            word_index: row.word_index,
            pause_before_ms: row.pause_before_ms,
            start_s: row.word_start_s,
            end_s: row.word_end_s,
        };
        let continues = utterances.last().is_some_and(|u| u.utterance_id == row.utterance_id);
        if continues {
            let u = utterances.last_mut().expect("checked");
            if u.speaker_id != row.speaker_id {
                return Err(bad(format!(
                    "speaker `{}` differs from `{}` earlier in the utterance",
                    row.speaker_id, u.speaker_id
                )));
            }
            let prev = u.words.last().expect("non-empty").word_index;
            if row.word_index <= prev {
                return Err(bad(format!("word_index {} does not follow {prev}", row.word_index)));
            }
            u.words.push(segment);
            u.labels.push(labels);
        } else {
            if seen.contains_key(&row.utterance_id) {
                return Err(bad(format!("words of utterance `{}` are not contiguous", row.utterance_id)));
            }
            seen.insert(row.utterance_id.clone(), utterances.len());
            utterances.push(Utterance {
                utterance_id: row.utterance_id.clone(),
                speaker_id: row.speaker_id.clone(),
                words: vec![segment],
                labels: vec![labels],
            });
        }
    }
    Ok(Corpus { utterances })
}

/// Assignment of utterances to `k` speaker-disjoint folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    /// Speaker of each assigned utterance, for audits.
    pub speakers: BTreeMap<String, String>,
    pub fold_words: Vec<usize>,
}

pub const DEFAULT_BALANCE_RATIO: f64 = 1.3;

impl FoldPlan {
    pub fn fold_of(&self, utterance_id: &str) -> Option<usize> {
        self.assignments.get(utterance_id).copied()
    }

    /// max / min fold word count.
    pub fn balance_ratio(&self) -> f64 {
        let max = *self.fold_words.iter().max().unwrap_or(&0) as f64;
        let min = *self.fold_words.iter().min().unwrap_or(&0) as f64;
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn speakers_in(&self, fold: usize) -> Vec<String> {
        let mut s: Vec<String> = self
            .assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(u, _)| self.speakers[u].clone())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    /// Splits `utts` into (in fold, not in fold).
    pub fn split<'a>(&self, utts: &[&'a Utterance], fold: usize) -> (Vec<&'a Utterance>, Vec<&'a Utterance>) {
        utts.iter().partition(|u| self.fold_of(&u.utterance_id) == Some(fold))
    }
}

/// Speaker-disjoint folds balanced by word count.
///
/// Speakers are shuffled with `seed`, then placed largest-first into the
/// lightest fold, then single moves and pairwise swaps that shrink the
/// heaviest/lightest ratio are applied until none helps.
pub fn make_folds(utts: &[&Utterance], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::validation("k", format!("need at least 2 folds, got {k}")));
    }
    let mut words: BTreeMap<&str, usize> = BTreeMap::new();
    for u in utts {
        *words.entry(u.speaker_id.as_str()).or_default() += u.len();
    }
    if words.len() < k {
        return Err(Error::TooFewSpeakers {
            needed: k,
            k,
            found: words.len(),
        });
    }
    let mut speakers: Vec<(&str, usize)> = words.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    speakers.shuffle(&mut rng);
    speakers.sort_by(|a, b| b.1.cmp(&a.1));

    let mut load = vec![0usize; k];
    let mut fold_of: Vec<usize> = Vec::with_capacity(speakers.len());
    for (_, w) in &speakers {
        let (f, _) = load.iter().enumerate().min_by_key(|(i, l)| (**l, *i)).expect("k >= 2");
        load[f] += w;
        fold_of.push(f);
    }
    // Never empty a fold: each must keep at least one speaker.
    let count = |fold_of: &[usize], f: usize| fold_of.iter().filter(|&&x| x == f).count();
    let spread = |load: &[usize]| {
        let max = *load.iter().max().unwrap() as f64;
        let min = *load.iter().min().unwrap() as f64;
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    };
    for _ in 0..1000 {
        let current = spread(&load);
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        for i in 0..speakers.len() {
            let from = fold_of[i];
            if count(&fold_of, from) > 1 {
                for to in 0..k {
                    if to == from {
                        continue;
                    }
                    let mut l = load.clone();
                    l[from] -= speakers[i].1;
                    l[to] += speakers[i].1;
                    let s = spread(&l);
                    if s < current - 1e-12 && best.as_ref().is_none_or(|(b, _)| s < *b) {
                        best = Some((s, vec![(i, to)]));
                    }
                }
            }
            for j in i + 1..speakers.len() {
                let (fi, fj) = (fold_of[i], fold_of[j]);
                if fi == fj {
                    continue;
                }
                let mut l = load.clone();
                l[fi] = l[fi] - speakers[i].1 + speakers[j].1;
                l[fj] = l[fj] - speakers[j].1 + speakers[i].1;
                let s = spread(&l);
                if s < current - 1e-12 && best.as_ref().is_none_or(|(b, _)| s < *b) {
                    best = Some((s, vec![(i, fj), (j, fi)]));
                }
            }
        }
        match best {
            Some((_, moves)) => {
                for (i, to) in moves {
                    load[fold_of[i]] -= speakers[i].1;
                    load[to] += speakers[i].1;
                    fold_of[i] = to;
                }
            }
            None => break,
        }
    }

    let speaker_fold: HashMap<&str, usize> = speakers.iter().zip(&fold_of).map(|((s, _), f)| (*s, *f)).collect();
    let mut plan = FoldPlan {
        k,
        assignments: BTreeMap::new(),
        speakers: BTreeMap::new(),
        fold_words: load,
    };
    for u in utts {
        plan.assignments.insert(u.utterance_id.clone(), speaker_fold[u.speaker_id.as_str()]);
        plan.speakers.insert(u.utterance_id.clone(), u.speaker_id.clone());
    }
    if plan.balance_ratio() > DEFAULT_BALANCE_RATIO {
        log::warn!(
            "fold word counts {:?} exceed the {DEFAULT_BALANCE_RATIO} balance ratio",
            plan.fold_words
        );
    }
    Ok(plan)
}

pub const DEFAULT_INNER_FOLDS: usize = 4;

/// Speaker-disjoint folds inside one outer training split.
pub fn inner_folds(train: &[&Utterance], k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds(train, k, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, speaker: &str, n: usize) -> Utterance {
        let words = (0..n)
            .map(|i| WordSegment {
                samples: vec![0.0; 4],
                token: format!("w{i}"),
                word_index: i,
                pause_before_ms: 0.0,
                start_s: i as f64,
                end_s: i as f64 + 0.5,
            })
            .collect();
        Utterance {
            utterance_id: id.into(),
            speaker_id: speaker.into(),
            words,
            labels: vec![aggregate_votes(RaterVotes::new(3, 1)).unwrap(); n],
        }
    }

    #[test]
    fn votes_to_degrees() {
        assert_eq!(aggregate_votes(RaterVotes::new(7, 0)).unwrap().prominence_degree, 1.0);
        assert_eq!(aggregate_votes(RaterVotes::new(0, 0)).unwrap().prominence_degree, 0.0);
        assert_eq!(aggregate_votes(RaterVotes::new(4, 0)).unwrap().prominence_degree, 4.0 / 7.0);
        let err = aggregate_votes(RaterVotes::new(9, 0)).unwrap_err();
        assert!(err.to_string().contains("prominence_votes"));
        let err = aggregate_votes(RaterVotes::new(1, 8)).unwrap_err();
        assert!(err.to_string().contains("boundary_votes"));
    }

    #[test]
    fn segment_padding_and_pause_cap() {
        let cfg = SegmentConfig::default();
        let word = vec![0.25; 16_000];
        let seg = prepare_segment(&word, None, 0.0, 16_000, &cfg).unwrap();
        assert_eq!(seg.len(), 28_660);
        assert!(seg[16_000..].iter().all(|&v| v == 0.0));
        assert_eq!(seg[16_000..].len(), 12_660);

        let pause = vec![0.5; 20_000];
        let seg = prepare_segment(&[1.0; 100], Some(&pause), 800.0, 16_000, &cfg).unwrap();
        assert!(seg[..8_000].iter().all(|&v| v == 0.5));
        assert_eq!(seg[8_000], 1.0);

        let full: Vec<f64> = (0..28_660).map(|i| (i as f64 * 0.01).sin()).collect();
        assert_eq!(prepare_segment(&full, None, 0.0, 16_000, &cfg).unwrap(), full);
    }

    #[test]
    fn long_words_lose_their_tail() {
        let cfg = SegmentConfig {
            l_max: 10,
            ..SegmentConfig::default()
        };
        let word: Vec<f64> = (1..=12).map(|v| v as f64).collect();
        // 0.25 ms at 16 kHz = 4 samples of pause
        let seg = prepare_segment(&word, None, 0.25, 16_000, &cfg).unwrap();
        assert_eq!(seg, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn segment_errors() {
        let cfg = SegmentConfig::default();
        assert!(prepare_segment(&[], None, 0.0, 16_000, &cfg).is_err());
        assert!(prepare_segment(&[0.1], None, 0.0, 8_000, &cfg).is_err());
        assert!(prepare_segment(&[0.1], None, -1.0, 16_000, &cfg).is_err());
    }

    #[test]
    fn normalization_flag() {
        let cfg = SegmentConfig {
            l_max: 4,
            normalize: true,
            ..SegmentConfig::default()
        };
        let seg = prepare_segment(&[0.25, -0.5], None, 0.0, 16_000, &cfg).unwrap();
        assert_eq!(seg, vec![0.5, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn forced_partition_one_speaker_per_fold() {
        let utts = [utt("a", "s1", 10), utt("b", "s2", 10), utt("c", "s3", 10)];
        let refs: Vec<&Utterance> = utts.iter().collect();
        let plan = make_folds(&refs, 3, 7).unwrap();
        let mut folds: Vec<usize> = plan.assignments.values().copied().collect();
        folds.sort();
        assert_eq!(folds, vec![0, 1, 2]);
    }

    #[test]
    fn too_few_speakers() {
        let utts = [utt("a", "s1", 10), utt("b", "s2", 10), utt("c", "s3", 10)];
        let refs: Vec<&Utterance> = utts.iter().collect();
        assert!(matches!(inner_folds(&refs, 4, 0), Err(Error::TooFewSpeakers { found: 3, .. })));
        assert!(make_folds(&refs, 1, 0).is_err());
    }
}
