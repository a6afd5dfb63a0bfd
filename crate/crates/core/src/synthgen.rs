//! Synthetic corpus with a planted acoustic-to-label rule.
//!
//! Every word is a harmonic tone. Its duration, amplitude and F0 excursion
//! are drawn at random, and the prominence label is
//! `sigmoid(z(duration) + z(amplitude) + z(excursion))` with z-scores taken
//! within the utterance. The boundary label grows linearly with the pause
//! that follows the word. Both are quantized to sevenths and written as votes.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_wav, ManifestRow, DEFAULT_NUM_RATERS, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const NUM_HARMONICS: usize = 5;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ORACLE_FILE: &str = "oracle.json";

const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "te", "su", "ra", "no", "pe", "di", "fa", "gu", "zo"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub words_per_utterance_range: (usize, usize),
    /// Each speaker's base F0 is drawn uniformly from this range.
    pub base_f0_range_hz: (f64, f64),
    pub word_duration_ms_range: (f64, f64),
    pub pause_ms_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    /// F0 rises linearly from base to base * (1 + excursion).
    pub f0_excursion_range: (f64, f64),
    pub ramp_ms: f64,
    /// Standard deviation of white noise added to the whole track.
    pub noise_level: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_speakers: 6,
            utterances_per_speaker: 8,
            words_per_utterance_range: (50, 70),
            base_f0_range_hz: (110.0, 240.0),
            word_duration_ms_range: (50.0, 130.0),
            pause_ms_range: (0.0, 60.0),
            amplitude_range: (0.1, 0.6),
            f0_excursion_range: (0.0, 0.6),
            ramp_ms: 8.0,
            noise_level: 0.003,
            sample_rate_hz: SAMPLE_RATE_HZ,
            seed: 7,
        }
    }
}

fn ordered(name: &str, (lo, hi): (f64, f64), min: f64, out: &mut Vec<String>) {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        out.push(format!("{name}: range must be ordered, got ({lo}, {hi})"));
    } else if lo < min {
        out.push(format!("{name}: lower end must be >= {min}, got {lo}"));
    }
}

impl SynthConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_speakers == 0 {
            out.push("synth.num_speakers: must be >= 1".into());
        }
        if self.utterances_per_speaker == 0 {
            out.push("synth.utterances_per_speaker: must be >= 1".into());
        }
        let (wlo, whi) = self.words_per_utterance_range;
        if wlo == 0 || wlo > whi {
            out.push(format!("synth.words_per_utterance_range: must be ordered and >= 1, got ({wlo}, {whi})"));
        }
        ordered("synth.base_f0_range_hz", self.base_f0_range_hz, 1.0, &mut out);
        ordered("synth.word_duration_ms_range", self.word_duration_ms_range, 1.0, &mut out);
        ordered("synth.pause_ms_range", self.pause_ms_range, 0.0, &mut out);
        ordered("synth.amplitude_range", self.amplitude_range, 0.0, &mut out);
        ordered("synth.f0_excursion_range", self.f0_excursion_range, 0.0, &mut out);
        if self.amplitude_range.1 + 4.0 * self.noise_level >= 1.0 {
            out.push("synth.amplitude_range: peak amplitude plus noise would clip".into());
        }
        if !(self.noise_level >= 0.0) {
            out.push("synth.noise_level: must be >= 0".into());
        }
        if !(self.ramp_ms >= 0.0) {
            out.push("synth.ramp_ms: must be >= 0".into());
        }
        if self.sample_rate_hz == 0 {
            out.push("synth.sample_rate_hz: must be positive".into());
        } else {
            let top = self.base_f0_range_hz.1 * (1.0 + self.f0_excursion_range.1) * NUM_HARMONICS as f64;
            if top >= self.sample_rate_hz as f64 / 2.0 {
                out.push(format!("synth.base_f0_range_hz: top harmonic {top:.0} Hz aliases"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("synth", p.join("; ")))
        }
    }

    /// Smallest segment length that holds the longest pause plus the longest word.
    pub fn required_l_max(&self) -> usize {
        let ms = self.pause_ms_range.1 + self.word_duration_ms_range.1;
        (ms * self.sample_rate_hz as f64 / 1000.0).ceil() as usize + 1
    }
}

/// Ground truth for one generated word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleWord {
    pub utterance_id: String,
    pub word_index: usize,
    pub duration_ms: f64,
    pub amplitude: f64,
    pub f0_excursion: f64,
    pub f0_start_hz: f64,
    pub f0_end_hz: f64,
    pub pause_before_ms: f64,
    pub pause_after_ms: f64,
    pub prominence_score: f64,
    pub boundary_score: f64,
    pub prominence_votes: u32,
    pub boundary_votes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub rule: String,
    pub config: SynthConfig,
    pub words: Vec<OracleWord>,
}

/// Within-group z-scores; a group with zero variance scores 0 everywhere.
pub fn zscores(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Vec::new();
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// Nearest vote count out of `raters`, halves rounded away from zero.
pub fn quantize_votes(score: f64, raters: u32) -> u32 {
    (score.clamp(0.0, 1.0) * raters as f64).round() as u32
}

pub fn prominence_scores(durations: &[f64], amplitudes: &[f64], excursions: &[f64]) -> Vec<f64> {
    let (zd, za, ze) = (zscores(durations), zscores(amplitudes), zscores(excursions));
    (0..durations.len())
        .map(|i| crate::layers::sigmoid(zd[i] + za[i] + ze[i]))
        .collect()
}

pub fn boundary_score(pause_after_ms: f64, pause_max_ms: f64) -> f64 {
    if pause_max_ms <= 0.0 {
        return 0.0;
    }
    (pause_after_ms / pause_max_ms).clamp(0.0, 1.0)
}

/// Recomputes every label from the stored generating parameters.
/// Returns `(prominence_votes, boundary_votes)` in oracle order.
pub fn recompute_votes(oracle: &Oracle) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(oracle.words.len());
    let mut start = 0;
    while start < oracle.words.len() {
        let id = &oracle.words[start].utterance_id;
        let end = start + oracle.words[start..].iter().take_while(|w| &w.utterance_id == id).count();
        let ws = &oracle.words[start..end];
        let d: Vec<f64> = ws.iter().map(|w| w.duration_ms).collect();
        let a: Vec<f64> = ws.iter().map(|w| w.amplitude).collect();
        let e: Vec<f64> = ws.iter().map(|w| w.f0_excursion).collect();
        for (w, p) in ws.iter().zip(prominence_scores(&d, &a, &e)) {
            let b = boundary_score(w.pause_after_ms, oracle.config.pause_ms_range.1);
            out.push((quantize_votes(p, DEFAULT_NUM_RATERS), quantize_votes(b, DEFAULT_NUM_RATERS)));
        }
        start = end;
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Harmonic complex with a linear F0 ramp and raised-cosine onset/offset.
pub fn harmonic_tone(n: usize, sr: u32, f0_start: f64, f0_end: f64, amplitude: f64, ramp_ms: f64) -> Vec<f64> {
    let sr = sr as f64;
    let norm: f64 = (1..=NUM_HARMONICS).map(|k| 1.0 / k as f64).sum();
    let ramp = ((ramp_ms * sr / 1000.0) as usize).min(n / 2);
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let f0 = f0_start + (f0_end - f0_start) * t;
        let s: f64 = (1..=NUM_HARMONICS).map(|k| (k as f64 * phase).sin() / k as f64).sum();
        let env = if i < ramp {
            0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
        } else if i >= n - ramp {
            0.5 - 0.5 * (PI * (n - 1 - i) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        out.push(amplitude * env * s / norm);
        phase += 2.0 * PI * f0 / sr;
    }
    out
}

struct SynthUtterance {
    audio: Vec<f64>,
    rows: Vec<ManifestRow>,
    oracle: Vec<OracleWord>,
}

fn synth_utterance(cfg: &SynthConfig, speaker: usize, index: usize, base_f0: f64) -> SynthUtterance {
    let seed = cfg.seed ^ ((speaker as u64) << 32 | index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate_hz;
    let to_n = |ms: f64| (ms * sr as f64 / 1000.0).round() as usize;
    let (wlo, whi) = cfg.words_per_utterance_range;
    let n_words = rng.random_range(wlo..=whi);
    let speaker_id = format!("spk{speaker:02}");
    let utterance_id = format!("{speaker_id}_utt{index:02}");

    let mut dur = Vec::with_capacity(n_words);
    let mut amp = Vec::with_capacity(n_words);
    let mut exc = Vec::with_capacity(n_words);
    let mut pauses = Vec::with_capacity(n_words + 1);
    for _ in 0..n_words {
        // Round durations/pauses to whole samples so stored values are exact.
        dur.push(to_n(uniform(&mut rng, cfg.word_duration_ms_range)).max(1) as f64 * 1000.0 / sr as f64);
        amp.push(uniform(&mut rng, cfg.amplitude_range));
        exc.push(uniform(&mut rng, cfg.f0_excursion_range));
        pauses.push(to_n(uniform(&mut rng, cfg.pause_ms_range)) as f64 * 1000.0 / sr as f64);
    }
    // Silence after the last word: the longest pause.
    pauses.push(to_n(cfg.pause_ms_range.1) as f64 * 1000.0 / sr as f64);
    let prom = prominence_scores(&dur, &amp, &exc);

    let mut audio = Vec::new();
    let mut rows = Vec::with_capacity(n_words);
    let mut oracle = Vec::with_capacity(n_words);
    for i in 0..n_words {
        audio.extend(std::iter::repeat_n(0.0, to_n(pauses[i])));
        let start = audio.len();
        let f0_end = base_f0 * (1.0 + exc[i]);
        audio.extend(harmonic_tone(to_n(dur[i]), sr, base_f0, f0_end, amp[i], cfg.ramp_ms));
        let end = audio.len();
        let b = boundary_score(pauses[i + 1], cfg.pause_ms_range.1);
        let pv = quantize_votes(prom[i], DEFAULT_NUM_RATERS);
        let bv = quantize_votes(b, DEFAULT_NUM_RATERS);
        let token = format!(
            "{}{}",
            SYLLABLES[rng.random_range(0..SYLLABLES.len())],
            SYLLABLES[rng.random_range(0..SYLLABLES.len())]
        );
        rows.push(ManifestRow {
            utterance_id: utterance_id.clone(),
            speaker_id: speaker_id.clone(),
            word_index: i,
            token,
            audio_path: format!("wav/{utterance_id}.wav"),
            word_start_s: start as f64 / sr as f64,
            word_end_s: end as f64 / sr as f64,
            pause_before_ms: pauses[i],
            prominence_votes: pv,
            boundary_votes: bv,
            num_raters: DEFAULT_NUM_RATERS,
        });
        oracle.push(OracleWord {
            utterance_id: utterance_id.clone(),
            word_index: i,
            duration_ms: dur[i],
            amplitude: amp[i],
            f0_excursion: exc[i],
            f0_start_hz: base_f0,
            f0_end_hz: f0_end,
            pause_before_ms: pauses[i],
            pause_after_ms: pauses[i + 1],
            prominence_score: prom[i],
            boundary_score: b,
            prominence_votes: pv,
            boundary_votes: bv,
        });
    }
    audio.extend(std::iter::repeat_n(0.0, to_n(pauses[n_words])));
    if cfg.noise_level > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_level).expect("valid sd");
        audio.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    SynthUtterance { audio, rows, oracle }
}

/// Output of [`generate_corpus`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub oracle: Oracle,
}

pub fn rule_description(cfg: &SynthConfig) -> String {
    format!(
        "prominence = sigmoid(z(duration_ms) + z(amplitude) + z(f0_excursion)), z within utterance, zero variance -> 0; \
         boundary = clamp(pause_after_ms / {}, 0, 1); votes = round_half_away(7 * score)",
        cfg.pause_ms_range.1
    )
}

/// Writes `manifest.jsonl`, `oracle.json` and `wav/*.wav` under `out_dir`.
pub fn generate_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_f0: Vec<f64> = (0..cfg.num_speakers).map(|_| uniform(&mut rng, cfg.base_f0_range_hz)).collect();

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    let mut words = Vec::new();
    for (s, f0) in base_f0.iter().enumerate() {
        for u in 0..cfg.utterances_per_speaker {
            let utt = synth_utterance(cfg, s, u, *f0);
            let wav = out_dir.join(&utt.rows[0].audio_path);
            write_wav(&wav, &utt.audio, cfg.sample_rate_hz)?;
            for row in &utt.rows {
                serde_json::to_writer(&mut manifest, row)?;
                manifest.write_all(b"\n").map_err(|e| Error::io(&manifest_path, e))?;
            }
            words.extend(utt.oracle);
        }
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let oracle = Oracle {
        rule: rule_description(cfg),
        config: cfg.clone(),
        words,
    };
    let oracle_path = out_dir.join(ORACLE_FILE);
    let json = serde_json::to_vec_pretty(&oracle)?;
    fs::write(&oracle_path, json).map_err(|e| Error::io(&oracle_path, e))?;
    Ok(SynthOutput { manifest_path, oracle })
}

pub fn load_oracle(path: &Path) -> Result<Oracle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_gives_half() {
        let p = prominence_scores(&[80.0; 5], &[0.3; 5], &[0.2; 5]);
        assert!(p.iter().all(|&v| v == 0.5));
        assert_eq!(quantize_votes(0.5, 7), 4);
    }

    #[test]
    fn quantization_rounds_half_away() {
        assert_eq!(quantize_votes(1.5 / 7.0, 7), 2);
        assert_eq!(quantize_votes(0.0, 7), 0);
        assert_eq!(quantize_votes(1.0, 7), 7);
        assert_eq!(quantize_votes(0.07, 7), 0);
    }

    #[test]
    fn boundary_is_monotone() {
        let b: Vec<f64> = (0..=60).map(|p| boundary_score(p as f64, 60.0)).collect();
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(b[60], 1.0);
    }

    #[test]
    fn zscores_standardize() {
        let z = zscores(&[1.0, 2.0, 3.0, 4.0]);
        let m: f64 = z.iter().sum::<f64>() / 4.0;
        let v: f64 = z.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let cfg = SynthConfig {
            num_speakers: 0,
            pause_ms_range: (50.0, 10.0),
            ..SynthConfig::default()
        };
        let p = cfg.problems();
        assert_eq!(p.len(), 2, "{p:?}");
    }

    #[test]
    fn tone_peak_tracks_amplitude() {
        let t = harmonic_tone(1600, 16_000, 150.0, 150.0, 0.5, 8.0);
        let peak = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 0.5 && peak > 0.25);
        assert_eq!(t[0], 0.0);
    }
}
