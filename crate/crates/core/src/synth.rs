//! Seeded synthetic corpus generator.
//!
//! Each user gets a behavioral profile drawn around a population prior:
//! per-digraph lognormal latency means, dwell means, and mouse kinematics.
//! Sessions realize a profile with session-level drift plus per-event noise.
//!
//! `separation` is the one discriminability knob: the spread of user-level
//! parameters around the population is `separation × WITHIN_SD`, where
//! `WITHIN_SD` is the session-to-session drift of a single user. At
//! `separation = 0` every user has the same mean parameters.
//!
//! Cheating rings are modeled as outsider operator profiles that produce the
//! sessions of several claimed identities.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{exp, ln, mix_seed};
use crate::session::{
    AgeBand, DeviceContext, Demographics, Gender, KeyEvent, MouseButton, MouseEvent, MouseKind, SessionRecord,
};
use crate::{Error, Result};

/// Session-to-session spread (log scale) of one user's timing parameters.
pub const WITHIN_SD: f64 = 0.10;
/// Per-keystroke log-scale noise before user variation.
const LATENCY_NOISE_SD: f64 = 0.28;
const DWELL_NOISE_SD: f64 = 0.18;
/// Latent style factors shared across symbol pairs and pointing parameters,
/// and the share of a parameter's between-user variance the factors explain.
const STYLE_FACTORS: usize = 4;
const STYLE_SHARE: f64 = 0.95;
/// Radians of preferred stroke direction per unit of log-scale spread.
const HEADING_SCALE: f64 = 4.0;
/// Size of keyboard-layout and mouse-kind timing shifts relative to the
/// between-user spread.
const DEVICE_EFFECT: f64 = 0.3;
/// Share of the style variance of a symbol pair carried by overall tempo.
const TEMPO_SHARE: f64 = 0.4;
/// Share of a timing parameter's session drift due to session-wide pace.
const PACE_SHARE: f64 = 0.7;
/// Latent factors specific to pointing, on top of the shared style factors.
const POINTER_FACTORS: usize = 3;
/// Number of per-user pointing parameters drawn around the population.
const POINTER_PARAMS: usize = 15;
/// Keystrokes per answered item; a longer pause separates items.
const ITEM_KEYSTROKES: core::ops::Range<usize> = 600..1200;

const SYMBOLS: usize = 27;
const SPACE: usize = 26;
const SCREEN_W: f64 = 1920.0;
const SCREEN_H: f64 = 1080.0;
/// 2023-01-01T00:00:00Z
const EPOCH_BASE_MS: i64 = 1_672_531_200_000;
const YEAR_MS: i64 = 365 * 24 * 3600 * 1000;

const STREAM_POPULATION: u64 = 1;
const STREAM_PROFILE: u64 = 2;
const STREAM_SESSION: u64 = 3;
const STREAM_RING: u64 = 4;

const WORDS: &[&str] = &[
    "the", "of", "and", "to", "in", "is", "that", "for", "it", "as", "was", "with", "be", "by", "on", "not",
    "he", "this", "are", "or", "his", "from", "at", "which", "but", "have", "an", "had", "they", "you",
    "were", "their", "one", "all", "we", "can", "her", "has", "there", "been", "if", "more", "when", "will",
    "would", "who", "so", "no", "people", "time", "could", "about", "other", "students", "language", "test",
    "answer", "question", "write", "because", "think", "school", "world", "important", "different",
    "example", "between", "through", "should", "these",
];

fn symbol_code(sym: usize) -> String {
    if sym == SPACE {
        "Space".into()
    } else {
        format!("Key{}", (b'A' + sym as u8) as char)
    }
}

fn unit<const N: usize>(row: [f64; N]) -> [f64; N] {
    let norm = libm::sqrt(row.iter().map(|x| x * x).sum());
    row.map(|x| x / norm)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Weighted categorical distribution over tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Categorical<T> {
    pub items: Vec<(T, f64)>,
}

impl<T: Clone> Categorical<T> {
    pub fn new(items: Vec<(T, f64)>) -> Self {
        Self { items }
    }

    pub fn uniform(values: impl IntoIterator<Item = T>) -> Self {
        Self { items: values.into_iter().map(|v| (v, 1.0)).collect() }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.items.is_empty() || self.items.iter().any(|(_, w)| !(*w >= 0.0)) || self.total() <= 0.0 {
            return Err(Error::ConfigInfeasible(format!("{what} distribution needs positive weights")));
        }
        Ok(())
    }

    fn total(&self) -> f64 {
        self.items.iter().map(|(_, w)| w).sum()
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.items[i].1 / self.total()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> T {
        let dist = WeightedIndex::new(self.items.iter().map(|(_, w)| *w)).expect("validated weights");
        self.items[dist.sample(rng)].0.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemographicPrior {
    pub gender: Categorical<Gender>,
    pub age_band: Categorical<AgeBand>,
}

impl Default for DemographicPrior {
    /// Per-user shares that roughly reproduce the published per-pair group
    /// ratios of a large test-taker population.
    fn default() -> Self {
        Self {
            gender: Categorical::new(alloc::vec![
                (Gender::Female, 0.497),
                (Gender::Male, 0.501),
                (Gender::Others, 0.002),
            ]),
            age_band: Categorical::new(AgeBand::KNOWN.into_iter().zip([0.030, 0.417, 0.287, 0.120, 0.070, 0.039, 0.037]).collect()),
        }
    }
}

impl DemographicPrior {
    /// Equal shares for every known gender and age band.
    pub fn balanced() -> Self {
        Self { gender: Categorical::uniform(Gender::KNOWN), age_band: Categorical::uniform(AgeBand::KNOWN) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePrior {
    pub keyboard_layouts: Categorical<String>,
    pub mouse_kinds: Categorical<String>,
    pub regions: Categorical<String>,
}

impl Default for DevicePrior {
    fn default() -> Self {
        let tags = |xs: &[(&str, f64)]| Categorical::new(xs.iter().map(|(s, w)| (String::from(*s), *w)).collect());
        Self {
            keyboard_layouts: tags(&[
                ("us-qwerty", 0.45),
                ("uk-qwerty", 0.15),
                ("es-qwerty", 0.15),
                ("de-qwertz", 0.15),
                ("fr-azerty", 0.10),
            ]),
            mouse_kinds: tags(&[("optical", 0.55), ("touchpad", 0.35), ("trackball", 0.10)]),
            regions: tags(&[
                ("north-america", 1.0),
                ("south-america", 1.0),
                ("europe", 1.0),
                ("africa", 1.0),
                ("middle-east", 1.0),
                ("south-asia", 1.0),
                ("east-asia", 1.0),
                ("oceania", 1.0),
            ]),
        }
    }
}

/// Events per generated session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLength {
    pub keystrokes: usize,
    pub mouse_moves: usize,
}

impl Default for SessionLength {
    fn default() -> Self {
        Self { keystrokes: 1000, mouse_moves: 6000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Total claimed identities, ring-controlled ones included.
    pub n_users: usize,
    pub sessions_per_user: usize,
    pub separation: f64,
    pub n_rings: usize,
    pub ring_size: usize,
    pub seed: u64,
    /// Seed of the population-wide parameters (phrase timing norms, device
    /// effects). `None` uses `seed`. Sharing it lets two corpora sample
    /// different people from the same population.
    #[serde(default)]
    pub population_seed: Option<u64>,
    pub session_length: SessionLength,
    pub demographics: DemographicPrior,
    pub devices: DevicePrior,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            sessions_per_user: 3,
            separation: 1.5,
            n_rings: 0,
            ring_size: 2,
            seed: 7,
            population_seed: None,
            session_length: SessionLength::default(),
            demographics: DemographicPrior::default(),
            devices: DevicePrior::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::ConfigInfeasible("separation must be finite and non-negative".into()));
        }
        if self.n_rings > 0 && self.ring_size < 2 {
            return Err(Error::ConfigInfeasible("ring_size must be at least 2".into()));
        }
        if self.n_rings * self.ring_size > self.n_users {
            return Err(Error::ConfigInfeasible(format!(
                "{} rings of {} identities exceed {} users",
                self.n_rings, self.ring_size, self.n_users
            )));
        }
        self.demographics.gender.validate("gender")?;
        self.demographics.age_band.validate("age band")?;
        self.devices.keyboard_layouts.validate("keyboard layout")?;
        self.devices.mouse_kinds.validate("mouse kind")?;
        self.devices.regions.validate("region")?;
        Ok(())
    }
}

/// Parameters shared by the whole simulated population.
#[derive(Clone, Debug, PartialEq)]
struct PopulationPrior {
    latency_log_mean: Vec<f64>,
    /// Unit-norm loadings of each symbol pair on the shared style factors.
    latency_loadings: Vec<[f64; STYLE_FACTORS]>,
    dwell_log_mean: Vec<f64>,
    /// Loadings of the pointing parameters on the same style factors.
    pointer_loadings: [[f64; STYLE_FACTORS + POINTER_FACTORS]; POINTER_PARAMS],
    layout_shift: BTreeMap<String, f64>,
    mouse_speed_shift: BTreeMap<String, f64>,
}

impl PopulationPrior {
    fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.population_seed.unwrap_or(cfg.seed), STREAM_POPULATION, 0));
        let latency_log_mean = (0..SYMBOLS * SYMBOLS).map(|_| ln(175.0) + 0.25 * normal(&mut rng)).collect();
        let latency_loadings = (0..SYMBOLS * SYMBOLS)
            .map(|_| {
                // the first factor is overall tempo and loads equally on every pair
                let rest = unit(core::array::from_fn::<f64, { STYLE_FACTORS - 1 }, _>(|_| normal(&mut rng)));
                let mut row = [libm::sqrt(TEMPO_SHARE); STYLE_FACTORS];
                row[1..].iter_mut().zip(rest).for_each(|(x, r)| *x = libm::sqrt(1.0 - TEMPO_SHARE) * r);
                row
            })
            .collect();
        let dwell_log_mean = (0..SYMBOLS).map(|_| ln(95.0) + 0.10 * normal(&mut rng)).collect();
        let pointer_loadings = core::array::from_fn(|_| unit(core::array::from_fn(|_| normal(&mut rng))));
        let layout_shift = cfg.devices.keyboard_layouts.items.iter().map(|(k, _)| (k.clone(), normal(&mut rng))).collect();
        let mouse_speed_shift = cfg.devices.mouse_kinds.items.iter().map(|(k, _)| (k.clone(), normal(&mut rng))).collect();
        Self { latency_log_mean, latency_loadings, dwell_log_mean, pointer_loadings, layout_shift, mouse_speed_shift }
    }
}

/// One simulated person's typing and pointing behavior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypistProfile {
    pub user_id: String,
    pub device: DeviceContext,
    pub demographics: Demographics,
    /// Log-scale mean down-down latency (ms) per symbol pair, 27×27 row-major
    /// over `a..z` then space.
    pub latency_log_mean: Vec<f64>,
    /// Log-scale per-keystroke latency noise (the user's latency scale).
    pub latency_log_sd: f64,
    /// Log-scale mean dwell (ms) per symbol.
    pub dwell_log_mean: Vec<f64>,
    pub dwell_log_sd: f64,
    /// Log-scale mean pointer speed (px/s) and its per-stroke spread.
    pub speed_log_mean: f64,
    pub speed_log_sd: f64,
    /// Heading change per sampling step (rad), the curvature tendency.
    pub turn_sd: f64,
    /// Shape exponent of the speed profile within a stroke; larger values
    /// give a sharper peak mid-stroke.
    pub stroke_peak: f64,
    /// Preferred stroke direction (rad).
    pub heading_pref: f64,
    /// Share of strokes aimed near the preferred direction, and how tightly.
    pub heading_focus: f64,
    pub heading_spread: f64,
    /// Per-step probability of an abrupt course correction.
    pub correction_rate: f64,
    /// Log-scale mean stroke length (px).
    pub stroke_log_mean: f64,
    /// Log-scale mean of short gaps between strokes (ms).
    pub gap_log_mean: f64,
    /// Probability that a gap between strokes is a pause.
    pub pause_rate: f64,
    pub pause_log_mean: f64,
    pub pause_log_sd: f64,
    pub click_rate: f64,
    pub click_log_mean: f64,
    pub click_log_sd: f64,
    /// Session-to-session drift of the log-scale parameters.
    pub session_drift: f64,
}

impl TypistProfile {
    /// Expected latency (ms) of a symbol pair, before session drift.
    pub fn mean_latency_ms(&self, first: char, second: char) -> Option<f64> {
        let (a, b) = (symbol_index(first)?, symbol_index(second)?);
        let mu = self.latency_log_mean[a * SYMBOLS + b];
        Some(exp(mu + self.latency_log_sd * self.latency_log_sd / 2.0))
    }
}

fn symbol_index(c: char) -> Option<usize> {
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize),
        ' ' => Some(SPACE),
        _ => None,
    }
}

fn draw_profile(
    prior: &PopulationPrior,
    cfg: &GeneratorConfig,
    user_id: String,
    rng: &mut ChaCha8Rng,
) -> TypistProfile {
    let device = DeviceContext {
        keyboard_layout: cfg.devices.keyboard_layouts.sample(rng),
        mouse_kind: cfg.devices.mouse_kinds.sample(rng),
        region: cfg.devices.regions.sample(rng),
    };
    let demographics = Demographics { gender: cfg.demographics.gender.sample(rng), age_band: cfg.demographics.age_band.sample(rng) };
    let spread = cfg.separation * WITHIN_SD;
    let layout = DEVICE_EFFECT * spread * prior.layout_shift.get(&device.keyboard_layout).copied().unwrap_or(0.0);
    let mouse_kind = DEVICE_EFFECT * spread * prior.mouse_speed_shift.get(&device.mouse_kind).copied().unwrap_or(0.0);

    let style: [f64; STYLE_FACTORS] = core::array::from_fn(|_| normal(rng));
    let (shared, own) = (libm::sqrt(STYLE_SHARE), libm::sqrt(1.0 - STYLE_SHARE));
    let latency_log_mean = prior
        .latency_log_mean
        .iter()
        .zip(&prior.latency_loadings)
        .map(|(base, load)| {
            let factor: f64 = load.iter().zip(&style).map(|(l, z)| l * z).sum();
            base + layout + spread * (shared * factor + own * normal(rng))
        })
        .collect();
    let latency_log_sd = LATENCY_NOISE_SD * exp(spread * normal(rng));
    let dwell_tempo = spread * normal(rng);
    let dwell_log_mean = prior
        .dwell_log_mean
        .iter()
        .map(|base| base + layout + dwell_tempo + spread * normal(rng))
        .collect();
    let dwell_log_sd = DWELL_NOISE_SD * exp(spread * normal(rng));
    let pointer_style: [f64; POINTER_FACTORS] = core::array::from_fn(|_| normal(rng));
    let pointer: [f64; POINTER_PARAMS] = core::array::from_fn(|k| {
        let factor: f64 = prior.pointer_loadings[k].iter().zip(style.iter().chain(&pointer_style)).map(|(l, z)| l * z).sum();
        spread * (shared * factor + own * normal(rng))
    });
    let [speed, speed_sd, turn, peak, pref, focus, heading_spread, correction, stroke, gap, pause_rate, pause, pause_sd, click, click_sd] =
        pointer;

    TypistProfile {
        user_id,
        device,
        demographics,
        latency_log_mean,
        latency_log_sd,
        dwell_log_mean,
        dwell_log_sd,
        speed_log_mean: ln(700.0) + mouse_kind + speed,
        speed_log_sd: 0.25 * exp(speed_sd),
        turn_sd: 0.12 * exp(turn),
        stroke_peak: exp(peak),
        heading_pref: HEADING_SCALE * pref,
        heading_focus: (0.8 * exp(focus)).min(1.0),
        heading_spread: 0.6 * exp(heading_spread),
        correction_rate: 0.03 * exp(correction),
        stroke_log_mean: ln(300.0) + stroke,
        gap_log_mean: ln(180.0) + gap,
        pause_rate: (0.3 * exp(pause_rate)).min(0.9),
        pause_log_mean: ln(1200.0) + pause,
        pause_log_sd: 0.4 * exp(pause_sd),
        click_rate: 0.6,
        click_log_mean: ln(110.0) + click,
        click_log_sd: 0.25 * exp(click_sd),
        session_drift: WITHIN_SD,
    }
}

fn user_id(i: usize) -> String {
    format!("user-{i:05}")
}

fn population(cfg: &GeneratorConfig, prior: &PopulationPrior) -> Vec<TypistProfile> {
    (0..cfg.n_users)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_PROFILE, i as u64));
            draw_profile(prior, cfg, user_id(i), &mut rng)
        })
        .collect()
}

/// One profile per user, each from its own derived seed stream.
pub fn gen_population(cfg: &GeneratorConfig) -> Result<Vec<TypistProfile>> {
    cfg.validate()?;
    Ok(population(cfg, &PopulationPrior::new(cfg)))
}

/// Seed of session `session` of user index `user`.
pub fn session_seed(cfg_seed: u64, user: usize, session: usize) -> u64 {
    mix_seed(mix_seed(cfg_seed, STREAM_SESSION, user as u64), STREAM_SESSION, session as u64)
}

/// Realizes one session of `profile`. The session id is
/// `{user_id}-s{index}` where `index` comes from the caller via `session_id`.
pub fn gen_session(profile: &TypistProfile, session_seed: u64, length: SessionLength) -> SessionRecord {
    gen_session_with_id(profile, session_seed, length, format!("{}-s{:016x}", profile.user_id, session_seed))
}

fn gen_session_with_id(profile: &TypistProfile, seed: u64, length: SessionLength, session_id: String) -> SessionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let started_at_ms = EPOCH_BASE_MS + rng.random_range(0..YEAR_MS);
    // session-wide pace (hurried or relaxed) shared by typing and pointing
    let pace = profile.session_drift * libm::sqrt(PACE_SHARE) * normal(&mut rng);
    let key_events = gen_keys(profile, pace, length.keystrokes, &mut rng);
    let mouse_events = gen_mouse(profile, pace, length.mouse_moves, &mut rng);
    SessionRecord {
        session_id,
        user_id: profile.user_id.clone(),
        started_at_ms,
        device: profile.device.clone(),
        demographics: profile.demographics,
        key_events,
        mouse_events,
    }
}

fn gen_text(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n + 16);
    while out.len() < n {
        if !out.is_empty() {
            out.push(SPACE);
        }
        let word = WORDS[rng.random_range(0..WORDS.len())];
        out.extend(word.chars().filter_map(symbol_index));
    }
    out.truncate(n);
    out
}

fn gen_keys(p: &TypistProfile, pace: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<KeyEvent> {
    if n == 0 {
        return Vec::new();
    }
    let drift = p.session_drift * libm::sqrt(1.0 - PACE_SHARE);
    let global = pace;
    let per_pair: Vec<f64> = (0..SYMBOLS * SYMBOLS).map(|_| drift * normal(rng)).collect();
    let dwell_shift = pace + drift * normal(rng);
    let text = gen_text(n, rng);

    let mut downs = Vec::with_capacity(n);
    let mut t = rng.random_range(300..2000u64);
    let mut next_item = rng.random_range(ITEM_KEYSTROKES);
    for (i, &sym) in text.iter().enumerate() {
        if i > 0 {
            let pair = text[i - 1] * SYMBOLS + sym;
            let mu = p.latency_log_mean[pair] + global + per_pair[pair];
            let mut lat = exp(mu + p.latency_log_sd * normal(rng)).clamp(15.0, 3000.0);
            if i == next_item {
                // moving on to the next exam item
                lat += rng.random_range(2000.0..8000.0);
                next_item += rng.random_range(ITEM_KEYSTROKES);
            }
            t += libm::round(lat) as u64;
        }
        downs.push(t);
    }
    let mut events = Vec::with_capacity(2 * n);
    for (i, &sym) in text.iter().enumerate() {
        let mut dwell = exp(p.dwell_log_mean[sym] + dwell_shift + p.dwell_log_sd * normal(rng)).clamp(20.0, 400.0);
        let mut dwell_ms = libm::round(dwell) as u64;
        if i + 1 < n && text[i + 1] == sym {
            // a repeated key must be released before it is pressed again
            dwell = dwell.min((downs[i + 1] - downs[i] - 1) as f64);
            dwell_ms = (libm::round(dwell) as u64).max(1);
        }
        let code = symbol_code(sym);
        events.push(KeyEvent::down(downs[i], code.clone()));
        events.push(KeyEvent::up(downs[i] + dwell_ms, code));
    }
    events.sort_by_key(|e| e.t_ms);
    events
}

fn gen_mouse(p: &TypistProfile, pace: f64, target_moves: usize, rng: &mut ChaCha8Rng) -> Vec<MouseEvent> {
    let d = p.session_drift;
    let own = d * libm::sqrt(1.0 - PACE_SHARE);
    let speed_mean = p.speed_log_mean - pace + own * normal(rng);
    let turn_sd = p.turn_sd * exp(d * normal(rng));
    let peak = p.stroke_peak * exp(d * normal(rng));
    let heading_pref = p.heading_pref + HEADING_SCALE * d * normal(rng);
    // mean of sin(pi x)^peak over [0, 1], so the profile keeps the mean speed
    let profile_mean = libm::tgamma((peak + 1.0) / 2.0) / (libm::sqrt(PI) * libm::tgamma(peak / 2.0 + 1.0));
    let pause_rate = (p.pause_rate * exp(d * normal(rng))).min(0.95);
    let pause_mean = p.pause_log_mean + pace + own * normal(rng);
    let click_mean = p.click_log_mean + d * normal(rng);
    let focus = (p.heading_focus * exp(d * normal(rng))).min(1.0);
    let heading_spread = p.heading_spread * exp(d * normal(rng));
    let correction_rate = (p.correction_rate * exp(d * normal(rng))).min(1.0);
    let stroke_mean = p.stroke_log_mean + d * normal(rng);
    let gap_mean = p.gap_log_mean + pace + own * normal(rng);

    let mut events = Vec::with_capacity(target_moves + target_moves / 8);
    let mut moves = 0;
    let mut t: u64 = rng.random_range(0..1000);
    let (mut x, mut y) = (rng.random_range(0.0..SCREEN_W), rng.random_range(0.0..SCREEN_H));
    let pixel = |v: f64, max: f64| libm::round(v.clamp(0.0, max - 1.0)) as u32;
    events.push(MouseEvent::moved(t, pixel(x, SCREEN_W), pixel(y, SCREEN_H)));
    moves += 1;
    while moves < target_moves {
        let distance = exp(stroke_mean + 0.6 * normal(rng));
        let mut heading = if rng.random_bool(focus) {
            heading_pref + heading_spread * normal(rng)
        } else {
            rng.random_range(-PI..PI)
        };
        let speed = exp(speed_mean + p.speed_log_sd * normal(rng));
        let mut travelled = 0.0;
        while travelled < distance && moves < target_moves {
            let dt = rng.random_range(31..=33u64);
            heading += turn_sd * normal(rng);
            if rng.random_bool(correction_rate) {
                heading += normal(rng);
            }
            let shape = libm::pow(libm::sin(PI * travelled / distance), peak) / profile_mean;
            let step = speed * shape.max(0.2) * dt as f64 / 1000.0;
            let (mut nx, mut ny) = (x + step * libm::cos(heading), y + step * libm::sin(heading));
            if !(0.0..SCREEN_W).contains(&nx) {
                heading = PI - heading;
                nx = x;
            }
            if !(0.0..SCREEN_H).contains(&ny) {
                heading = -heading;
                ny = y;
            }
            x = nx;
            y = ny;
            t += dt;
            travelled += step;
            events.push(MouseEvent::moved(t, pixel(x, SCREEN_W), pixel(y, SCREEN_H)));
            moves += 1;
        }
        if rng.random_bool(p.click_rate) {
            let down = t + rng.random_range(40..120u64);
            let hold = exp(click_mean + p.click_log_sd * normal(rng)).clamp(30.0, 1500.0);
            let up = down + libm::round(hold) as u64;
            let (px, py) = (pixel(x, SCREEN_W), pixel(y, SCREEN_H));
            events.push(MouseEvent::button(down, MouseKind::ButtonDown, px, py, MouseButton::Left));
            events.push(MouseEvent::button(up, MouseKind::ButtonUp, px, py, MouseButton::Left));
            t = up;
        }
        let gap = if rng.random_bool(pause_rate) {
            exp(pause_mean + p.pause_log_sd * normal(rng)).max(600.0)
        } else {
            exp(gap_mean + 0.3 * normal(rng)).clamp(20.0, 480.0)
        };
        t += libm::round(gap) as u64;
    }
    events.sort_by_key(|e| e.t_ms);
    events
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operator {
    pub operator_id: String,
    pub profile: TypistProfile,
}

/// Ground truth of a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingScenario {
    pub operators: Vec<Operator>,
    /// operator id → claimed identities it controls.
    pub identity_map: BTreeMap<String, Vec<String>>,
    pub honest_users: Vec<String>,
    /// session id → id of the profile that produced it (a user id for honest
    /// sessions, an operator id for ring sessions).
    pub session_sources: BTreeMap<String, String>,
}

impl RingScenario {
    /// user id → operator id for every controlled identity.
    pub fn controller_of(&self) -> BTreeMap<&str, &str> {
        self.identity_map
            .iter()
            .flat_map(|(op, users)| users.iter().map(move |u| (u.as_str(), op.as_str())))
            .collect()
    }
}

/// Generates every session of the corpus together with its ground truth.
///
/// With `n_rings > 0`, `n_rings × ring_size` users (chosen by seed) are
/// controlled identities: their sessions keep the identity's id, device and
/// demographics but are produced by a fresh operator profile.
pub fn gen_ring_corpus(cfg: &GeneratorConfig) -> Result<(Vec<SessionRecord>, RingScenario)> {
    cfg.validate()?;
    let prior = PopulationPrior::new(cfg);
    let profiles = population(cfg, &prior);

    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_RING, 0)));
    let mut controller: BTreeMap<usize, usize> = BTreeMap::new();
    let mut operators = Vec::with_capacity(cfg.n_rings);
    let mut identity_map = BTreeMap::new();
    for r in 0..cfg.n_rings {
        let operator_id = format!("operator-{r:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_RING, 1 + r as u64));
        let profile = draw_profile(&prior, cfg, operator_id.clone(), &mut rng);
        let members = &order[r * cfg.ring_size..(r + 1) * cfg.ring_size];
        let mut ids: Vec<String> = members.iter().map(|&u| user_id(u)).collect();
        ids.sort();
        for &u in members {
            controller.insert(u, r);
        }
        identity_map.insert(operator_id.clone(), ids);
        operators.push(Operator { operator_id, profile });
    }

    let mut sessions = Vec::with_capacity(cfg.n_users * cfg.sessions_per_user);
    let mut session_sources = BTreeMap::new();
    let mut honest_users = Vec::new();
    for (u, own) in profiles.iter().enumerate() {
        let (behavior, source) = match controller.get(&u) {
            Some(&r) => {
                let op = &operators[r];
                let mut p = op.profile.clone();
                p.user_id = own.user_id.clone();
                p.device = own.device.clone();
                p.demographics = own.demographics;
                (p, op.operator_id.clone())
            }
            None => {
                honest_users.push(own.user_id.clone());
                (own.clone(), own.user_id.clone())
            }
        };
        for j in 0..cfg.sessions_per_user {
            let id = format!("{}-s{j}", own.user_id);
            let s = gen_session_with_id(&behavior, session_seed(cfg.seed, u, j), cfg.session_length, id);
            session_sources.insert(s.session_id.clone(), source.clone());
            sessions.push(s);
        }
    }
    Ok((sessions, RingScenario { operators, identity_map, honest_users, session_sources }))
}

/// Regenerates session `j` of user index `u` from an explicit behavior
/// profile, as [`gen_ring_corpus`] does.
pub fn regenerate_session(cfg: &GeneratorConfig, behavior: &TypistProfile, u: usize, j: usize) -> SessionRecord {
    gen_session_with_id(behavior, session_seed(cfg.seed, u, j), cfg.session_length, format!("{}-s{j}", behavior.user_id))
}
