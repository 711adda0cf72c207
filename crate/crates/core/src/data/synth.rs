//! Synthetic keystroke-session cohort.
//!
//! Stands in for private clinical typing data. Each user gets a profile
//! (typing tempo, key-hold duration, handling jitter, phone posture, special
//! key habits, mood level); each session draws an HDRS score from the user's
//! mood distribution and then emits three views whose statistics shift with
//! the diagnosis group and with the session's mood. All magnitudes are
//! configuration, not measurements.

use serde::{Deserialize, Serialize};

use super::{label_for_hdrs, Group, SessionSample};
use crate::encoder::{ViewKind, ViewSequence};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

/// Group-conditional generator constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    /// Mean time between keypresses, seconds.
    pub interkey_mean: f64,
    /// Accelerometer noise scale, g.
    pub accel_jitter: f64,
    /// Mean of the (clipped) Poisson HDRS distribution.
    pub hdrs_mean: f64,
    /// Relative frequency of backspace among special events.
    pub backspace_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub normal_users: usize,
    pub bd1_users: usize,
    pub bd2_users: usize,
    /// Sessions per user when `session_counts` is absent.
    pub sessions_per_user: usize,
    /// Optional per-user session counts (in user-id order).
    pub session_counts: Option<Vec<usize>>,
    pub min_keypresses: u32,
    pub max_keypresses: u32,
    /// Expected share of keypresses that are special events.
    pub special_fraction: f64,
    /// Accelerometer sampling period, seconds.
    pub accel_period: f64,
    pub max_accel_steps: usize,
    pub max_hdrs: u32,
    pub normal: GroupParams,
    pub bd1: GroupParams,
    pub bd2: GroupParams,
    /// Log-normal spread of per-user tempo and jitter around the group mean.
    pub user_spread: f64,
    /// Log-normal spread of per-user mood level around the group HDRS mean.
    pub mood_spread: f64,
    /// Relative slowdown of typing tempo per HDRS point above 7.5.
    pub mood_tempo_effect: f64,
    /// Relative increase of handling jitter per HDRS point above 7.5.
    pub mood_jitter_effect: f64,
    /// Log-normal spread of single inter-key intervals within a session.
    pub interval_spread: f64,
    /// Std of per-session tempo variation (relative).
    pub session_tempo_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            normal_users: 8,
            bd1_users: 6,
            bd2_users: 6,
            sessions_per_user: 748,
            session_counts: None,
            min_keypresses: 10,
            max_keypresses: 100,
            special_fraction: 0.15,
            accel_period: 0.06,
            max_accel_steps: 100,
            max_hdrs: 52,
            normal: GroupParams {
                interkey_mean: 0.25,
                accel_jitter: 0.05,
                hdrs_mean: 4.0,
                backspace_weight: 1.0,
            },
            bd1: GroupParams {
                interkey_mean: 0.45,
                accel_jitter: 0.12,
                hdrs_mean: 11.0,
                backspace_weight: 1.6,
            },
            bd2: GroupParams {
                interkey_mean: 0.38,
                accel_jitter: 0.09,
                hdrs_mean: 9.0,
                backspace_weight: 1.3,
            },
            user_spread: 0.35,
            mood_spread: 0.3,
            mood_tempo_effect: 0.04,
            mood_jitter_effect: 0.05,
            interval_spread: 0.4,
            session_tempo_noise: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn with_users(mut self, users: usize) -> Self {
        // 8 : 6 : 6 proportions of the reference cohort
        let normal = ((users as f64) * 0.4).round() as usize;
        let bd1 = ((users as f64) * 0.3).round() as usize;
        self.normal_users = normal.min(users);
        self.bd1_users = bd1.min(users - self.normal_users);
        self.bd2_users = users - self.normal_users - self.bd1_users;
        self
    }

    pub fn total_users(&self) -> usize {
        self.normal_users + self.bd1_users + self.bd2_users
    }

    pub fn group(&self, group: Group) -> &GroupParams {
        match group {
            Group::Normal => &self.normal,
            Group::BipolarI => &self.bd1,
            Group::BipolarII => &self.bd2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_keypresses < 2 || self.min_keypresses > self.max_keypresses {
            return Err(Error::Config(format!(
                "keypress range [{}, {}] invalid",
                self.min_keypresses, self.max_keypresses
            )));
        }
        if let Some(counts) = &self.session_counts {
            if counts.len() != self.total_users() {
                return Err(Error::Config(format!(
                    "session_counts has {} entries for {} users",
                    counts.len(),
                    self.total_users()
                )));
            }
        }
        if !(0.0..1.0).contains(&self.special_fraction) || self.accel_period <= 0.0 {
            return Err(Error::Config("special_fraction or accel_period out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u32,
    pub group: Group,
    pub sessions: usize,
    /// Mean inter-key interval, seconds.
    pub interkey_mean: f64,
    /// Mean key-hold duration, seconds.
    pub duration_mean: f64,
    pub accel_jitter: f64,
    /// Resting gravity direction of the phone, g.
    pub posture: [f64; 3],
    /// Unnormalized probabilities of the six special-event categories.
    pub special_weights: [f64; 6],
    /// Poisson mean of the user's HDRS scores.
    pub hdrs_mean: f64,
}

/// Draws the reference cohort: users are numbered Normal first, then BD-I,
/// then BD-II.
pub fn default_cohort(config: &GeneratorConfig, seed: u64) -> Result<Vec<UserProfile>> {
    config.validate()?;
    let mut rng = RngStream::new(seed, streams::COHORT);
    let groups = std::iter::repeat_n(Group::Normal, config.normal_users)
        .chain(std::iter::repeat_n(Group::BipolarI, config.bd1_users))
        .chain(std::iter::repeat_n(Group::BipolarII, config.bd2_users));
    let profiles = groups
        .enumerate()
        .map(|(i, group)| {
            let gp = config.group(group);
            let sessions = config
                .session_counts
                .as_ref()
                .map_or(config.sessions_per_user, |c| c[i]);
            let tilt = rng.normal(0.0, 0.35);
            let roll = rng.normal(0.0, 0.25);
            let mut special_weights = [0.0; 6];
            for w in &mut special_weights {
                *w = rng.uniform_range(0.5, 1.5);
            }
            // autocorrect, backspace, space, suggestion, switch-keyboard, other
            special_weights[1] *= gp.backspace_weight;
            special_weights[2] *= 3.0;
            UserProfile {
                user_id: i as u32,
                group,
                sessions,
                interkey_mean: gp.interkey_mean * rng.normal(0.0, config.user_spread).exp(),
                duration_mean: 0.09 * rng.normal(0.0, 0.1).exp(),
                accel_jitter: gp.accel_jitter * rng.normal(0.0, config.user_spread).exp(),
                posture: [roll.sin() * 0.3, tilt.cos() * 0.6, tilt.sin() * 0.4 + 0.7],
                special_weights,
                hdrs_mean: gp.hdrs_mean * rng.normal(0.0, config.mood_spread).exp(),
            }
        })
        .collect();
    Ok(profiles)
}

/// Generates every profile's sessions in user order; within a user, sessions
/// are in chronological order. Sample ids are corpus positions.
pub fn generate_synthetic(
    profiles: &[UserProfile],
    config: &GeneratorConfig,
    seed: u64,
) -> Result<Vec<SessionSample>> {
    config.validate()?;
    let mut out = Vec::with_capacity(profiles.iter().map(|p| p.sessions).sum());
    for profile in profiles {
        if profile.sessions < super::MIN_SESSIONS_PER_USER {
            return Err(Error::Config(format!(
                "user {} has {} sessions; at least {} required",
                profile.user_id,
                profile.sessions,
                super::MIN_SESSIONS_PER_USER
            )));
        }
        let mut rng = RngStream::new(seed, streams::user(profile.user_id));
        for _ in 0..profile.sessions {
            let id = out.len();
            out.push(generate_session(profile, config, id, &mut rng)?);
        }
    }
    Ok(out)
}

fn generate_session(
    profile: &UserProfile,
    config: &GeneratorConfig,
    id: usize,
    rng: &mut RngStream,
) -> Result<SessionSample> {
    let hdrs = rng.poisson(profile.hdrs_mean).min(config.max_hdrs);
    let mood = f64::from(hdrs) - 7.5;

    let keypresses = rng.int_inclusive(config.min_keypresses, config.max_keypresses) as usize;
    let mut special_count = (0..keypresses)
        .filter(|_| rng.bernoulli(config.special_fraction))
        .count();
    special_count = special_count.clamp(1, keypresses - 1);
    let alpha_count = keypresses - special_count;

    let tempo = profile.interkey_mean
        * (1.0 + config.mood_tempo_effect * mood).max(0.2)
        * rng.normal(0.0, config.session_tempo_noise).exp();
    let sigma = config.interval_spread;
    let mut duration_total = 0.0;
    let mut alpha = Vec::with_capacity(alpha_count * 4);
    let (mut kx, mut ky) = (0.0f64, 0.0f64);
    for _ in 0..alpha_count {
        let hold = profile.duration_mean * rng.normal(0.0, 0.25).exp();
        let interval = tempo * rng.normal(-0.5 * sigma * sigma, sigma).exp();
        let nx = rng.uniform_range(-4.5, 4.5).round();
        let ny = rng.int_inclusive(0, 2) as f64;
        alpha.extend_from_slice(&[hold, interval, (nx - kx) / 10.0, (ny - ky) / 3.0]);
        kx = nx;
        ky = ny;
        duration_total += interval + hold;
    }
    duration_total += special_count as f64 * tempo;

    let weight_sum: f64 = profile.special_weights.iter().sum();
    let mut special = Vec::with_capacity(special_count * 6);
    for _ in 0..special_count {
        let mut u = rng.uniform() * weight_sum;
        let mut cat = 5;
        for (c, w) in profile.special_weights.iter().enumerate() {
            if u < *w {
                cat = c;
                break;
            }
            u -= w;
        }
        let mut one_hot = [0.0; 6];
        one_hot[cat] = 1.0;
        special.extend_from_slice(&one_hot);
    }

    let accel_steps = ((duration_total / config.accel_period).ceil() as usize)
        .min(config.max_accel_steps)
        .max(alpha_count);
    let jitter = profile.accel_jitter * (1.0 + config.mood_jitter_effect * mood).max(0.2);
    let mut accel = Vec::with_capacity(accel_steps * 3);
    let mut drift = [0.0f64; 3];
    for _ in 0..accel_steps {
        for (axis, d) in drift.iter_mut().enumerate() {
            *d = 0.9 * *d + rng.normal(0.0, jitter * 0.3);
            accel.push(profile.posture[axis] + *d + rng.normal(0.0, jitter));
        }
    }

    Ok(SessionSample {
        id,
        user_id: profile.user_id,
        group: profile.group,
        hdrs,
        label: label_for_hdrs(hdrs),
        alphanumeric: ViewSequence::from_flat(ViewKind::Alphanumeric, alpha)?,
        special: ViewSequence::from_flat(ViewKind::Special, special)?,
        accelerometer: ViewSequence::from_flat(ViewKind::Accelerometer, accel)?,
    })
}
