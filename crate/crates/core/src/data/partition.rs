use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Group, SessionSample};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

pub const MIN_KEYPRESSES: usize = 10;
pub const MAX_KEYPRESSES: usize = 100;
pub const MIN_SESSIONS_PER_USER: usize = 5;

/// One party's local training data.
#[derive(Debug, Clone)]
pub struct PartyDataset {
    pub party_id: usize,
    pub samples: Vec<Arc<SessionSample>>,
}

impl PartyDataset {
    pub fn new(party_id: usize, samples: Vec<Arc<SessionSample>>) -> Self {
        PartyDataset { party_id, samples }
    }

    /// `n_k`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn user_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.user_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Arc<SessionSample>>,
    pub validation: Vec<Arc<SessionSample>>,
}

/// Keeps sessions with 10 to 100 keypresses inclusive.
pub fn filter_sessions(samples: Vec<SessionSample>) -> Vec<SessionSample> {
    samples
        .into_iter()
        .filter(|s| (MIN_KEYPRESSES..=MAX_KEYPRESSES).contains(&s.keypress_count()))
        .collect()
}

/// Per user, the chronologically first `floor(0.8·n)` sessions train and the
/// rest validate. Corpus order is chronological order.
pub fn split_train_val(samples: Vec<SessionSample>) -> Result<DatasetSplit> {
    let mut order: Vec<u32> = Vec::new();
    let mut per_user: BTreeMap<u32, Vec<Arc<SessionSample>>> = BTreeMap::new();
    for s in samples {
        let entry = per_user.entry(s.user_id).or_insert_with(|| {
            order.push(s.user_id);
            Vec::new()
        });
        entry.push(Arc::new(s));
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for user in order {
        let sessions = per_user.remove(&user).unwrap_or_default();
        if sessions.len() < MIN_SESSIONS_PER_USER {
            return Err(Error::Data(format!(
                "user {user} has {} sessions; at least {MIN_SESSIONS_PER_USER} required for the split",
                sessions.len()
            )));
        }
        let n_train = sessions.len() * 4 / 5;
        let mut it = sessions.into_iter();
        train.extend(it.by_ref().take(n_train));
        validation.extend(it);
    }
    Ok(DatasetSplit { train, validation })
}

/// IID parties of `per_party` samples each.
///
/// The pool is laid out in a stratified random order (strata are
/// `(group, label)`), so every contiguous run mirrors the pool's stratum
/// proportions; parties take consecutive runs. When the demand exceeds the
/// pool, a fresh stratified order is appended, i.e. samples are reused only
/// after every sample has been handed out once.
pub fn partition_iid(
    train: &[Arc<SessionSample>],
    n_parties: usize,
    per_party: usize,
    seed: u64,
) -> Result<Vec<PartyDataset>> {
    if n_parties == 0 || per_party == 0 {
        return Err(Error::Config(
            "IID partition needs at least one party and one sample per party".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Empty("IID partition pool"));
    }
    let mut rng = RngStream::new(seed, streams::PARTITION);
    let mut queue: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut parties = Vec::with_capacity(n_parties);
    for party_id in 0..n_parties {
        let mut samples = Vec::with_capacity(per_party);
        while samples.len() < per_party {
            if cursor == queue.len() {
                queue = stratified_order(train, &mut rng);
                cursor = 0;
            }
            samples.push(Arc::clone(&train[queue[cursor]]));
            cursor += 1;
        }
        parties.push(PartyDataset::new(party_id, samples));
    }
    Ok(parties)
}

fn stratified_order(pool: &[Arc<SessionSample>], rng: &mut RngStream) -> Vec<usize> {
    let mut strata: BTreeMap<(Group, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in pool.iter().enumerate() {
        strata.entry((s.group, s.class_index())).or_default().push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(pool.len());
    for (rank, members) in strata.values_mut().enumerate() {
        rng.shuffle(members);
        let n = members.len() as f64;
        for (j, &idx) in members.iter().enumerate() {
            let key = (j as f64 + rng.uniform()) / n;
            keyed.push((key, rank, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, idx)| idx).collect()
}

/// User-level partition: party `j` receives every session of normal users
/// `2j, 2j+1`, BD-I user `j` and BD-II user `j` (users ordered by id within
/// each group). Users beyond those are left out.
pub fn partition_noniid(train: &[Arc<SessionSample>], n_parties: usize) -> Result<Vec<PartyDataset>> {
    if n_parties == 0 {
        return Err(Error::Config("non-IID partition needs at least one party".into()));
    }
    let mut users: BTreeMap<Group, Vec<u32>> = BTreeMap::new();
    for s in train {
        let ids = users.entry(s.group).or_default();
        if !ids.contains(&s.user_id) {
            ids.push(s.user_id);
        }
    }
    users.values_mut().for_each(|ids| ids.sort_unstable());
    let needed = [(Group::Normal, 2), (Group::BipolarI, 1), (Group::BipolarII, 1)];
    for (group, per) in needed {
        let have = users.get(&group).map_or(0, Vec::len);
        if have < per * n_parties {
            return Err(Error::Data(format!(
                "non-IID partition over {n_parties} parties needs {} {group} users, found {have}",
                per * n_parties
            )));
        }
    }
    let mut owner: BTreeMap<u32, usize> = BTreeMap::new();
    for party in 0..n_parties {
        for (group, per) in needed {
            for &uid in &users[&group][party * per..(party + 1) * per] {
                owner.insert(uid, party);
            }
        }
    }
    let dropped: Vec<u32> = users.values().flatten().filter(|u| !owner.contains_key(u)).copied().collect();
    if !dropped.is_empty() {
        log::info!("non-IID partition leaves out users {dropped:?}");
    }
    let mut parties: Vec<PartyDataset> = (0..n_parties).map(|p| PartyDataset::new(p, Vec::new())).collect();
    for s in train {
        if let Some(&p) = owner.get(&s.user_id) {
            parties[p].samples.push(Arc::clone(s));
        }
    }
    Ok(parties)
}
