//! Experience replay with merge-distance priorities, backed by a sum tree.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::qnet::TransitionBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorityMode {
    /// `1 / (1 + distance / scale)`: samples near the merge point dominate.
    Inverse { scale: f64 },
    /// `epsilon + distance`.
    Literal { epsilon: f64 },
}

impl Default for PriorityMode {
    fn default() -> Self {
        PriorityMode::Inverse { scale: 50.0 }
    }
}

pub fn score_entry(distance_to_merge: f64, mode: PriorityMode) -> f64 {
    let d = distance_to_merge.max(0.0);
    match mode {
        PriorityMode::Inverse { scale } => 1.0 / (1.0 + d / scale),
        PriorityMode::Literal { epsilon } => epsilon + d,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub priority: PriorityMode,
    /// Entries required before training starts.
    pub warmup: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 100_000, priority: PriorityMode::default(), warmup: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub terminal: bool,
    /// Mission vehicle's distance to the ramp end when the transition was generated, m.
    pub merge_distance: f64,
}

/// Binary tree whose internal nodes hold the sum of their children.
#[derive(Debug, Clone)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    fn set(&mut self, i: usize, p: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = p;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `u`, skipping zero-priority leaves.
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// FIFO ring buffer with priority-proportional sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    width: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<usize>,
    rewards: Vec<f32>,
    terminal: Vec<bool>,
    distances: Vec<f64>,
    tree: SumTree,
    cursor: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(width: usize, config: ReplayConfig) -> Result<Self> {
        if config.capacity == 0 || width == 0 {
            return Err(Error::Config("replay buffer needs a positive capacity and width".into()));
        }
        let tree = SumTree::new(config.capacity);
        Ok(Self {
            config,
            width,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
            distances: Vec::new(),
            tree,
            cursor: 0,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn is_warm(&self) -> bool {
        self.len >= self.config.warmup
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.tree.get(slot)
    }

    pub fn push(&mut self, e: ReplayEntry) -> Result<()> {
        if e.obs.len() != self.width || e.next_obs.len() != self.width {
            return Err(Error::WidthMismatch { expected: self.width, got: e.obs.len().max(e.next_obs.len()) });
        }
        let finite = e.reward.is_finite()
            && e.merge_distance.is_finite()
            && e.obs.iter().chain(&e.next_obs).all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite { what: "replay entry", value: e.reward as f64 });
        }
        let slot = self.cursor;
        let w = self.width;
        if slot == self.actions.len() {
            self.obs.extend_from_slice(&e.obs);
            self.next_obs.extend_from_slice(&e.next_obs);
            self.actions.push(e.action);
            self.rewards.push(e.reward);
            self.terminal.push(e.terminal);
            self.distances.push(e.merge_distance);
        } else {
            self.obs[slot * w..(slot + 1) * w].copy_from_slice(&e.obs);
            self.next_obs[slot * w..(slot + 1) * w].copy_from_slice(&e.next_obs);
            self.actions[slot] = e.action;
            self.rewards[slot] = e.reward;
            self.terminal[slot] = e.terminal;
            self.distances[slot] = e.merge_distance;
        }
        let p = score_entry(e.merge_distance, self.config.priority);
        self.tree.set(slot, p.max(f64::MIN_POSITIVE));
        self.cursor = (self.cursor + 1) % self.config.capacity;
        self.len = (self.len + 1).min(self.config.capacity);
        Ok(())
    }

    pub fn entry(&self, slot: usize) -> ReplayEntry {
        let w = self.width;
        ReplayEntry {
            obs: self.obs[slot * w..(slot + 1) * w].to_vec(),
            action: self.actions[slot],
            reward: self.rewards[slot],
            next_obs: self.next_obs[slot * w..(slot + 1) * w].to_vec(),
            terminal: self.terminal[slot],
            merge_distance: self.distances[slot],
        }
    }

    /// Slots of `n` distinct entries, each drawn proportionally to priority
    /// among those not yet drawn.
    pub fn sample_slots<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n > self.len || n == 0 {
            return Err(Error::Underfilled { len: self.len, requested: n });
        }
        let mut picked = Vec::with_capacity(n);
        let mut saved = Vec::with_capacity(n);
        for _ in 0..n {
            let total = self.tree.total();
            let u = rng.random::<f64>() * total;
            let mut slot = self.tree.find(u);
            if slot >= self.len || self.tree.get(slot) <= 0.0 {
                // floating point drift at the upper edge
                slot = self.tree.find(total * (1.0 - f64::EPSILON));
            }
            saved.push(self.tree.get(slot));
            self.tree.set(slot, 0.0);
            picked.push(slot);
        }
        for (&slot, &p) in picked.iter().zip(&saved) {
            self.tree.set(slot, p);
        }
        Ok(picked)
    }

    pub fn sample_batch<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<TransitionBatch<f32>> {
        let slots = self.sample_slots(n, rng)?;
        let w = self.width;
        let mut b = TransitionBatch::with_width(w);
        for s in slots {
            b.push(
                &self.obs[s * w..(s + 1) * w],
                self.actions[s],
                self.rewards[s],
                &self.next_obs[s * w..(s + 1) * w],
                self.terminal[s],
            );
        }
        Ok(b)
    }

    /// Debug dump: magic, version, count, width, then per entry the
    /// observation, action, reward, next observation, terminal flag and
    /// merge distance in little-endian, and a trailing CRC-32.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for i in 0..self.len {
            let e = self.entry(i);
            e.obs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            out.extend_from_slice(&(e.action as u32).to_le_bytes());
            out.extend_from_slice(&e.reward.to_le_bytes());
            e.next_obs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            out.push(e.terminal as u8);
            out.extend_from_slice(&e.merge_distance.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.snapshot_bytes())?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Vec<ReplayEntry>> {
        Ok(parse_snapshot(&fs::read(path)?)?)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"SVOREPL\0";
const SNAPSHOT_VERSION: u32 = 1;

pub fn parse_snapshot(bytes: &[u8]) -> Result<Vec<ReplayEntry>, FormatError> {
    let header = SNAPSHOT_MAGIC.len() + 12;
    if bytes.len() < header + 4 {
        return Err(FormatError::Truncated { needed: header + 4, found: bytes.len() });
    }
    if &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"));
    let version = u32_at(8);
    if version != SNAPSHOT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let (count, width) = (u32_at(12) as usize, u32_at(16) as usize);
    let per = 8 * width + 4 + 4 + 1 + 8;
    let needed = count
        .checked_mul(per)
        .and_then(|x| x.checked_add(header + 4))
        .ok_or_else(|| FormatError::Dimensions(format!("{count} entries of width {width}")))?;
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(FormatError::TrailingBytes(bytes.len() - needed));
    }
    let stored = u32_at(needed - 4);
    let computed = crc32fast::hash(&bytes[..needed - 4]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let f32s = |at: usize, n: usize| -> Vec<f32> {
        bytes[at..at + 4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect()
    };
    let mut out = Vec::with_capacity(count);
    let mut at = header;
    for _ in 0..count {
        let obs = f32s(at, width);
        at += 4 * width;
        let action = u32_at(at) as usize;
        let reward = f32s(at + 4, 1)[0];
        at += 8;
        let next_obs = f32s(at, width);
        at += 4 * width;
        let terminal = bytes[at] != 0;
        let merge_distance = f64::from_le_bytes(bytes[at + 1..at + 9].try_into().expect("eight bytes"));
        at += 9;
        out.push(ReplayEntry { obs, action, reward, next_obs, terminal, merge_distance });
    }
    Ok(out)
}
