//! Fixed-length training windows.

use rand::Rng;

use super::{Dataset, EpisodeRecord, Normalizer};

/// `K + 1` consecutive timesteps of one episode in raw units, zero-padded past
/// the episode end.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
    pub steps: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    /// `s_{t+k+1}` and `R_{t+k+1}`, the world-model targets at step `k`.
    pub next_states: Vec<f64>,
    pub next_returns: Vec<f64>,
    pub state_valid: Vec<bool>,
    /// True where `a_{t+k}` is a real action, i.e. a transition follows.
    pub action_valid: Vec<bool>,
}

impl Window {
    pub fn extract(ep: &EpisodeRecord, episode: usize, start: usize, k: usize) -> Self {
        let steps = k + 1;
        let (sd, ad) = (ep.state_dim, ep.action_dim);
        let mut w = Self {
            episode,
            start,
            steps,
            state_dim: sd,
            action_dim: ad,
            states: vec![0.0; steps * sd],
            actions: vec![0.0; steps * ad],
            rewards: vec![0.0; steps],
            returns: vec![0.0; steps],
            next_states: vec![0.0; steps * sd],
            next_returns: vec![0.0; steps],
            state_valid: vec![false; steps],
            action_valid: vec![false; steps],
        };
        for j in 0..steps {
            let t = start + j;
            if t >= ep.timesteps() {
                break;
            }
            w.state_valid[j] = true;
            w.states[j * sd..(j + 1) * sd].copy_from_slice(ep.state(t));
            w.returns[j] = ep.returns[t];
            if ep.action_valid(t) {
                w.action_valid[j] = true;
                w.actions[j * ad..(j + 1) * ad].copy_from_slice(ep.action(t));
                w.rewards[j] = ep.rewards[t];
                w.next_states[j * sd..(j + 1) * sd].copy_from_slice(ep.state(t + 1));
                w.next_returns[j] = ep.returns[t + 1];
            }
        }
        w
    }
}

/// Normalized, flattened windows ready for the models. All arrays are
/// `batch × steps × dim`, row-major; padded entries are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub steps: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub returns: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub next_returns: Vec<f64>,
    pub state_valid: Vec<bool>,
    pub action_valid: Vec<bool>,
    pub origin: Vec<(usize, usize)>,
}

impl Batch {
    pub fn from_windows(windows: &[Window], norm: &Normalizer) -> Self {
        let w0 = &windows[0];
        let (steps, sd, ad) = (w0.steps, w0.state_dim, w0.action_dim);
        let mut b = Batch {
            batch: windows.len(),
            steps,
            state_dim: sd,
            action_dim: ad,
            states: Vec::with_capacity(windows.len() * steps * sd),
            actions: Vec::with_capacity(windows.len() * steps * ad),
            returns: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            next_returns: Vec::new(),
            state_valid: Vec::new(),
            action_valid: Vec::new(),
            origin: Vec::new(),
        };
        for w in windows {
            for j in 0..steps {
                let sv = w.state_valid[j];
                let av = w.action_valid[j];
                let s = &w.states[j * sd..(j + 1) * sd];
                let a = &w.actions[j * ad..(j + 1) * ad];
                let ns = &w.next_states[j * sd..(j + 1) * sd];
                push_masked(&mut b.states, sv, || norm.state(s), sd);
                push_masked(&mut b.actions, av, || norm.action(a), ad);
                push_masked(&mut b.next_states, av, || norm.state(ns), sd);
                b.returns.push(if sv { norm.ret(w.returns[j]) } else { 0.0 });
                b.rewards.push(if av { norm.reward(w.rewards[j]) } else { 0.0 });
                b.next_returns.push(if av { norm.ret(w.next_returns[j]) } else { 0.0 });
                b.state_valid.push(sv);
                b.action_valid.push(av);
            }
            b.origin.push((w.episode, w.start));
        }
        b
    }

    /// The sub-batch of rows `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        let (st, sd, ad) = (self.steps, self.state_dim, self.action_dim);
        let cut = |v: &Vec<f64>, d: usize| v[range.start * st * d..range.end * st * d].to_vec();
        Batch {
            batch: range.len(),
            steps: st,
            state_dim: sd,
            action_dim: ad,
            states: cut(&self.states, sd),
            actions: cut(&self.actions, ad),
            returns: cut(&self.returns, 1),
            rewards: cut(&self.rewards, 1),
            next_states: cut(&self.next_states, sd),
            next_returns: cut(&self.next_returns, 1),
            state_valid: self.state_valid[range.start * st..range.end * st].to_vec(),
            action_valid: self.action_valid[range.start * st..range.end * st].to_vec(),
            origin: self.origin[range].to_vec(),
        }
    }
}

fn push_masked(out: &mut Vec<f64>, valid: bool, f: impl FnOnce() -> Vec<f64>, dim: usize) {
    if valid {
        out.extend(f());
    } else {
        out.extend(std::iter::repeat_n(0.0, dim));
    }
}

/// Maps a flat index over every `(episode, start)` pair with `start < T`.
#[derive(Clone, Debug)]
pub struct WindowIndex {
    cumulative: Vec<usize>,
}

impl WindowIndex {
    pub fn new(dataset: &Dataset) -> Self {
        let mut acc = 0;
        let cumulative = dataset
            .episodes
            .iter()
            .map(|e| {
                acc += e.transitions();
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn len(&self) -> usize {
        self.cumulative.last().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let ep = self.cumulative.partition_point(|&c| c <= flat);
        let before = if ep == 0 { 0 } else { self.cumulative[ep - 1] };
        (ep, flat - before)
    }
}

/// Uniformly random `(episode, start)` windows of `K + 1` timesteps.
pub fn sample_windows<R: Rng>(dataset: &Dataset, index: &WindowIndex, k: usize, batch_size: usize, rng: &mut R) -> Batch {
    let norm = dataset.normalizer();
    let windows: Vec<Window> = (0..batch_size)
        .map(|_| {
            let (ep, start) = index.locate(rng.random_range(0..index.len()));
            Window::extract(&dataset.episodes[ep], ep, start, k)
        })
        .collect();
    Batch::from_windows(&windows, &norm)
}
