//! Brute-force turn-taking oracle on a 10 ms grid.

pub const STEP: f64 = 0.01;
/// Same-channel silences shorter than this many cells are bridged.
pub const MIN_SILENCE_CELLS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Ipu,
    Pause,
    Gap,
    Overlap,
}

/// Event as a half-open cell range `[start, end)` with its channel (0 or 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub kind: Kind,
    pub channel: usize,
    pub start: usize,
    pub end: usize,
}

impl Event {
    pub fn duration_s(&self) -> f64 {
        (self.end - self.start) as f64 * STEP
    }
}

fn raster(segments: &[(f64, f64)], cells: usize) -> Vec<bool> {
    (0..cells)
        .map(|t| {
            let mid = (t as f64 + 0.5) * STEP;
            segments.iter().any(|&(a, b)| a <= mid && mid < b)
        })
        .collect()
}

fn runs(flags: &[bool], value: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < flags.len() {
        if flags[t] == value {
            let s = t;
            while t < flags.len() && flags[t] == value {
                t += 1;
            }
            out.push((s, t));
        } else {
            t += 1;
        }
    }
    out
}

fn bridge(mut v: Vec<bool>) -> Vec<bool> {
    for (s, e) in runs(&v.clone(), false) {
        if s > 0 && e < v.len() && e - s < MIN_SILENCE_CELLS {
            v[s..e].iter_mut().for_each(|x| *x = true);
        }
    }
    v
}

/// Events of a two-channel layout given as per-channel `(start_s, end_s)` segments.
pub fn events(layout: &[Vec<(f64, f64)>; 2]) -> Vec<Event> {
    let horizon = layout.iter().flatten().map(|s| s.1).fold(0.0, f64::max);
    let cells = (horizon / STEP).ceil() as usize + 2;
    let v = [bridge(raster(&layout[0], cells)), bridge(raster(&layout[1], cells))];
    let ipus = [runs(&v[0], true), runs(&v[1], true)];
    let mut out = Vec::new();
    for c in 0..2 {
        for &(s, e) in &ipus[c] {
            out.push(Event { kind: Kind::Ipu, channel: c, start: s, end: e });
        }
    }
    let both: Vec<bool> = (0..cells).map(|t| v[0][t] && v[1][t]).collect();
    for (s, e) in runs(&both, true) {
        let onset = |c: usize| ipus[c].iter().find(|r| r.0 <= s && s < r.1).unwrap().0;
        let channel = if onset(1) >= onset(0) { 1 } else { 0 };
        out.push(Event { kind: Kind::Overlap, channel, start: s, end: e });
    }
    for c in 0..2 {
        for w in ipus[c].windows(2) {
            let (lo, hi) = (w[0].1, w[1].0);
            if !ipus[1 - c].iter().any(|r| r.0 > lo && r.0 < hi) {
                out.push(Event { kind: Kind::Pause, channel: c, start: lo, end: hi });
            }
        }
    }
    let silent: Vec<bool> = (0..cells).map(|t| !v[0][t] && !v[1][t]).collect();
    for (s, e) in runs(&silent, true) {
        if s == 0 || e >= cells {
            continue;
        }
        let before = if v[0][s - 1] { 0 } else { 1 };
        let after = if v[0][e] { 0 } else { 1 };
        if before != after {
            out.push(Event { kind: Kind::Gap, channel: after, start: s, end: e });
        }
    }
    out.sort_by_key(|e| (e.start, e.kind, e.channel));
    out
}
