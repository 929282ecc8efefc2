//! Event slicing, projection and bilinear event volumes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_VOLUME_BINS: usize = 15;
pub const DEFAULT_SLICE_PERIOD: f64 = 0.025;

/// Events above this count are accumulated in parallel.
const PARALLEL_MIN_EVENTS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    /// `+1` or `−1`.
    pub p: i8,
}

impl Event {
    pub fn new(t: f64, x: u16, y: u16, p: i8) -> Self {
        Self { t, x, y, p }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::Domain(format!("non-finite timestamp {}", self.t)));
        }
        if self.p != 1 && self.p != -1 {
            return Err(Error::Domain(format!("polarity must be ±1, got {}", self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventSlice {
    pub events: Vec<Event>,
    pub t_start: f64,
    pub t_end: f64,
}

impl EventSlice {
    pub fn new(events: Vec<Event>, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::Domain(format!("empty slice window [{t_start}, {t_end})")));
        }
        check_order(&events)?;
        if let Some(e) = events.iter().find(|e| e.t < t_start || e.t >= t_end) {
            return Err(Error::Domain(format!(
                "event at t={} outside slice [{t_start}, {t_end})",
                e.t
            )));
        }
        Ok(Self {
            events,
            t_start,
            t_end,
        })
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

fn check_order(events: &[Event]) -> Result<()> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].t < pair[0].t {
            return Err(Error::Ordering {
                index: i + 1,
                previous: pair[0].t,
                current: pair[1].t,
            });
        }
    }
    Ok(())
}

/// Index of the window `[k·period, (k+1)·period)` holding `t`, with the bounds
/// exactly as they will be computed.
pub fn window_index(t: f64, period: f64) -> i64 {
    let mut k = (t / period).floor() as i64;
    while t < k as f64 * period {
        k -= 1;
    }
    while t >= (k + 1) as f64 * period {
        k += 1;
    }
    k
}

/// Streams contiguous fixed-period slices out of time-ordered events.
///
/// Windows sit on the grid `[k·period, (k+1)·period)`, starting with the one
/// holding the first event. Empty windows between events are emitted too.
pub struct Slicer<I: Iterator> {
    events: std::iter::Peekable<I>,
    period: f64,
    next_index: Option<i64>,
    last_t: f64,
    seen: usize,
}

impl<I: Iterator<Item = Result<Event>>> Slicer<I> {
    pub fn new(events: I, period: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Domain(format!("slice period must be positive, got {period}")));
        }
        Ok(Self {
            events: events.peekable(),
            period,
            next_index: None,
            last_t: f64::NEG_INFINITY,
            seen: 0,
        })
    }
}

impl<I: Iterator<Item = Result<Event>>> Iterator for Slicer<I> {
    type Item = Result<EventSlice>;

    fn next(&mut self) -> Option<Self::Item> {
        let k = match self.next_index {
            Some(k) => {
                // Stop once the stream is exhausted.
                self.events.peek()?;
                k
            }
            None => match self.events.peek()? {
                Ok(e) => window_index(e.t, self.period),
                Err(_) => return self.events.next().and_then(|r| r.err()).map(Err),
            },
        };
        let t_start = k as f64 * self.period;
        let t_end = (k + 1) as f64 * self.period;
        let mut events = Vec::new();
        loop {
            match self.events.peek() {
                Some(Ok(e)) if e.t < t_end => {
                    let e = *e;
                    self.events.next();
                    if let Err(err) = e.validate() {
                        return Some(Err(err));
                    }
                    if e.t < self.last_t {
                        return Some(Err(Error::Ordering {
                            index: self.seen,
                            previous: self.last_t,
                            current: e.t,
                        }));
                    }
                    self.last_t = e.t;
                    self.seen += 1;
                    events.push(e);
                }
                Some(Err(_)) => {
                    let err = self.events.next().and_then(|r| r.err());
                    return err.map(Err);
                }
                _ => break,
            }
        }
        self.next_index = Some(k + 1);
        Some(Ok(EventSlice {
            events,
            t_start,
            t_end,
        }))
    }
}

/// Partitions an ordered stream into contiguous slices of `period` seconds.
pub fn slice_stream(events: &[Event], period: f64) -> Result<Vec<EventSlice>> {
    check_order(events)?;
    Slicer::new(events.iter().copied().map(Ok), period)?.collect()
}

/// Signed event counts discretized into `bins × height × width` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVolume {
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    /// Bin-major, then row-major.
    pub data: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

impl EventVolume {
    pub fn zeros(bins: usize, width: usize, height: usize, t_start: f64, t_end: f64) -> Self {
        Self {
            bins,
            width,
            height,
            data: vec![0.0; bins * width * height],
            t_start,
            t_end,
        }
    }

    #[inline]
    pub fn at(&self, bin: usize, col: usize, row: usize) -> f64 {
        self.data[(bin * self.height + row) * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over the spatial dimensions, one value per temporal bin.
    pub fn temporal_marginal(&self) -> Vec<f64> {
        self.data
            .chunks(self.width * self.height)
            .map(|plane| plane.iter().sum())
            .collect()
    }

    /// Distributes `polarity` with the triangular kernel `max(0, 1 − |a|)` in
    /// each of x, y and normalized time. Weight falling outside the tensor is dropped.
    pub fn deposit(&mut self, x: f64, y: f64, t_star: f64, polarity: f64) {
        let taps = |a: f64, n: usize| -> [(usize, f64); 2] {
            let base = a.floor();
            let frac = a - base;
            let i = base as i64;
            let tap = |j: i64, w: f64| {
                if j >= 0 && (j as usize) < n && w > 0.0 {
                    (j as usize, w)
                } else {
                    (usize::MAX, 0.0)
                }
            };
            [tap(i, 1.0 - frac), tap(i + 1, frac)]
        };
        for (b, wb) in taps(t_star, self.bins) {
            if wb == 0.0 {
                continue;
            }
            for (r, wr) in taps(y, self.height) {
                if wr == 0.0 {
                    continue;
                }
                for (c, wc) in taps(x, self.width) {
                    if wc == 0.0 {
                        continue;
                    }
                    self.data[(b * self.height + r) * self.width + c] += polarity * wb * wr * wc;
                }
            }
        }
    }
}

/// Normalized timestamp: `[t_start, t_end)` maps affinely onto `[0, bins − 1]`.
#[inline]
pub fn normalized_time(t: f64, t_start: f64, t_end: f64, bins: usize) -> f64 {
    (t - t_start) / (t_end - t_start) * (bins as f64 - 1.0)
}

fn check_bounds(slice: &EventSlice, width: usize, height: usize) -> Result<()> {
    if let Some(e) = slice
        .events
        .iter()
        .find(|e| e.x as usize >= width || e.y as usize >= height)
    {
        return Err(Error::OutOfBounds {
            x: e.x as f64,
            y: e.y as f64,
            width,
            height,
        });
    }
    Ok(())
}

/// Bilinear event volume of one slice.
pub fn build_volume(slice: &EventSlice, bins: usize, width: usize, height: usize) -> Result<EventVolume> {
    if bins == 0 {
        return Err(Error::Domain("event volume needs at least one bin".into()));
    }
    check_bounds(slice, width, height)?;
    let fresh = || EventVolume::zeros(bins, width, height, slice.t_start, slice.t_end);
    let accumulate = |mut vol: EventVolume, e: &Event| {
        let t_star = normalized_time(e.t, slice.t_start, slice.t_end, bins);
        vol.deposit(e.x as f64, e.y as f64, t_star, e.p as f64);
        vol
    };
    if slice.events.len() < PARALLEL_MIN_EVENTS {
        return Ok(slice.events.iter().fold(fresh(), accumulate));
    }
    Ok(slice
        .events
        .par_chunks(PARALLEL_MIN_EVENTS / 4)
        .map(|chunk| chunk.iter().fold(fresh(), accumulate))
        .reduce(fresh, |mut a, b| {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
            a
        }))
}

/// Pixels that received at least one event; out-of-sensor events are ignored.
pub fn project_events(slice: &EventSlice, width: usize, height: usize) -> Grid<bool> {
    let mut hit = Grid::filled(width, height, false);
    for e in &slice.events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x < width && y < height {
            *hit.get_mut(x, y) = true;
        }
    }
    hit
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(rng: &mut impl Rng, n: usize, span: f64, w: u16, h: u16) -> Vec<Event> {
        let mut ts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..span)).collect();
        ts.sort_by(f64::total_cmp);
        ts.into_iter()
            .map(|t| Event::new(t, rng.random_range(0..w), rng.random_range(0..h), if rng.random_bool(0.5) { 1 } else { -1 }))
            .collect()
    }

    #[test]
    fn slicing_example() {
        let events = vec![Event::new(0.010, 1, 1, 1), Event::new(0.030, 2, 2, -1)];
        let slices = slice_stream(&events, 0.025).unwrap();
        assert_eq!(slices.len(), 2);
        assert_eq!((slices[0].t_start, slices[0].t_end), (0.0, 0.025));
        assert_eq!(slices[0].events, vec![events[0]]);
        assert_eq!((slices[1].t_start, slices[1].t_end), (0.025, 0.05));
        assert_eq!(slices[1].events, vec![events[1]]);
        assert!(slice_stream(&[], 0.025).unwrap().is_empty());
    }

    #[test]
    fn slicing_emits_empty_gaps_and_rejects_disorder() {
        let events = vec![Event::new(0.001, 0, 0, 1), Event::new(0.080, 0, 0, 1)];
        let slices = slice_stream(&events, 0.025).unwrap();
        assert_eq!(slices.len(), 4);
        assert!(slices[1].events.is_empty() && slices[2].events.is_empty());

        let bad = vec![Event::new(0.03, 0, 0, 1), Event::new(0.01, 0, 0, 1)];
        assert!(matches!(slice_stream(&bad, 0.025), Err(Error::Ordering { index: 1, .. })));
    }

    #[test]
    fn slicing_partitions_random_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let events = random_stream(&mut rng, 1000, 1.0, 32, 24);
        let slices = slice_stream(&events, 0.025).unwrap();
        for s in &slices {
            assert!(s.events.iter().all(|e| s.t_start <= e.t && e.t < s.t_end));
        }
        for pair in slices.windows(2) {
            assert_eq!(pair[0].t_end, pair[1].t_start);
        }
        let joined: Vec<Event> = slices.into_iter().flat_map(|s| s.events).collect();
        assert_eq!(joined, events);
    }

    #[test]
    fn event_at_bin_center_stays_in_bin() {
        let slice = EventSlice::new(vec![Event::new(0.5, 3, 2, 1)], 0.0, 1.0).unwrap();
        // t* = 0.5·(5 − 1) = 2
        let vol = build_volume(&slice, 5, 8, 6).unwrap();
        assert_eq!(vol.at(2, 3, 2), 1.0);
        assert_eq!(vol.total(), 1.0);
    }

    #[test]
    fn half_bin_split() {
        // t* = 2.5 with 15 bins: t = 2.5/14 of the slice.
        let t = 2.5 / 14.0 * 0.025;
        let slice = EventSlice::new(vec![Event::new(t, 4, 1, 1)], 0.0, 0.025).unwrap();
        let vol = build_volume(&slice, DEFAULT_VOLUME_BINS, 8, 6).unwrap();
        assert!((vol.at(2, 4, 1) - 0.5).abs() < 1e-12);
        assert!((vol.at(3, 4, 1) - 0.5).abs() < 1e-12);
        assert!((vol.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fractional_positions_split_spatially() {
        let mut vol = EventVolume::zeros(2, 4, 4, 0.0, 1.0);
        vol.deposit(1.25, 2.5, 0.0, -1.0);
        assert!((vol.at(0, 1, 2) + 0.375).abs() < 1e-15);
        assert!((vol.at(0, 2, 2) + 0.125).abs() < 1e-15);
        assert!((vol.at(0, 1, 3) + 0.375).abs() < 1e-15);
        assert!((vol.total() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn volume_bounds_and_bins() {
        let slice = EventSlice::new(vec![Event::new(0.0, 8, 0, 1)], 0.0, 1.0).unwrap();
        assert!(matches!(build_volume(&slice, 15, 8, 6), Err(Error::OutOfBounds { .. })));
        let ok = EventSlice::new(vec![Event::new(0.0, 7, 0, 1)], 0.0, 1.0).unwrap();
        assert!(build_volume(&ok, 0, 8, 6).is_err());
        assert_eq!(build_volume(&ok, 1, 8, 6).unwrap().at(0, 7, 0), 1.0);
    }

    #[test]
    fn parallel_accumulation_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let events = random_stream(&mut rng, 200_000, 0.025, 40, 30);
        let slice = EventSlice::new(events, 0.0, 0.025).unwrap();
        let par = build_volume(&slice, 15, 40, 30).unwrap();
        let mut seq = EventVolume::zeros(15, 40, 30, 0.0, 0.025);
        for e in &slice.events {
            seq.deposit(e.x as f64, e.y as f64, normalized_time(e.t, 0.0, 0.025, 15), e.p as f64);
        }
        for (a, b) in par.data.iter().zip(&seq.data) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    /// Independent 1D linear binning of normalized timestamps.
    fn temporal_histogram(slice: &EventSlice, bins: usize) -> Vec<f64> {
        let mut h = vec![0.0; bins];
        for e in &slice.events {
            let ts = (e.t - slice.t_start) / (slice.t_end - slice.t_start) * (bins - 1) as f64;
            for (b, slot) in h.iter_mut().enumerate() {
                *slot += e.p as f64 * (1.0 - (ts - b as f64).abs()).max(0.0);
            }
        }
        h
    }

    #[test]
    fn temporal_marginal_matches_1d_binning() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let events = random_stream(&mut rng, 5000, 0.025, 20, 10);
        let slice = EventSlice::new(events, 0.0, 0.025).unwrap();
        let vol = build_volume(&slice, 15, 20, 10).unwrap();
        for (a, b) in vol.temporal_marginal().iter().zip(temporal_histogram(&slice, 15)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        let empty = EventSlice::new(vec![], 0.0, 0.025).unwrap();
        assert_eq!(project_events(&empty, 5, 4).count_true(), 0);
        let three = EventSlice::new(vec![Event::new(0.0, 2, 1, 1); 3], 0.0, 0.025).unwrap();
        let p = project_events(&three, 5, 4);
        assert_eq!(p.count_true(), 1);
        assert!(*p.get(2, 1));
    }

    proptest! {
        #[test]
        fn projection_is_set_of_pixels(seed in any::<u64>(), n in 0usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events = random_stream(&mut rng, n, 0.025, 12, 9);
            let slice = EventSlice::new(events.clone(), 0.0, 0.025).unwrap();
            let p = project_events(&slice, 12, 9);
            let set: std::collections::HashSet<(u16, u16)> = events.iter().map(|e| (e.x, e.y)).collect();
            prop_assert_eq!(p.count_true(), set.len());
            for (x, y) in set {
                prop_assert!(*p.get(x as usize, y as usize));
            }
        }

        #[test]
        fn volume_mass_is_conserved_across_slices(seed in any::<u64>(), n in 0usize..2000, bins in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events = random_stream(&mut rng, n, 0.3, 16, 12);
            let polarity: f64 = events.iter().map(|e| e.p as f64).sum();
            let mass: f64 = slice_stream(&events, 0.025)
                .unwrap()
                .iter()
                .map(|s| build_volume(s, bins, 16, 12).unwrap().total())
                .sum();
            prop_assert!((mass - polarity).abs() < 1e-9);
        }
    }
}
