//! Call-stack reconstruction and windowed self-time elevations.
//!
//! Every thread replays its enter/exit events on its own stack. The time
//! between two consecutive events of a thread belongs to the method on top of
//! the stack before the later event (self time: callee time is never counted
//! for the caller). A method's elevation is its self time inside the sliding
//! window `[now - L, now]` divided by `L`, taking the largest value over all
//! threads that ran it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use crate::model::{Action, MethodId, ThreadId, TraceEvent, Window, DEFAULT_WINDOW_MICROS};

/// Default tick period, 100 ms.
pub const DEFAULT_TICK_MICROS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackFrame {
    pub method: MethodId,
    pub entered_at: u64,
}

/// A stretch of time during which `method` was on top of `thread`'s stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfTimeInterval {
    pub method: MethodId,
    pub thread: ThreadId,
    pub start: u64,
    pub end: u64,
}

impl SelfTimeInterval {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevationRow {
    pub method: MethodId,
    /// Windowed self time over window length, in `[0, 1]`.
    pub elevation: f64,
    /// Distinct threads that have ever entered the method.
    pub thread_count: u32,
}

/// Outcome of applying one event to a thread timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Pushed,
    Popped,
    /// The exit did not match the top; this many frames above the match
    /// were discarded first.
    Resynced { discarded: usize },
    /// The exit matched no frame on the stack.
    Dropped,
}

/// One thread's reconstructed stack and the self-time intervals still
/// relevant to the window.
#[derive(Debug, Clone)]
pub struct ThreadTimeline {
    thread: ThreadId,
    stack: Vec<StackFrame>,
    last_timestamp: Option<u64>,
    intervals: VecDeque<SelfTimeInterval>,
    /// Summed length of `intervals`, per method.
    totals: HashMap<MethodId, u64>,
    resyncs: u64,
    dropped_exits: u64,
}

impl ThreadTimeline {
    pub fn new(thread: ThreadId) -> Self {
        ThreadTimeline {
            thread,
            stack: Vec::new(),
            last_timestamp: None,
            intervals: VecDeque::new(),
            totals: HashMap::new(),
            resyncs: 0,
            dropped_exits: 0,
        }
    }

    pub fn thread(&self) -> ThreadId {
        self.thread
    }

    pub fn stack(&self) -> &[StackFrame] {
        &self.stack
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.last_timestamp
    }

    /// Closed intervals not yet pruned, oldest first.
    pub fn intervals(&self) -> impl Iterator<Item = &SelfTimeInterval> + '_ {
        self.intervals.iter()
    }

    pub fn resyncs(&self) -> u64 {
        self.resyncs
    }

    pub fn dropped_exits(&self) -> u64 {
        self.dropped_exits
    }

    /// The interval still accruing to the top of the stack, closed at `now`.
    pub fn open_interval(&self, now: u64) -> Option<SelfTimeInterval> {
        let top = self.stack.last()?;
        let start = self.last_timestamp?;
        Some(SelfTimeInterval { method: top.method, thread: self.thread, start, end: now.max(start) })
    }

    /// Applies one event and returns the interval it closed, if any.
    ///
    /// Timestamps must be non-decreasing per thread; a smaller timestamp is
    /// clamped to the previous one.
    pub fn apply_event(&mut self, event: TraceEvent) -> (Applied, Option<SelfTimeInterval>) {
        let now = self.last_timestamp.map_or(event.timestamp, |prev| event.timestamp.max(prev));
        let closed = self.open_interval(now).filter(|iv| !iv.is_empty());
        if let Some(iv) = closed {
            *self.totals.entry(iv.method).or_default() += iv.len();
            self.intervals.push_back(iv);
        }
        self.last_timestamp = Some(now);

        let applied = match event.action {
            Action::Enter => {
                self.stack.push(StackFrame { method: event.method, entered_at: now });
                Applied::Pushed
            }
            Action::Exit => match self.stack.iter().rposition(|f| f.method == event.method) {
                Some(pos) => {
                    let discarded = self.stack.len() - 1 - pos;
                    self.stack.truncate(pos);
                    if discarded == 0 {
                        Applied::Popped
                    } else {
                        self.resyncs += 1;
                        Applied::Resynced { discarded }
                    }
                }
                None => {
                    self.dropped_exits += 1;
                    Applied::Dropped
                }
            },
        };
        (applied, closed)
    }

    /// Forgets intervals that end at or before `window_start`.
    pub fn prune(&mut self, window_start: u64) {
        while let Some(front) = self.intervals.front() {
            if front.end > window_start {
                break;
            }
            let total = self.totals.get_mut(&front.method).expect("interval is counted");
            *total -= front.len();
            if *total == 0 {
                self.totals.remove(&front.method);
            }
            self.intervals.pop_front();
        }
    }

    /// Self time of `method` inside `window`, scanning the retained intervals.
    ///
    /// An interval still open is treated as ending at the window end.
    pub fn self_time(&self, method: MethodId, window: &Window) -> u64 {
        let closed: u64 = self
            .intervals
            .iter()
            .filter(|iv| iv.method == method)
            .map(|iv| window.overlap(iv.start, iv.end))
            .sum();
        let open = self
            .open_interval(window.end_micros)
            .filter(|iv| iv.method == method)
            .map_or(0, |iv| window.overlap(iv.start, iv.end));
        closed + open
    }

    /// Windowed self time of every method with a non-zero share, using the
    /// running totals. Requires `prune(window.start_micros())` first.
    fn windowed_self_times(&self, window: &Window, out: &mut HashMap<MethodId, u64>) {
        let start = window.start_micros();
        for (&method, &total) in &self.totals {
            out.insert(method, total);
        }
        // Intervals are disjoint and sorted, so at most the first one
        // straddles the window start.
        if let Some(front) = self.intervals.front() {
            if front.start < start {
                let cut = start - front.start;
                let entry = out.get_mut(&front.method).expect("front is counted");
                *entry -= cut;
                if *entry == 0 {
                    out.remove(&front.method);
                }
            }
        }
        if let Some(open) = self.open_interval(window.end_micros) {
            let len = window.overlap(open.start, open.end);
            if len > 0 {
                *out.entry(open.method).or_default() += len;
            }
        }
    }

    fn is_dormant(&self, window_start: u64) -> bool {
        self.stack.is_empty()
            && self.intervals.is_empty()
            && self.last_timestamp.is_none_or(|t| t <= window_start)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub events_applied: u64,
    pub resyncs: u64,
    pub dropped_exits: u64,
}

/// Drives all thread timelines and produces per-tick elevation rows.
#[derive(Debug, Clone)]
pub struct ElevationEngine {
    window_micros: u64,
    tick_micros: u64,
    active: BTreeMap<ThreadId, ThreadTimeline>,
    dormant: BTreeMap<ThreadId, ThreadTimeline>,
    /// Ingested events with timestamps past the current window end.
    backlog: BTreeMap<ThreadId, VecDeque<TraceEvent>>,
    threads_per_method: HashMap<MethodId, HashSet<ThreadId>>,
    closed_self_time: HashMap<MethodId, u64>,
    visible: BTreeSet<MethodId>,
    now: Option<u64>,
    latest_ingested: Option<u64>,
    ingested_since_tick: bool,
    stats: EngineStats,
}

impl Default for ElevationEngine {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_MICROS, DEFAULT_TICK_MICROS)
    }
}

impl ElevationEngine {
    pub fn new(window_micros: u64, tick_micros: u64) -> Self {
        assert!(window_micros > 0, "window length must be positive");
        assert!(tick_micros > 0, "tick length must be positive");
        ElevationEngine {
            window_micros,
            tick_micros,
            active: BTreeMap::new(),
            dormant: BTreeMap::new(),
            backlog: BTreeMap::new(),
            threads_per_method: HashMap::new(),
            closed_self_time: HashMap::new(),
            visible: BTreeSet::new(),
            now: None,
            latest_ingested: None,
            ingested_since_tick: false,
            stats: EngineStats::default(),
        }
    }

    pub fn window_micros(&self) -> u64 {
        self.window_micros
    }

    pub fn tick_micros(&self) -> u64 {
        self.tick_micros
    }

    /// End of the window at the last tick.
    pub fn now(&self) -> Option<u64> {
        self.now
    }

    pub fn window(&self) -> Option<Window> {
        self.now.map(|end| Window::new(self.window_micros, end))
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn latest_ingested(&self) -> Option<u64> {
        self.latest_ingested
    }

    /// Events waiting for the window end to reach them.
    pub fn backlog_len(&self) -> usize {
        self.backlog.values().map(VecDeque::len).sum()
    }

    pub fn thread_count(&self, method: MethodId) -> u32 {
        self.threads_per_method.get(&method).map_or(0, |s| s.len() as u32)
    }

    pub fn timeline(&self, thread: ThreadId) -> Option<&ThreadTimeline> {
        self.active.get(&thread).or_else(|| self.dormant.get(&thread))
    }

    /// Queues per-thread event runs (each non-decreasing in time).
    pub fn ingest(&mut self, batches: impl IntoIterator<Item = (ThreadId, Vec<TraceEvent>)>) {
        for (thread, events) in batches {
            let Some(last) = events.last() else { continue };
            self.latest_ingested = Some(self.latest_ingested.map_or(last.timestamp, |t| t.max(last.timestamp)));
            self.ingested_since_tick = true;
            self.backlog.entry(thread).or_default().extend(events);
        }
    }

    /// The window end the next live tick will use: the latest ingested
    /// timestamp when new events arrived, otherwise the previous end plus
    /// one tick.
    pub fn next_live_now(&self) -> Option<u64> {
        match (self.now, self.latest_ingested) {
            (_, None) => None,
            (None, Some(latest)) => Some(latest),
            (Some(now), Some(latest)) if self.ingested_since_tick => Some(now.max(latest)),
            (Some(now), Some(_)) => Some(now + self.tick_micros),
        }
    }

    /// Tick driven by the live clock rule of [`Self::next_live_now`].
    pub fn tick_live(&mut self) -> Vec<ElevationRow> {
        match self.next_live_now() {
            Some(now) => self.tick(now),
            None => Vec::new(),
        }
    }

    /// Advances the window end to `now_micros` (never backwards), applies
    /// queued events up to it and returns the rows that changed visibility or
    /// are non-zero.
    pub fn tick(&mut self, now_micros: u64) -> Vec<ElevationRow> {
        let now = self.now.map_or(now_micros, |prev| prev.max(now_micros));
        self.now = Some(now);
        self.ingested_since_tick = false;
        self.apply_backlog(now);

        let window = Window::new(self.window_micros, now);
        let start = window.start_micros();
        let mut best: HashMap<MethodId, u64> = HashMap::new();
        let mut per_thread = HashMap::new();
        let mut went_dormant = Vec::new();
        for (&thread, timeline) in self.active.iter_mut() {
            timeline.prune(start);
            if timeline.is_dormant(start) {
                went_dormant.push(thread);
                continue;
            }
            per_thread.clear();
            timeline.windowed_self_times(&window, &mut per_thread);
            for (&method, &micros) in &per_thread {
                let slot = best.entry(method).or_default();
                *slot = (*slot).max(micros);
            }
        }
        for thread in went_dormant {
            let timeline = self.active.remove(&thread).expect("listed above");
            self.dormant.insert(thread, timeline);
        }

        let mut rows: BTreeMap<MethodId, ElevationRow> = BTreeMap::new();
        for (&method, &micros) in &best {
            if micros > 0 {
                rows.insert(method, self.row(method, micros));
            }
        }
        for &method in &self.visible {
            rows.entry(method).or_insert_with(|| ElevationRow {
                method,
                elevation: 0.0,
                thread_count: self.thread_count(method),
            });
        }
        self.visible = best.iter().filter(|(_, &v)| v > 0).map(|(&m, _)| m).collect();
        rows.into_values().collect()
    }

    fn row(&self, method: MethodId, micros: u64) -> ElevationRow {
        ElevationRow {
            method,
            elevation: micros as f64 / self.window_micros as f64,
            thread_count: self.thread_count(method),
        }
    }

    fn apply_backlog(&mut self, now: u64) {
        let mut emptied = Vec::new();
        for (&thread, queue) in self.backlog.iter_mut() {
            if queue.front().is_none_or(|e| e.timestamp > now) {
                continue;
            }
            let timeline = match self.active.get_mut(&thread) {
                Some(t) => t,
                None => {
                    let revived = self.dormant.remove(&thread).unwrap_or_else(|| ThreadTimeline::new(thread));
                    self.active.entry(thread).or_insert(revived)
                }
            };
            while let Some(event) = queue.front().copied() {
                if event.timestamp > now {
                    break;
                }
                queue.pop_front();
                if event.action == Action::Enter {
                    self.threads_per_method.entry(event.method).or_default().insert(thread);
                }
                let before = (timeline.resyncs, timeline.dropped_exits);
                let (_, closed) = timeline.apply_event(event);
                if let Some(iv) = closed {
                    *self.closed_self_time.entry(iv.method).or_default() += iv.len();
                }
                self.stats.events_applied += 1;
                self.stats.resyncs += timeline.resyncs - before.0;
                self.stats.dropped_exits += timeline.dropped_exits - before.1;
            }
            if queue.is_empty() {
                emptied.push(thread);
            }
        }
        for thread in emptied {
            self.backlog.remove(&thread);
        }
    }

    /// Elevation of one method in the current window; `None` before the
    /// first tick.
    pub fn elevation(&self, method: MethodId) -> Option<ElevationRow> {
        let window = self.window()?;
        let micros = self
            .active
            .values()
            .chain(self.dormant.values())
            .map(|t| t.self_time(method, &window))
            .max()
            .unwrap_or(0);
        Some(self.row(method, micros))
    }

    /// Self time of `method` over the whole session up to the current window
    /// end, summed over threads.
    pub fn total_self_time(&self, method: MethodId) -> u64 {
        let closed = self.closed_self_time.get(&method).copied().unwrap_or(0);
        let open: u64 = match self.now {
            Some(now) => self
                .active
                .values()
                .filter_map(|t| t.open_interval(now))
                .filter(|iv| iv.method == method)
                .map(|iv| iv.len())
                .sum(),
            None => 0,
        };
        closed + open
    }

    /// Methods that have accrued any self time or been entered.
    pub fn known_methods(&self) -> BTreeSet<MethodId> {
        self.closed_self_time.keys().chain(self.threads_per_method.keys()).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: u64 = 1_000_000;
    const MAIN: MethodId = MethodId(1);
    const A: MethodId = MethodId(2);
    const B: MethodId = MethodId(3);
    const C: MethodId = MethodId(4);

    fn figure3() -> Vec<TraceEvent> {
        vec![
            TraceEvent::enter(0, MAIN),
            TraceEvent::enter(S, A),
            TraceEvent::enter(2 * S, C),
            TraceEvent::exit(3 * S, C),
            TraceEvent::exit(4 * S, A),
            TraceEvent::enter(5 * S, B),
            TraceEvent::exit(6 * S, B),
        ]
    }

    fn timeline(events: &[TraceEvent]) -> ThreadTimeline {
        let mut t = ThreadTimeline::new(ThreadId(1));
        for &e in events {
            t.apply_event(e);
        }
        t
    }

    #[test]
    fn enter_attributes_gap_to_previous_top() {
        let mut t = timeline(&[TraceEvent::enter(0, MAIN)]);
        let (applied, closed) = t.apply_event(TraceEvent::enter(5, A));
        assert_eq!(applied, Applied::Pushed);
        assert_eq!(closed, Some(SelfTimeInterval { method: MAIN, thread: ThreadId(1), start: 0, end: 5 }));
        assert_eq!(t.stack().iter().map(|f| f.method).collect::<Vec<_>>(), vec![MAIN, A]);
    }

    #[test]
    fn exit_pops_matching_top() {
        let mut t = timeline(&[TraceEvent::enter(0, MAIN), TraceEvent::enter(1, A), TraceEvent::enter(2, C)]);
        let (applied, closed) = t.apply_event(TraceEvent::exit(3, C));
        assert_eq!(applied, Applied::Popped);
        assert_eq!(closed.unwrap().method, C);
        assert_eq!((closed.unwrap().start, closed.unwrap().end), (2, 3));
        assert_eq!(t.stack().len(), 2);
    }

    #[test]
    fn mismatched_exit_resyncs() {
        let mut t = timeline(&[TraceEvent::enter(0, MAIN), TraceEvent::enter(1, A), TraceEvent::enter(2, C)]);
        let (applied, closed) = t.apply_event(TraceEvent::exit(4, A));
        assert_eq!(applied, Applied::Resynced { discarded: 1 });
        assert_eq!(closed.unwrap().method, C);
        assert_eq!((closed.unwrap().start, closed.unwrap().end), (2, 4));
        assert_eq!(t.stack().iter().map(|f| f.method).collect::<Vec<_>>(), vec![MAIN]);
        assert_eq!(t.resyncs(), 1);
    }

    #[test]
    fn unknown_exit_dropped() {
        let mut t = timeline(&[TraceEvent::enter(0, MAIN)]);
        let (applied, _) = t.apply_event(TraceEvent::exit(4, B));
        assert_eq!(applied, Applied::Dropped);
        assert_eq!(t.dropped_exits(), 1);
        assert_eq!(t.stack().len(), 1);
        // the time still belongs to main
        assert_eq!(t.self_time(MAIN, &Window::new(10, 10)), 10);
    }

    #[test]
    fn figure3_self_times() {
        let t = timeline(&figure3());
        let w = Window::new(6 * S, 6 * S);
        assert_eq!(t.self_time(A, &w), 2 * S);
        assert_eq!(t.self_time(C, &w), S);
        assert_eq!(t.self_time(B, &w), S);
        assert_eq!(t.self_time(MAIN, &w), 2 * S);
    }

    #[test]
    fn never_exited_method_is_clipped() {
        let t = timeline(&[TraceEvent::enter(0, A)]);
        let w = Window::new(3 * S, 13 * S);
        assert_eq!(t.self_time(A, &w), 3 * S);
    }

    #[test]
    fn figure3_tick() {
        let mut e = ElevationEngine::new(6 * S, DEFAULT_TICK_MICROS);
        e.ingest([(ThreadId(1), figure3())]);
        let rows = e.tick(6 * S);
        let got: Vec<_> = rows.iter().map(|r| (r.method, r.elevation, r.thread_count)).collect();
        assert_eq!(got, vec![(MAIN, 2.0 / 6.0, 1), (A, 2.0 / 6.0, 1), (B, 1.0 / 6.0, 1), (C, 1.0 / 6.0, 1)]);
        assert!((e.elevation(A).unwrap().elevation - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_events_no_rows() {
        let mut e = ElevationEngine::default();
        assert!(e.tick(5 * S).is_empty());
        assert!(e.tick_live().is_empty());
    }

    #[test]
    fn max_over_threads() {
        let mut e = ElevationEngine::new(3 * S, DEFAULT_TICK_MICROS);
        e.ingest([
            (ThreadId(1), vec![TraceEvent::enter(0, A), TraceEvent::exit(1_500_000, A)]),
            (ThreadId(2), vec![TraceEvent::enter(0, A), TraceEvent::exit(900_000, A)]),
        ]);
        let rows = e.tick(3 * S);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].elevation, 0.5);
        assert_eq!(rows[0].thread_count, 2);
    }

    #[test]
    fn drop_to_zero_reported_once() {
        let mut e = ElevationEngine::new(S, DEFAULT_TICK_MICROS);
        e.ingest([(ThreadId(1), vec![TraceEvent::enter(0, A), TraceEvent::exit(S / 2, A)])]);
        assert_eq!(e.tick(S / 2)[0].elevation, 0.5);
        let rows = e.tick(2 * S);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].method, rows[0].elevation, rows[0].thread_count), (A, 0.0, 1));
        assert!(e.tick(3 * S).is_empty());
    }

    #[test]
    fn never_returning_method_saturates() {
        let mut e = ElevationEngine::new(3 * S, DEFAULT_TICK_MICROS);
        e.ingest([(ThreadId(1), vec![TraceEvent::enter(0, A)])]);
        for k in 30..100 {
            let rows = e.tick(k * DEFAULT_TICK_MICROS);
            assert_eq!(rows[0].elevation, 1.0);
        }
    }

    #[test]
    fn live_clock_rule() {
        let mut e = ElevationEngine::new(3 * S, DEFAULT_TICK_MICROS);
        assert_eq!(e.next_live_now(), None);
        e.ingest([(ThreadId(1), vec![TraceEvent::enter(500, A)])]);
        assert_eq!(e.next_live_now(), Some(500));
        e.tick_live();
        assert_eq!(e.next_live_now(), Some(500 + DEFAULT_TICK_MICROS));
        e.tick_live();
        e.ingest([(ThreadId(1), vec![TraceEvent::exit(50_000, A)])]);
        // late data never moves the window backwards
        assert_eq!(e.next_live_now(), Some(100_500));
    }

    #[test]
    fn future_events_wait_in_backlog() {
        let mut e = ElevationEngine::new(3 * S, DEFAULT_TICK_MICROS);
        e.ingest([(ThreadId(1), figure3())]);
        e.tick(S);
        assert_eq!(e.backlog_len(), 5);
        assert_eq!(e.elevation(MAIN).unwrap().elevation, 1.0 / 3.0);
        e.tick(6 * S);
        assert_eq!(e.backlog_len(), 0);
    }

    #[test]
    fn dormant_threads_keep_thread_count() {
        let mut e = ElevationEngine::new(S, DEFAULT_TICK_MICROS);
        e.ingest([
            (ThreadId(1), vec![TraceEvent::enter(0, A), TraceEvent::exit(10, A)]),
            (ThreadId(2), vec![TraceEvent::enter(0, A), TraceEvent::exit(10, A)]),
        ]);
        e.tick(10);
        e.tick(5 * S);
        assert!(e.active.is_empty());
        assert_eq!(e.dormant.len(), 2);
        assert_eq!(e.thread_count(A), 2);
        e.ingest([(ThreadId(1), vec![TraceEvent::enter(6 * S, A)])]);
        let rows = e.tick(6 * S + 10);
        assert_eq!(rows[0].thread_count, 2);
        assert_eq!(e.active.len(), 1);
    }

    #[test]
    fn total_self_time_includes_open_interval() {
        let mut e = ElevationEngine::new(S, DEFAULT_TICK_MICROS);
        e.ingest([(ThreadId(1), figure3())]);
        e.tick(6 * S);
        assert_eq!(e.total_self_time(MAIN), 2 * S);
        e.tick(8 * S);
        assert_eq!(e.total_self_time(MAIN), 4 * S);
        assert_eq!(e.total_self_time(A), 2 * S);
    }
}
