//! Bug classification and site-level deduplication.
//!
//! Signals from the state machine map onto the three flush/fence classes;
//! an end-of-trace sweep turns every store that never became durable into
//! an unpersisted-write report. Reports are keyed by `(class, site)`, so a
//! site hit ten thousand times is one bug with ten thousand occurrences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pm_state::{MachineState, OracleSignal, SignalKind};
use crate::trace::{EventKind, RegionTable, Trace, TraceEvent};

/// Maximum number of sample event indices kept per report.
pub const MAX_EVIDENCE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BugClass {
    /// Unpersisted write, correctness.
    #[serde(rename = "U-C")]
    UnpersistedCorrectness,
    /// Unpersisted write to intentionally volatile data, performance.
    #[serde(rename = "U-P")]
    UnpersistedPerformance,
    /// Extra flush of an already flushed line.
    #[serde(rename = "EP")]
    ExtraFlush,
    /// Flush of a line that was never modified.
    #[serde(rename = "Fl-P")]
    FlushUntouched,
    /// Fence with nothing to commit.
    #[serde(rename = "Fe-P")]
    EmptyFence,
}

impl BugClass {
    /// Fixed reporting order.
    pub const ALL: [BugClass; 5] = [
        BugClass::UnpersistedCorrectness,
        BugClass::UnpersistedPerformance,
        BugClass::ExtraFlush,
        BugClass::FlushUntouched,
        BugClass::EmptyFence,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BugClass::UnpersistedCorrectness => "U-C",
            BugClass::UnpersistedPerformance => "U-P",
            BugClass::ExtraFlush => "EP",
            BugClass::FlushUntouched => "Fl-P",
            BugClass::EmptyFence => "Fe-P",
        }
    }

    fn from_signal(kind: SignalKind) -> Self {
        match kind {
            SignalKind::DuplicateFlush => BugClass::ExtraFlush,
            SignalKind::FlushUntouched => BugClass::FlushUntouched,
            SignalKind::EmptyFence => BugClass::EmptyFence,
        }
    }
}

impl fmt::Display for BugClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub bug_class: BugClass,
    pub site: String,
    pub occurrences: u64,
    pub first_event: usize,
    pub last_event: usize,
    pub evidence: Vec<usize>,
    pub lines: BTreeSet<u64>,
}

impl BugReport {
    fn new(bug_class: BugClass, site: &str, event: usize) -> Self {
        Self {
            bug_class,
            site: site.to_owned(),
            occurrences: 0,
            first_event: event,
            last_event: event,
            evidence: Vec::new(),
            lines: BTreeSet::new(),
        }
    }

    fn fold(&mut self, event: usize, line: Option<u64>) {
        self.occurrences += 1;
        self.first_event = self.first_event.min(event);
        self.last_event = self.last_event.max(event);
        if self.evidence.len() < MAX_EVIDENCE {
            self.evidence.push(event);
        }
        if let Some(line) = line {
            self.lines.insert(line);
        }
    }
}

/// Accumulates occurrences into deduplicated reports.
#[derive(Debug, Clone, Default)]
pub struct ReportSet {
    reports: BTreeMap<(BugClass, String), BugReport>,
}

impl ReportSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, class: BugClass, site: &str, event: usize, line: Option<u64>) {
        self.reports
            .entry((class, site.to_owned()))
            .or_insert_with(|| BugReport::new(class, site, event))
            .fold(event, line);
    }

    /// Folds state-machine signals. `events` must be indexable by event index.
    pub fn record_signals(&mut self, signals: &[OracleSignal], events: &[TraceEvent]) {
        for s in signals {
            let site = &events[s.event].site;
            self.record(BugClass::from_signal(s.kind), site, s.event, s.line);
        }
    }

    /// Reports every store whose bytes are still not durable in `machine`.
    pub fn sweep_unpersisted(
        &mut self,
        machine: &MachineState,
        events: &[TraceEvent],
        regions: &RegionTable,
    ) {
        for line in machine.lines() {
            for &idx in line.unpersisted_stores() {
                let event = &events[idx];
                let EventKind::Store { addr, value } = &event.kind else {
                    continue;
                };
                let class = if regions.intersects_volatile_hint(*addr, value.len() as u64) {
                    BugClass::UnpersistedPerformance
                } else {
                    BugClass::UnpersistedCorrectness
                };
                self.record(class, &event.site, idx, Some(line.line_base));
            }
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &(BugClass, String)> {
        self.reports.keys()
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Reports ordered by first event, then site, then class.
    pub fn into_sorted(self) -> Vec<BugReport> {
        let mut out: Vec<_> = self.reports.into_values().collect();
        sort_reports(&mut out);
        out
    }
}

fn sort_reports(reports: &mut [BugReport]) {
    reports.sort_by(|a, b| {
        (a.first_event, &a.site, a.bug_class).cmp(&(b.first_event, &b.site, b.bug_class))
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckOutcome {
    pub reports: Vec<BugReport>,
    pub summary: Summary,
}

/// Replays `trace` and returns deduplicated bug reports.
pub fn check_trace(trace: &Trace) -> CheckOutcome {
    let mut machine = MachineState::scoped(&trace.regions);
    let mut set = ReportSet::new();
    for event in &trace.events {
        let signals = machine
            .apply_event(event)
            .expect("parsed traces have dense indices");
        set.record_signals(&signals, &trace.events);
    }
    set.sweep_unpersisted(&machine, &trace.events, &trace.regions);
    let reports = set.into_sorted();
    let summary = summarize(&reports);
    CheckOutcome { reports, summary }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub class: BugClass,
    pub unique: u64,
    pub occurrences: u64,
}

/// Per-class unique and occurrence counts, always in [`BugClass::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub total_unique: u64,
    pub total_occurrences: u64,
}

impl Summary {
    pub fn row(&self, class: BugClass) -> SummaryRow {
        self.rows
            .iter()
            .copied()
            .find(|r| r.class == class)
            .expect("summary holds every class")
    }

    pub fn unique(&self, class: BugClass) -> u64 {
        self.row(class).unique
    }

    pub fn occurrences(&self, class: BugClass) -> u64 {
        self.row(class).occurrences
    }
}

pub fn summarize(reports: &[BugReport]) -> Summary {
    let rows: Vec<SummaryRow> = BugClass::ALL
        .iter()
        .map(|&class| {
            let members = reports.iter().filter(|r| r.bug_class == class);
            SummaryRow {
                class,
                unique: members.clone().count() as u64,
                occurrences: members.map(|r| r.occurrences).sum(),
            }
        })
        .collect();
    Summary {
        total_unique: rows.iter().map(|r| r.unique).sum(),
        total_occurrences: rows.iter().map(|r| r.occurrences).sum(),
        rows,
    }
}

/// Output renderers used by the CLI.
pub mod render {
    use super::*;

    const BAR_WIDTH: f64 = 40.0;

    pub fn json(reports: &[BugReport]) -> String {
        serde_json::to_string_pretty(reports).expect("reports serialize")
    }

    pub fn csv(reports: &[BugReport]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "site", "occurrences", "first_event", "last_event"])
            .expect("in-memory csv");
        for r in reports {
            w.write_record([
                r.bug_class.label(),
                &r.site,
                &r.occurrences.to_string(),
                &r.first_event.to_string(),
                &r.last_event.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("csv is UTF-8")
    }

    /// Bar length for `count`, log-scaled against `max`.
    pub fn bar_len(count: u64, max: u64) -> usize {
        if count == 0 || max == 0 {
            return 0;
        }
        let scaled = (count as f64).ln_1p() / (max as f64).ln_1p() * BAR_WIDTH;
        (scaled.round() as usize).max(1)
    }

    /// Occurrence totals per class as a text bar chart (log scale).
    pub fn bar_chart(summary: &Summary) -> String {
        let max = summary
            .rows
            .iter()
            .map(|r| r.occurrences)
            .max()
            .unwrap_or(0);
        let mut out = String::from("class | occurrences (log scale)\n");
        for row in &summary.rows {
            let bar = "#".repeat(bar_len(row.occurrences, max));
            out.push_str(&format!(
                "{:<5} | {:<40} {} ({} unique)\n",
                row.class.label(),
                bar,
                row.occurrences,
                row.unique
            ));
        }
        out.push_str(&format!(
            "total | {} unique, {} occurrences\n",
            summary.total_unique, summary.total_occurrences
        ));
        out
    }

    pub fn text(reports: &[BugReport]) -> String {
        let mut out = String::new();
        for r in reports {
            out.push_str(&format!(
                "{:<5} {} x{} (events {}..={})\n",
                r.bug_class.label(),
                r.site,
                r.occurrences,
                r.first_event,
                r.last_event
            ));
        }
        if !reports.is_empty() {
            out.push('\n');
        }
        out.push_str(&bar_chart(&summarize(reports)));
        out
    }
}
