//! Delivery controller: the stepped console demo and the proactive loop
//! that keeps discovering and serving roster members until everyone has the
//! file or the delivery window closes.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc::Receiver;

use thiserror::Error;

use crate::obexlite::{base_name, PushError, PushSession, TransferOutcome};
use crate::sdp::{
    filter_ftp, search_services, ConnectionUrl, SdpError, ServiceCatalog, ServiceRecord,
};
use crate::simnet::{quote_value, MacId, SimError, SimTime, SimWorld, PICONET_MAX_SLAVES};

pub const DEFAULT_WINDOW_BEFORE: SimTime = SimTime::from_millis(240_000);
pub const DEFAULT_WINDOW_AFTER: SimTime = SimTime::from_millis(240_000);
pub const DEFAULT_INQUIRY_INTERVAL: SimTime = SimTime::from_millis(30_000);
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PidError {
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
    #[error("file name must not be empty")]
    EmptyFileName,
    #[error("inquiry interval must be positive")]
    InvalidInterval,
    #[error("local device {0} is not in the world")]
    UnknownLocal(MacId),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// Course membership and delivery timing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Roster {
    pub course_id: String,
    pub members: BTreeSet<MacId>,
    pub course_start: SimTime,
    pub window_before: SimTime,
    pub window_after: SimTime,
    pub late_cutoff: Option<SimTime>,
    /// Transfer attempts allowed per member.
    pub max_retries: u32,
}

impl Roster {
    pub fn new(
        course_id: impl Into<String>,
        members: impl IntoIterator<Item = MacId>,
        course_start: SimTime,
    ) -> Self {
        Self {
            course_id: course_id.into(),
            members: members.into_iter().collect(),
            course_start,
            window_before: DEFAULT_WINDOW_BEFORE,
            window_after: DEFAULT_WINDOW_AFTER,
            late_cutoff: None,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn window_start(&self) -> SimTime {
        self.course_start.saturating_sub(self.window_before)
    }

    pub fn window_end(&self) -> SimTime {
        self.course_start + self.window_after
    }

    pub fn validate(&self) -> Result<(), PidError> {
        if self.window_end() <= self.window_start() {
            return Err(PidError::InvalidRoster("delivery window is empty".into()));
        }
        if let Some(cutoff) = self.late_cutoff {
            if cutoff < self.window_start() || cutoff > self.window_end() {
                return Err(PidError::InvalidRoster(format!(
                    "late cutoff {cutoff} outside window [{}, {}]",
                    self.window_start(),
                    self.window_end()
                )));
            }
        }
        if self.max_retries == 0 {
            return Err(PidError::InvalidRoster(
                "max_retries must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn verify_member(roster: &Roster, mac: MacId) -> bool {
    roster.members.contains(&mac)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    NoFtpService,
    Late,
    Refused,
    RetriesExhausted,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoFtpService => "no-ftp-service",
            SkipReason::Late => "late",
            SkipReason::Refused => "refused",
            SkipReason::RetriesExhausted => "retries-exhausted",
        }
    }
}

/// Per-member progress. `pending`, `delivered` and `skipped` partition the
/// roster at every step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionState {
    pub pending: BTreeSet<MacId>,
    pub delivered: BTreeMap<MacId, SimTime>,
    pub skipped: BTreeMap<MacId, SkipReason>,
    pub attempts: BTreeMap<MacId, u32>,
}

impl SessionState {
    pub fn new(members: &BTreeSet<MacId>) -> Self {
        Self {
            pending: members.clone(),
            ..Self::default()
        }
    }

    pub fn deliver(&mut self, mac: MacId, at: SimTime) {
        assert!(
            self.pending.remove(&mac),
            "{mac} delivered while not pending"
        );
        self.delivered.insert(mac, at);
    }

    pub fn skip(&mut self, mac: MacId, reason: SkipReason) {
        assert!(self.pending.remove(&mac), "{mac} skipped while not pending");
        self.skipped.insert(mac, reason);
    }

    pub fn record_attempt(&mut self, mac: MacId) -> u32 {
        let n = self.attempts.entry(mac).or_insert(0);
        *n += 1;
        *n
    }

    pub fn check(&self, members: &BTreeSet<MacId>) -> Result<(), String> {
        let delivered: BTreeSet<_> = self.delivered.keys().copied().collect();
        let skipped: BTreeSet<_> = self.skipped.keys().copied().collect();
        if !self.pending.is_disjoint(&delivered)
            || !self.pending.is_disjoint(&skipped)
            || !delivered.is_disjoint(&skipped)
        {
            return Err("pending, delivered and skipped overlap".into());
        }
        let union: BTreeSet<_> = self
            .pending
            .iter()
            .chain(&delivered)
            .chain(&skipped)
            .copied()
            .collect();
        if &union != members {
            return Err("pending, delivered and skipped do not cover the roster".into());
        }
        Ok(())
    }
}

/// Eligible members (FTP-capable, on the roster, still pending) in
/// first-discovery order, ties broken by MAC.
pub fn choose_push_target(
    ftp: &BTreeMap<MacId, ServiceRecord>,
    roster: &Roster,
    state: &SessionState,
    first_seen: &BTreeMap<MacId, SimTime>,
) -> Vec<(MacId, ConnectionUrl)> {
    let mut eligible: Vec<_> = ftp
        .iter()
        .filter(|(mac, _)| verify_member(roster, **mac) && state.pending.contains(mac))
        .map(|(mac, record)| (*mac, record.connection_url.clone()))
        .collect();
    eligible.sort_by_key(|(mac, _)| {
        (
            first_seen
                .get(mac)
                .copied()
                .unwrap_or(SimTime::from_millis(u64::MAX)),
            *mac,
        )
    });
    eligible
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemberOutcome {
    Delivered(SimTime),
    NeverDiscovered,
    NoFtpService,
    Late,
    Refused,
    RetriesExhausted,
    /// Seen, but the window closed before delivery.
    Pending,
}

impl MemberOutcome {
    pub fn label(self) -> &'static str {
        match self {
            MemberOutcome::Delivered(_) => "delivered",
            MemberOutcome::NeverDiscovered => "never-discovered",
            MemberOutcome::NoFtpService => "no-ftp-service",
            MemberOutcome::Late => "late",
            MemberOutcome::Refused => "refused",
            MemberOutcome::RetriesExhausted => "retries-exhausted",
            MemberOutcome::Pending => "pending",
        }
    }
}

impl From<SkipReason> for MemberOutcome {
    fn from(r: SkipReason) -> Self {
        match r {
            SkipReason::NoFtpService => MemberOutcome::NoFtpService,
            SkipReason::Late => MemberOutcome::Late,
            SkipReason::Refused => MemberOutcome::Refused,
            SkipReason::RetriesExhausted => MemberOutcome::RetriesExhausted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberReport {
    pub mac: MacId,
    pub outcome: MemberOutcome,
    pub first_seen: Option<SimTime>,
    pub attempts: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IterationStats {
    pub index: u32,
    pub started: SimTime,
    pub discovered: usize,
    pub new_members: usize,
    pub searched: usize,
    pub ftp_capable: usize,
    pub transfers: usize,
    pub delivered: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportTotals {
    pub members: usize,
    pub delivered: usize,
    pub never_discovered: usize,
    pub no_ftp_service: usize,
    pub late: usize,
    pub refused: usize,
    pub retries_exhausted: usize,
    pub pending: usize,
    pub non_members: usize,
}

impl ReportTotals {
    fn tally(members: &BTreeMap<MacId, MemberReport>, non_members: usize) -> Self {
        let mut t = ReportTotals {
            members: members.len(),
            non_members,
            ..Self::default()
        };
        for m in members.values() {
            match m.outcome {
                MemberOutcome::Delivered(_) => t.delivered += 1,
                MemberOutcome::NeverDiscovered => t.never_discovered += 1,
                MemberOutcome::NoFtpService => t.no_ftp_service += 1,
                MemberOutcome::Late => t.late += 1,
                MemberOutcome::Refused => t.refused += 1,
                MemberOutcome::RetriesExhausted => t.retries_exhausted += 1,
                MemberOutcome::Pending => t.pending += 1,
            }
        }
        t
    }

    pub fn outcome_sum(&self) -> usize {
        self.delivered
            + self.never_discovered
            + self.no_ftp_service
            + self.late
            + self.refused
            + self.retries_exhausted
            + self.pending
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryReport {
    pub roster: Roster,
    pub members: BTreeMap<MacId, MemberReport>,
    /// Discovered devices not on the roster, with first discovery time.
    pub non_members: BTreeMap<MacId, SimTime>,
    pub iterations: Vec<IterationStats>,
    pub totals: ReportTotals,
    pub state: SessionState,
    pub started: SimTime,
    pub finished: SimTime,
}

impl DeliveryReport {
    pub fn delivered(&self) -> BTreeSet<MacId> {
        self.state.delivered.keys().copied().collect()
    }

    pub fn outcome(&self, mac: MacId) -> Option<MemberOutcome> {
        self.members.get(&mac).map(|m| m.outcome)
    }

    /// Member outcome label, or `non-member` for discovered outsiders.
    pub fn outcome_label(&self, mac: MacId) -> Option<&'static str> {
        match self.members.get(&mac) {
            Some(m) => Some(m.outcome.label()),
            None => self.non_members.contains_key(&mac).then_some("non-member"),
        }
    }

    /// Line-oriented rendering. Record order: `report`, one `member` per
    /// roster MAC, one `nonmember` per outsider, one `iteration` per loop
    /// pass, then `summary`. Keys within a record are sorted.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let r = &self.roster;
        push_record(
            &mut out,
            "report",
            &[
                ("course", r.course_id.clone()),
                ("course_start", r.course_start.to_string()),
                ("finished", self.finished.to_string()),
                ("iterations", self.iterations.len().to_string()),
                (
                    "late_cutoff",
                    r.late_cutoff.map_or("none".into(), |c| c.to_string()),
                ),
                ("max_retries", r.max_retries.to_string()),
                ("members", r.members.len().to_string()),
                ("started", self.started.to_string()),
                ("window_end", r.window_end().to_string()),
                ("window_start", r.window_start().to_string()),
            ],
        );
        for m in self.members.values() {
            let at = match m.outcome {
                MemberOutcome::Delivered(t) => t.to_string(),
                _ => "none".into(),
            };
            push_record(
                &mut out,
                "member",
                &[
                    ("at", at),
                    ("attempts", m.attempts.to_string()),
                    (
                        "first_seen",
                        m.first_seen.map_or("none".into(), |t| t.to_string()),
                    ),
                    ("mac", m.mac.to_string()),
                    ("outcome", m.outcome.label().into()),
                ],
            );
        }
        for (mac, seen) in &self.non_members {
            push_record(
                &mut out,
                "nonmember",
                &[
                    ("first_seen", seen.to_string()),
                    ("mac", mac.to_string()),
                    ("outcome", "non-member".into()),
                ],
            );
        }
        for it in &self.iterations {
            push_record(
                &mut out,
                "iteration",
                &[
                    ("delivered", it.delivered.to_string()),
                    ("discovered", it.discovered.to_string()),
                    ("ftp", it.ftp_capable.to_string()),
                    ("n", it.index.to_string()),
                    ("new_members", it.new_members.to_string()),
                    ("searched", it.searched.to_string()),
                    ("t", it.started.to_string()),
                    ("transfers", it.transfers.to_string()),
                ],
            );
        }
        let t = &self.totals;
        push_record(
            &mut out,
            "summary",
            &[
                ("delivered", t.delivered.to_string()),
                ("late", t.late.to_string()),
                ("members", t.members.to_string()),
                ("never_discovered", t.never_discovered.to_string()),
                ("no_ftp_service", t.no_ftp_service.to_string()),
                ("non_members", t.non_members.to_string()),
                ("pending", t.pending.to_string()),
                ("refused", t.refused.to_string()),
                ("retries_exhausted", t.retries_exhausted.to_string()),
            ],
        );
        out
    }
}

fn push_record(out: &mut String, kind: &str, pairs: &[(&str, String)]) {
    out.push_str(kind);
    for (k, v) in pairs {
        out.push(' ');
        out.push_str(k);
        out.push('=');
        out.push_str(&quote_value(v));
    }
    out.push('\n');
}

/// A named payload to hand out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilePayload {
    pub name: String,
    pub payload: Vec<u8>,
}

impl FilePayload {
    pub fn new(name: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            payload: payload.into(),
        }
    }
}

/// Repeats inquiry, service search, filtering and sequential pushes every
/// `inquiry_interval` from `course_start - window_before` until every member
/// is settled or `course_start + window_after` is reached.
pub fn run_proactive(
    world: &mut SimWorld,
    local: MacId,
    roster: &Roster,
    file: &FilePayload,
    inquiry_interval: SimTime,
) -> Result<DeliveryReport, PidError> {
    roster.validate()?;
    if base_name(&file.name).is_empty() {
        return Err(PidError::EmptyFileName);
    }
    if inquiry_interval == SimTime::ZERO {
        return Err(PidError::InvalidInterval);
    }
    if world.device(local).is_none() {
        return Err(PidError::UnknownLocal(local));
    }

    let window_start = roster.window_start();
    let window_end = roster.window_end();
    if world.now() < window_start {
        world.advance(window_start);
    }
    let started = world.now();
    world.record(
        "proactive_started",
        [
            ("course", roster.course_id.clone()),
            ("members", roster.members.len().to_string()),
            ("window_end", window_end.to_string()),
        ],
    );

    let mut state = SessionState::new(&roster.members);
    let mut first_seen: BTreeMap<MacId, SimTime> = BTreeMap::new();
    let mut non_members: BTreeMap<MacId, SimTime> = BTreeMap::new();
    let mut searched: BTreeSet<MacId> = BTreeSet::new();
    let mut ftp: BTreeMap<MacId, ServiceRecord> = BTreeMap::new();
    let mut iterations = Vec::new();

    while !state.pending.is_empty() && world.now() < window_end {
        let iteration_start = world.now();
        let mut stats = IterationStats {
            index: iterations.len() as u32 + 1,
            started: iteration_start,
            ..IterationStats::default()
        };
        world.record("iteration_started", [("n", stats.index.to_string())]);

        let inquiry = world.run_inquiry(local)?;
        let present = inquiry.macs();
        stats.discovered = present.len();
        for &(mac, at) in &inquiry.discovered {
            if verify_member(roster, mac) {
                if first_seen.contains_key(&mac) {
                    continue;
                }
                first_seen.insert(mac, at);
                stats.new_members += 1;
                if roster.late_cutoff.is_some_and(|cutoff| at > cutoff)
                    && state.pending.contains(&mac)
                {
                    state.skip(mac, SkipReason::Late);
                    world.record(
                        "member_skipped",
                        [("mac", mac.to_string()), ("reason", "late".into())],
                    );
                }
            } else if let Entry::Vacant(slot) = non_members.entry(mac) {
                slot.insert(at);
                world.record("non_member", [("mac", mac.to_string())]);
            }
        }

        let to_search: BTreeSet<MacId> = present
            .iter()
            .filter(|m| state.pending.contains(m) && !searched.contains(m))
            .copied()
            .collect();
        let catalog = search_services(world, local, &to_search)?;
        stats.searched = to_search.len();
        let found = filter_ftp(&catalog);
        for mac in catalog.queried() {
            if catalog.departed.contains(&mac) {
                continue;
            }
            searched.insert(mac);
            if !found.contains_key(&mac) {
                state.skip(mac, SkipReason::NoFtpService);
                world.record(
                    "member_skipped",
                    [
                        ("mac", mac.to_string()),
                        ("reason", "no-ftp-service".into()),
                    ],
                );
            }
        }
        ftp.extend(found);

        let reachable: BTreeMap<MacId, ServiceRecord> = ftp
            .iter()
            .filter(|(mac, _)| present.contains(mac))
            .map(|(m, r)| (*m, r.clone()))
            .collect();
        let targets = choose_push_target(&reachable, roster, &state, &first_seen);
        stats.ftp_capable = targets.len();
        let free = PICONET_MAX_SLAVES.saturating_sub(world.slave_count(local));

        let mut links = Vec::new();
        for (mac, _url) in targets.into_iter().take(free) {
            match world.connect(local, mac) {
                Ok(link) => links.push(link),
                Err(_) => note_failure(world, roster, &mut state, mac),
            }
        }
        for &link in &links {
            let mac = link.slave;
            stats.transfers += 1;
            let mut session = PushSession::new(link);
            let result = session
                .connect(world)
                .and_then(|_| session.push_file(world, &file.name, &file.payload));
            session.disconnect(world);
            match result {
                Ok(outcome) => {
                    state.record_attempt(mac);
                    state.deliver(mac, outcome.finished);
                    stats.delivered += 1;
                    world.record("delivered", [("mac", mac.to_string())]);
                }
                Err(PushError::Refused) => {
                    state.record_attempt(mac);
                    state.skip(mac, SkipReason::Refused);
                    world.record(
                        "member_skipped",
                        [("mac", mac.to_string()), ("reason", "refused".into())],
                    );
                }
                Err(_) => note_failure(world, roster, &mut state, mac),
            }
        }
        for link in links {
            if world.is_linked(link) {
                world.disconnect(link, "batch-complete");
            }
        }
        debug_assert_eq!(state.check(&roster.members), Ok(()));
        iterations.push(stats);

        let next = iteration_start + inquiry_interval;
        if world.now() < next {
            world.advance(next);
        }
    }

    let finished = world.now();
    world.record(
        "proactive_finished",
        [
            ("delivered", state.delivered.len().to_string()),
            ("pending", state.pending.len().to_string()),
            ("skipped", state.skipped.len().to_string()),
        ],
    );

    let members: BTreeMap<MacId, MemberReport> = roster
        .members
        .iter()
        .map(|&mac| {
            let outcome = if let Some(at) = state.delivered.get(&mac) {
                MemberOutcome::Delivered(*at)
            } else if let Some(reason) = state.skipped.get(&mac) {
                (*reason).into()
            } else if first_seen.contains_key(&mac) {
                MemberOutcome::Pending
            } else {
                MemberOutcome::NeverDiscovered
            };
            let report = MemberReport {
                mac,
                outcome,
                first_seen: first_seen.get(&mac).copied(),
                attempts: state.attempts.get(&mac).copied().unwrap_or(0),
            };
            (mac, report)
        })
        .collect();
    let totals = ReportTotals::tally(&members, non_members.len());
    Ok(DeliveryReport {
        roster: roster.clone(),
        members,
        non_members,
        iterations,
        totals,
        state,
        started,
        finished,
    })
}

fn note_failure(world: &mut SimWorld, roster: &Roster, state: &mut SessionState, mac: MacId) {
    let attempts = state.record_attempt(mac);
    if attempts >= roster.max_retries {
        state.skip(mac, SkipReason::RetriesExhausted);
        world.record(
            "member_skipped",
            [
                ("mac", mac.to_string()),
                ("reason", "retries-exhausted".into()),
            ],
        );
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepFile {
    Path(PathBuf),
    Inline(FilePayload),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepConfig {
    pub local: MacId,
    pub file: StepFile,
    /// Device to push to; defaults to the first FTP-capable device found.
    pub target: Option<MacId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutput {
    pub number: u8,
    pub lines: Vec<String>,
}

impl fmt::Display for StepOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepAbort {
    PoweredOff,
    NoFtpDevices,
    NotFtpCapable(MacId),
    FileNotFound(String),
    TransferFailed(String),
}

impl fmt::Display for StepAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepAbort::PoweredOff => write!(f, "local device is powered off"),
            StepAbort::NoFtpDevices => write!(f, "no discovered device offers file transfer"),
            StepAbort::NotFtpCapable(mac) => write!(f, "target {mac} does not offer file transfer"),
            StepAbort::FileNotFound(path) => write!(f, "file not found: {path}"),
            StepAbort::TransferFailed(why) => write!(f, "transfer failed: {why}"),
        }
    }
}

/// Called after every step; interactive front ends block here.
pub trait StepGate {
    fn step_finished(&mut self, step: &StepOutput);
}

pub struct NoPause;

impl StepGate for NoPause {
    fn step_finished(&mut self, _step: &StepOutput) {}
}

/// Prints each step, then waits for one advance token. A closed channel
/// stops the waiting.
pub struct ChannelGate<W: Write> {
    tokens: Receiver<()>,
    out: W,
}

impl<W: Write> ChannelGate<W> {
    pub fn new(tokens: Receiver<()>, out: W) -> Self {
        Self { tokens, out }
    }
}

impl<W: Write> StepGate for ChannelGate<W> {
    fn step_finished(&mut self, step: &StepOutput) {
        let _ = write!(self.out, "{step}");
        let _ = writeln!(self.out, "[press enter to continue]");
        let _ = self.out.flush();
        let _ = self.tokens.recv();
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub steps: Vec<StepOutput>,
    /// Discovered devices in response order.
    pub discovered: Vec<(MacId, String)>,
    pub catalog: ServiceCatalog,
    pub ftp: BTreeMap<MacId, ServiceRecord>,
    pub delivered_to: Option<MacId>,
    pub transfer: Option<TransferOutcome>,
    pub abort: Option<StepAbort>,
}

impl StepReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&step.to_string());
            out.push('\n');
        }
        match (&self.abort, self.delivered_to) {
            (Some(abort), _) => out.push_str(&format!(
                "result=aborted reason={}\n",
                quote_value(&abort.to_string())
            )),
            (None, Some(mac)) => out.push_str(&format!("result=delivered target={mac}\n")),
            (None, None) => out.push_str("result=nothing-to-do\n"),
        }
        out
    }

    fn step(&mut self, gate: &mut dyn StepGate, number: u8, lines: Vec<String>) {
        let step = StepOutput { number, lines };
        gate.step_finished(&step);
        self.steps.push(step);
    }
}

/// The console walk-through: banner, power check, local name and address,
/// inquiry, device list, service search, service list, and one push.
pub fn run_stepped(
    world: &mut SimWorld,
    config: &StepConfig,
    gate: &mut dyn StepGate,
) -> Result<StepReport, PidError> {
    let local = world
        .device(config.local)
        .ok_or(PidError::UnknownLocal(config.local))?
        .clone();
    let mut report = StepReport::default();

    report.step(
        gate,
        0,
        vec![
            "***** Proactive Information Delivery *****".into(),
            format!("simulated radio, seed {}", world.seed()),
        ],
    );

    report.step(
        gate,
        1,
        vec!["Step 1. Is the power on?".into(), local.powered.to_string()],
    );
    if !local.powered {
        report.abort = Some(StepAbort::PoweredOff);
        return Ok(report);
    }
    report.step(
        gate,
        2,
        vec![
            "Step 2. Local device name (this client):".into(),
            local.friendly_name.clone(),
        ],
    );
    report.step(
        gate,
        3,
        vec![
            "Step 3. Local device address (this client):".into(),
            local.mac.to_string(),
        ],
    );

    let inquiry = world.run_inquiry(config.local)?;
    report.discovered = inquiry
        .discovered
        .iter()
        .map(|(mac, _)| {
            (
                *mac,
                world
                    .device(*mac)
                    .map(|d| d.friendly_name.clone())
                    .unwrap_or_default(),
            )
        })
        .collect();
    report.step(
        gate,
        4,
        vec![
            "Step 4. Query for local devices.".into(),
            "Starting device inquiry...".into(),
            format!(
                "Device inquiry complete; {} devices were discovered",
                report.discovered.len()
            ),
        ],
    );

    let mut lines = vec!["Step 5. The following devices were discovered:".into()];
    for (i, (mac, name)) in report.discovered.iter().enumerate() {
        lines.push(format!("Device {}. {} - MAC id: {}", i + 1, name, mac));
    }
    report.step(gate, 5, lines);

    if report.discovered.is_empty() {
        for (n, title) in [
            (6, "Step 6. Query all the devices for services offered."),
            (7, "Step 7. The following services were discovered:"),
            (8, "Step 8. Transfer file to a device."),
        ] {
            report.step(gate, n, vec![title.into(), "Nothing to do.".into()]);
        }
        return Ok(report);
    }

    let names: BTreeMap<MacId, String> = report.discovered.iter().cloned().collect();
    let order: Vec<MacId> = report.discovered.iter().map(|(m, _)| *m).collect();
    let targets: BTreeSet<MacId> = order.iter().copied().collect();
    report.catalog = search_services(world, config.local, &targets)?;
    let with_services: Vec<MacId> = order
        .iter()
        .filter(|m| report.catalog.services.contains_key(m))
        .copied()
        .collect();
    let mut lines = vec![
        "Step 6. Query all the devices for services offered.".into(),
        "Starting service inquiry...".into(),
    ];
    lines.extend(with_services.iter().map(|m| names[m].clone()));
    lines.push(format!(
        "Service query complete; {} devices have services:",
        with_services.len()
    ));
    for m in &with_services {
        lines.push(format!(
            "{} - Number services: {}",
            names[m],
            report.catalog.services[m].len()
        ));
    }
    report.step(gate, 6, lines);

    let mut lines = vec!["Step 7. The following services were discovered:".to_string()];
    for m in &with_services {
        lines.push(names[m].clone());
        for r in &report.catalog.services[m] {
            lines.push(format!(
                "Service {}. {} - Connection URL: {}",
                r.service_id, r.service_name, r.connection_url
            ));
        }
    }
    report.step(gate, 7, lines);

    report.ftp = filter_ftp(&report.catalog);
    let mut lines = vec!["Step 8. Transfer file to a device.".to_string()];
    let ftp_order: Vec<MacId> = order
        .iter()
        .filter(|m| report.ftp.contains_key(m))
        .copied()
        .collect();
    for (i, m) in ftp_order.iter().enumerate() {
        lines.push(format!(
            "Device {}. {} - Connection URL: {}",
            i + 1,
            names[m],
            report.ftp[m].connection_url
        ));
    }
    let target = match config.target {
        Some(t) if report.ftp.contains_key(&t) => Some(t),
        Some(t) => {
            report.abort = Some(StepAbort::NotFtpCapable(t));
            None
        }
        None if ftp_order.is_empty() => {
            report.abort = Some(StepAbort::NoFtpDevices);
            None
        }
        None => ftp_order.first().copied(),
    };
    let Some(target) = target else {
        lines.push(format!(
            "Aborted: {}",
            report.abort.as_ref().expect("abort set")
        ));
        report.step(gate, 8, lines);
        return Ok(report);
    };

    let file = match &config.file {
        StepFile::Inline(f) => f.clone(),
        StepFile::Path(path) => match std::fs::read(path) {
            Ok(bytes) => FilePayload::new(path.to_string_lossy(), bytes),
            Err(_) => {
                let shown = path.display().to_string();
                lines.push(format!("File not found: {shown}"));
                report.abort = Some(StepAbort::FileNotFound(shown));
                report.step(gate, 8, lines);
                return Ok(report);
            }
        },
    };
    let shown_name = base_name(&file.name).to_string();
    lines.push(format!(
        "Sending {} ({} bytes) to {} ({})",
        shown_name,
        file.payload.len(),
        names[&target],
        target
    ));

    let result = world
        .connect(config.local, target)
        .map_err(PushError::from)
        .and_then(|link| {
            let mut session = PushSession::new(link);
            let result = session
                .connect(world)
                .and_then(|_| session.push_file(world, &file.name, &file.payload));
            session.disconnect(world);
            world.disconnect(link, "done");
            result
        });
    match result {
        Ok(outcome) => {
            lines.push(format!(
                "Transfer complete; {} bytes in {} frames at t={}",
                outcome.bytes, outcome.frames, outcome.finished
            ));
            report.delivered_to = Some(target);
            report.transfer = Some(outcome);
        }
        Err(e) => {
            lines.push(format!("Transfer failed: {e}"));
            report.abort = Some(StepAbort::TransferFailed(e.to_string()));
        }
    }
    report.step(gate, 8, lines);
    Ok(report)
}
