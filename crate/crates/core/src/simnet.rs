//! Deterministic discrete-event radio world.
//!
//! A [`SimWorld`] owns every simulated device, the piconets formed between
//! them, a time-ordered queue of pending events and an append-only event log.
//! Events scheduled for the same instant fire in insertion order, and all
//! randomness comes from a single seeded ChaCha stream, so replaying a
//! scenario with the same seed reproduces the log byte for byte.

use std::borrow::Cow;
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::obexlite::PushServer;
use crate::sdp::ServiceRecord;

/// Maximum number of active slaves in one piconet.
pub const PICONET_MAX_SLAVES: usize = 7;

/// 48-bit device address, rendered as 12 uppercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacId(u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid MAC id {0:?}: expected exactly 12 hexadecimal digits")]
pub struct MacParseError(pub String);

impl MacId {
    pub const MAX: u64 = 0xFFFF_FFFF_FFFF;

    pub fn from_u64(value: u64) -> Option<Self> {
        (value <= Self::MAX).then_some(Self(value))
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }

    pub fn parse(text: &str) -> Result<Self, MacParseError> {
        if text.len() != 12 || !text.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(MacParseError(text.to_string()));
        }
        u64::from_str_radix(text, 16)
            .map(Self)
            .map_err(|_| MacParseError(text.to_string()))
    }
}

impl FromStr for MacId {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for MacId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:012X}", self.0)
    }
}

impl fmt::Debug for MacId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacId({self})")
    }
}

/// Milliseconds since the scenario epoch. Also used for durations.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_millis(ms: u64) -> Self {
        Self(ms)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position in meters on the room floor.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Feet to meters, for converting reported ranges.
pub fn feet_to_meters(feet: f64) -> f64 {
    feet * 0.3048
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct RadioParams {
    pub range_m: f64,
    pub inquiry_duration: SimTime,
    pub service_search_per_device: SimTime,
    pub link_rate_bps: u64,
    pub session_overhead: SimTime,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            range_m: 10.0,
            inquiry_duration: SimTime::from_millis(16_000),
            service_search_per_device: SimTime::from_millis(2_000),
            link_rate_bps: 3_000_000,
            session_overhead: SimTime::from_millis(100),
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.range_m.is_finite()
            && self.range_m > 0.0
            && self.inquiry_duration > SimTime::ZERO
            && self.service_search_per_device > SimTime::ZERO
            && self.link_rate_bps > 0
            && self.session_overhead > SimTime::ZERO;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParams)
        }
    }
}

/// Time to push `bytes` over one link: fixed session overhead plus the
/// serialization time at the link rate, rounded up to the next millisecond.
pub fn transfer_duration(bytes: u64, params: &RadioParams) -> SimTime {
    let bits = u128::from(bytes) * 8 * 1000;
    let rate = u128::from(params.link_rate_bps);
    let millis = bits.div_ceil(rate);
    params.session_overhead + SimTime(u64::try_from(millis).unwrap_or(u64::MAX))
}

/// True iff the two devices are within `params.range_m` of each other.
pub fn in_range(a: &RadioDevice, b: &RadioDevice, params: &RadioParams) -> bool {
    a.position.distance(b.position) <= params.range_m
}

#[derive(Clone, Debug)]
pub struct RadioDevice {
    pub mac: MacId,
    pub friendly_name: String,
    pub powered: bool,
    pub discoverable: bool,
    pub position: Point,
    pub services: Vec<ServiceRecord>,
    pub arrival: SimTime,
    pub departure: Option<SimTime>,
    /// Answer every push with Forbidden.
    pub refuse_push: bool,
    /// 1-based transfer attempts on which the link is dropped mid-transfer.
    pub link_loss_attempts: BTreeSet<u32>,
    pub inbox: BTreeMap<String, Vec<u8>>,
    pub(crate) push_server: PushServer,
}

impl RadioDevice {
    pub fn new(mac: MacId, friendly_name: impl Into<String>) -> Self {
        Self {
            mac,
            friendly_name: friendly_name.into(),
            powered: true,
            discoverable: true,
            position: Point::default(),
            services: Vec::new(),
            arrival: SimTime::ZERO,
            departure: None,
            refuse_push: false,
            link_loss_attempts: BTreeSet::new(),
            inbox: BTreeMap::new(),
            push_server: PushServer::default(),
        }
    }

    pub fn at(mut self, x: f64, y: f64) -> Self {
        self.position = Point::new(x, y);
        self
    }

    pub fn with_services(mut self, services: Vec<ServiceRecord>) -> Self {
        self.services = services;
        self
    }

    pub fn present_between(mut self, arrival: SimTime, departure: Option<SimTime>) -> Self {
        self.arrival = arrival;
        self.departure = departure;
        self
    }

    pub fn is_present(&self, at: SimTime) -> bool {
        self.arrival <= at && self.departure.is_none_or(|d| at < d)
    }

    /// Whether this device answers an inquiry at `at`.
    pub fn responds_at(&self, at: SimTime) -> bool {
        self.powered && self.discoverable && self.is_present(at)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piconet {
    pub master: MacId,
    pub slaves: BTreeSet<MacId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkHandle {
    pub master: MacId,
    pub slave: MacId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InquiryHandle {
    pub id: u32,
    pub initiator: MacId,
    pub completes_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InquiryResult {
    pub id: u32,
    pub initiator: MacId,
    pub started: SimTime,
    pub completed: SimTime,
    /// Responding devices in response order (time, then MAC).
    pub discovered: Vec<(MacId, SimTime)>,
}

impl InquiryResult {
    pub fn macs(&self) -> BTreeSet<MacId> {
        self.discovered.iter().map(|(mac, _)| *mac).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("radio parameters must all be strictly positive")]
    InvalidParams,
    #[error("duplicate device {0}")]
    DuplicateDevice(MacId),
    #[error("device {0}: arrival must precede departure")]
    BadPresence(MacId),
    #[error("unknown device {0}")]
    UnknownDevice(MacId),
    #[error("device {0} is powered off")]
    PoweredOff(MacId),
    #[error("device {0} is not present")]
    NotPresent(MacId),
    #[error("devices {0} and {1} are out of range")]
    OutOfRange(MacId, MacId),
    #[error("piconet of {0} already has {PICONET_MAX_SLAVES} slaves")]
    PiconetFull(MacId),
    #[error("{slave} is already linked to {master}")]
    AlreadyLinked { master: MacId, slave: MacId },
    #[error("device {0} cannot link to itself")]
    SelfLink(MacId),
    #[error("cannot schedule at {at} before now ({now})")]
    PastTime { at: SimTime, now: SimTime },
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub time: SimTime,
    pub seq: u64,
    pub name: String,
    pub fields: BTreeMap<String, String>,
}

impl LogEntry {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }
}

/// Values are written bare unless empty or containing whitespace, quotes,
/// backslashes or `=`, in which case they are double-quoted with `\"`, `\\`,
/// `\n` escapes.
pub fn quote_value(value: &str) -> Cow<'_, str> {
    let needs_quotes = value.is_empty()
        || value
            .chars()
            .any(|c| c.is_whitespace() || c == '"' || c == '\\' || c == '=');
    if !needs_quotes {
        return Cow::Borrowed(value);
    }
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    Cow::Owned(out)
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} seq={} ev={}", self.time, self.seq, self.name)?;
        for (key, value) in &self.fields {
            write!(f, " {key}={}", quote_value(value))?;
        }
        Ok(())
    }
}

/// Renders entries one per line, LF terminated.
pub fn render_log(entries: &[LogEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&entry.to_string());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
enum Event {
    Arrived(MacId),
    Departed(MacId),
    Discovered { inquiry: u32, mac: MacId },
    InquiryCompleted { inquiry: u32 },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug)]
struct PendingInquiry {
    initiator: MacId,
    started: SimTime,
    completes_at: SimTime,
    expected: usize,
    responses: Vec<(MacId, SimTime)>,
}

/// The simulated universe. Single-threaded; every mutation goes through
/// this value.
pub struct SimWorld {
    now: SimTime,
    seed: u64,
    rng: ChaCha8Rng,
    params: RadioParams,
    loss_probability: f64,
    devices: BTreeMap<MacId, RadioDevice>,
    piconets: BTreeMap<MacId, Piconet>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    log: Vec<LogEntry>,
    next_inquiry: u32,
    pending_inquiries: BTreeMap<u32, PendingInquiry>,
    inquiries: BTreeMap<u32, InquiryResult>,
    discovered: BTreeMap<MacId, BTreeSet<MacId>>,
    transfer_attempts: BTreeMap<MacId, u32>,
}

impl fmt::Debug for SimWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimWorld")
            .field("now", &self.now)
            .field("seed", &self.seed)
            .field("devices", &self.devices.len())
            .field("queued", &self.queue.len())
            .field("logged", &self.log.len())
            .finish()
    }
}

impl SimWorld {
    pub fn new(seed: u64, params: RadioParams) -> Result<Self, SimError> {
        params.validate()?;
        Ok(Self {
            now: SimTime::ZERO,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params,
            loss_probability: 0.0,
            devices: BTreeMap::new(),
            piconets: BTreeMap::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            log: Vec::new(),
            next_inquiry: 1,
            pending_inquiries: BTreeMap::new(),
            inquiries: BTreeMap::new(),
            discovered: BTreeMap::new(),
            transfer_attempts: BTreeMap::new(),
        })
    }

    /// Probability that any single transfer loses its link halfway through.
    pub fn set_loss_probability(&mut self, p: f64) {
        self.loss_probability = p.clamp(0.0, 1.0);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn render_log(&self) -> String {
        render_log(&self.log)
    }

    pub fn device(&self, mac: MacId) -> Option<&RadioDevice> {
        self.devices.get(&mac)
    }

    pub fn device_mut(&mut self, mac: MacId) -> Option<&mut RadioDevice> {
        self.devices.get_mut(&mac)
    }

    pub fn devices(&self) -> impl Iterator<Item = &RadioDevice> {
        self.devices.values()
    }

    pub fn piconet(&self, master: MacId) -> Option<&Piconet> {
        self.piconets.get(&master)
    }

    pub fn slave_count(&self, master: MacId) -> usize {
        self.piconets.get(&master).map_or(0, |p| p.slaves.len())
    }

    /// Devices the initiator has seen in any completed inquiry.
    pub fn discovered_by(&self, initiator: MacId) -> BTreeSet<MacId> {
        self.discovered.get(&initiator).cloned().unwrap_or_default()
    }

    pub fn inquiry_result(&self, handle: &InquiryHandle) -> Option<&InquiryResult> {
        self.inquiries.get(&handle.id)
    }

    pub fn is_present(&self, mac: MacId, at: SimTime) -> bool {
        self.devices.get(&mac).is_some_and(|d| d.is_present(at))
    }

    pub fn add_device(&mut self, device: RadioDevice) -> Result<(), SimError> {
        let mac = device.mac;
        if self.devices.contains_key(&mac) {
            return Err(SimError::DuplicateDevice(mac));
        }
        if device.departure.is_some_and(|d| d <= device.arrival) {
            return Err(SimError::BadPresence(mac));
        }
        let arrival = device.arrival.max(self.now);
        let departure = device.departure;
        self.devices.insert(mac, device);
        self.schedule(arrival, Event::Arrived(mac))?;
        if let Some(departure) = departure {
            self.schedule(departure.max(self.now), Event::Departed(mac))?;
        }
        Ok(())
    }

    fn schedule(&mut self, time: SimTime, event: Event) -> Result<(), SimError> {
        if time < self.now {
            return Err(SimError::PastTime {
                at: time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq, event }));
        Ok(())
    }

    /// Log sequence numbers count lines, so they strictly increase along
    /// the log regardless of how entries were produced.
    fn push_log(&mut self, time: SimTime, name: &str, fields: BTreeMap<String, String>) {
        debug_assert!(self.log.last().is_none_or(|last| last.time <= time));
        let seq = self.log.len() as u64;
        self.log.push(LogEntry {
            time,
            seq,
            name: name.to_string(),
            fields,
        });
    }

    /// Appends an event at the current instant, after everything already
    /// due has been processed.
    pub fn record<K, V, I>(&mut self, name: &str, fields: I)
    where
        K: Into<String>,
        V: ToString,
        I: IntoIterator<Item = (K, V)>,
    {
        self.flush();
        let fields = fields
            .into_iter()
            .map(|(k, v)| (k.into(), v.to_string()))
            .collect();
        self.push_log(self.now, name, fields);
    }

    /// Processes every queued event due at or before the current instant.
    pub fn flush(&mut self) {
        let now = self.now;
        self.advance(now);
    }

    /// Processes every queued event with time <= `until` and moves the clock
    /// to `until`. Returns the log entries emitted by this call.
    pub fn advance(&mut self, until: SimTime) -> Vec<LogEntry> {
        let until = until.max(self.now);
        let first = self.log.len();
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.time > until {
                break;
            }
            let Reverse(Scheduled { time, event, .. }) = self.queue.pop().expect("peeked");
            self.now = time;
            self.process(time, event);
            self.assert_piconet_cap();
        }
        self.now = until;
        self.log[first..].to_vec()
    }

    fn process(&mut self, time: SimTime, event: Event) {
        match event {
            Event::Arrived(mac) => {
                self.push_log(time, "device_arrived", fields([("mac", mac.to_string())]));
            }
            Event::Departed(mac) => {
                self.push_log(time, "device_departed", fields([("mac", mac.to_string())]));
                self.drop_links_of(mac, "departed");
            }
            Event::Discovered { inquiry, mac } => {
                let name = self
                    .devices
                    .get(&mac)
                    .map(|d| d.friendly_name.clone())
                    .unwrap_or_default();
                self.push_log(
                    time,
                    "device_discovered",
                    fields([
                        ("inquiry", inquiry.to_string()),
                        ("mac", mac.to_string()),
                        ("name", name),
                    ]),
                );
                if let Some(pending) = self.pending_inquiries.get_mut(&inquiry) {
                    pending.responses.push((mac, time));
                }
            }
            Event::InquiryCompleted { inquiry } => {
                let pending = self
                    .pending_inquiries
                    .remove(&inquiry)
                    .expect("completion for unknown inquiry");
                debug_assert_eq!(pending.responses.len(), pending.expected);
                let devices: Vec<String> = pending
                    .responses
                    .iter()
                    .map(|(m, _)| m.to_string())
                    .collect();
                self.push_log(
                    time,
                    "inquiry_completed",
                    fields([
                        ("count", pending.responses.len().to_string()),
                        ("devices", devices.join(",")),
                        ("inquiry", inquiry.to_string()),
                        ("initiator", pending.initiator.to_string()),
                    ]),
                );
                self.discovered
                    .entry(pending.initiator)
                    .or_default()
                    .extend(pending.responses.iter().map(|(m, _)| *m));
                self.inquiries.insert(
                    inquiry,
                    InquiryResult {
                        id: inquiry,
                        initiator: pending.initiator,
                        started: pending.started,
                        completed: pending.completes_at,
                        discovered: pending.responses,
                    },
                );
            }
        }
    }

    fn drop_links_of(&mut self, mac: MacId, reason: &str) {
        let mut closed = Vec::new();
        if let Some(piconet) = self.piconets.remove(&mac) {
            closed.extend(piconet.slaves.iter().map(|s| LinkHandle {
                master: mac,
                slave: *s,
            }));
        }
        for piconet in self.piconets.values() {
            if piconet.slaves.contains(&mac) {
                closed.push(LinkHandle {
                    master: piconet.master,
                    slave: mac,
                });
            }
        }
        for link in closed {
            self.close_link(link, reason);
        }
    }

    fn close_link(&mut self, link: LinkHandle, reason: &str) -> bool {
        let removed = match self.piconets.get_mut(&link.master) {
            Some(p) => p.slaves.remove(&link.slave),
            None => false,
        };
        if !removed {
            return false;
        }
        let remaining = self.slave_count(link.master);
        if remaining == 0 {
            self.piconets.remove(&link.master);
        }
        self.push_log(
            self.now,
            "link_closed",
            fields([
                ("master", link.master.to_string()),
                ("reason", reason.to_string()),
                ("slave", link.slave.to_string()),
                ("slaves", remaining.to_string()),
            ]),
        );
        true
    }

    fn assert_piconet_cap(&self) {
        for piconet in self.piconets.values() {
            assert!(
                piconet.slaves.len() <= PICONET_MAX_SLAVES,
                "piconet {} exceeds slave cap",
                piconet.master
            );
            assert!(!piconet.slaves.contains(&piconet.master));
        }
    }

    /// Schedules one inquiry. Every other device gets exactly one seeded
    /// response time, drawn in MAC order, uniform over the inquiry window;
    /// it responds iff it is powered, discoverable, in range and present at
    /// that instant.
    pub fn start_inquiry(&mut self, initiator: MacId) -> Result<InquiryHandle, SimError> {
        self.flush();
        let local = self
            .devices
            .get(&initiator)
            .ok_or(SimError::UnknownDevice(initiator))?;
        if !local.powered {
            return Err(SimError::PoweredOff(initiator));
        }
        let local = local.clone();
        let id = self.next_inquiry;
        self.next_inquiry += 1;
        let started = self.now;
        let window = self.params.inquiry_duration.as_millis();
        let completes_at = started + self.params.inquiry_duration;

        let mut responses = Vec::new();
        for device in self.devices.values() {
            if device.mac == initiator {
                continue;
            }
            let at = started + SimTime(1 + self.rng.random_range(0..window));
            if device.responds_at(at) && in_range(&local, device, &self.params) {
                responses.push((at, device.mac));
            }
        }
        responses.sort();

        self.record(
            "inquiry_started",
            [
                ("inquiry", id.to_string()),
                ("initiator", initiator.to_string()),
                ("until", completes_at.to_string()),
            ],
        );
        self.pending_inquiries.insert(
            id,
            PendingInquiry {
                initiator,
                started,
                completes_at,
                expected: responses.len(),
                responses: Vec::new(),
            },
        );
        for (at, mac) in responses {
            self.schedule(at, Event::Discovered { inquiry: id, mac })?;
        }
        self.schedule(completes_at, Event::InquiryCompleted { inquiry: id })?;
        Ok(InquiryHandle {
            id,
            initiator,
            completes_at,
        })
    }

    /// Starts an inquiry and advances the clock to its completion.
    pub fn run_inquiry(&mut self, initiator: MacId) -> Result<InquiryResult, SimError> {
        let handle = self.start_inquiry(initiator)?;
        self.advance(handle.completes_at);
        Ok(self
            .inquiry_result(&handle)
            .cloned()
            .expect("inquiry completes at its scheduled time"))
    }

    pub fn connect(&mut self, master: MacId, slave: MacId) -> Result<LinkHandle, SimError> {
        self.flush();
        if master == slave {
            return Err(SimError::SelfLink(master));
        }
        let now = self.now;
        let (m, s) = match (self.devices.get(&master), self.devices.get(&slave)) {
            (None, _) => return Err(SimError::UnknownDevice(master)),
            (_, None) => return Err(SimError::UnknownDevice(slave)),
            (Some(m), Some(s)) => (m, s),
        };
        for d in [m, s] {
            if !d.is_present(now) {
                return Err(SimError::NotPresent(d.mac));
            }
            if !d.powered {
                return Err(SimError::PoweredOff(d.mac));
            }
        }
        if !in_range(m, s, &self.params) {
            return Err(SimError::OutOfRange(master, slave));
        }
        let piconet = self.piconets.entry(master).or_insert_with(|| Piconet {
            master,
            slaves: BTreeSet::new(),
        });
        if piconet.slaves.contains(&slave) {
            return Err(SimError::AlreadyLinked { master, slave });
        }
        if piconet.slaves.len() >= PICONET_MAX_SLAVES {
            return Err(SimError::PiconetFull(master));
        }
        piconet.slaves.insert(slave);
        let count = piconet.slaves.len();
        self.record(
            "link_opened",
            [
                ("master", master.to_string()),
                ("slave", slave.to_string()),
                ("slaves", count.to_string()),
            ],
        );
        self.assert_piconet_cap();
        Ok(LinkHandle { master, slave })
    }

    pub fn is_linked(&self, link: LinkHandle) -> bool {
        self.piconets
            .get(&link.master)
            .is_some_and(|p| p.slaves.contains(&link.slave))
    }

    /// Closes the link if still open. Returns false if it was already gone.
    pub fn disconnect(&mut self, link: LinkHandle, reason: &str) -> bool {
        self.flush();
        self.close_link(link, reason)
    }

    /// Counts a new push attempt towards `slave` and returns its 1-based
    /// number.
    pub(crate) fn next_transfer_attempt(&mut self, slave: MacId) -> u32 {
        let n = self.transfer_attempts.entry(slave).or_insert(0);
        *n += 1;
        *n
    }

    pub(crate) fn draw_link_loss(&mut self) -> bool {
        self.loss_probability > 0.0 && self.rng.random_bool(self.loss_probability)
    }
}

fn fields<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
