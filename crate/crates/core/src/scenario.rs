//! Scenario files.
//!
//! Scenarios are TOML documents with a `schema_version` gate. Unknown keys
//! are rejected at every level. See `scenarios/README.md` for the schema.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::metrics::CourseUsage;
use crate::obexlite::{base_name, DEFAULT_MAX_PACKET};
use crate::pidctl::{FilePayload, Roster, DEFAULT_INQUIRY_INTERVAL, DEFAULT_MAX_RETRIES};
use crate::sdp::{ConnectionUrl, ServiceRecord};
use crate::simnet::{MacId, Point, RadioDevice, RadioParams, SimError, SimTime, SimWorld};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stepped,
    Proactive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Stepped => "stepped",
            Mode::Proactive => "proactive",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    schema_version: u32,
    seed: u64,
    mode: Mode,
    inquiry_interval_ms: Option<u64>,
    #[serde(default)]
    radio: RadioDoc,
    local: LocalDoc,
    #[serde(default, rename = "device")]
    devices: Vec<DeviceDoc>,
    roster: Option<RosterDoc>,
    file: FileDoc,
    usage: Option<UsageDoc>,
    stepped: Option<SteppedDoc>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadioDoc {
    range_m: Option<f64>,
    inquiry_duration_ms: Option<u64>,
    service_search_ms: Option<u64>,
    link_rate_bps: Option<u64>,
    session_overhead_ms: Option<u64>,
    loss_probability: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalDoc {
    mac: String,
    name: String,
    #[serde(default)]
    position: [f64; 2],
    #[serde(default = "yes")]
    powered: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceDoc {
    mac: String,
    name: String,
    #[serde(default)]
    position: [f64; 2],
    #[serde(default = "yes")]
    powered: bool,
    #[serde(default = "yes")]
    discoverable: bool,
    #[serde(default)]
    arrival_ms: u64,
    departure_ms: Option<u64>,
    #[serde(default)]
    refuse_push: bool,
    #[serde(default)]
    link_loss_attempts: Vec<u32>,
    max_packet: Option<u16>,
    #[serde(default, rename = "service")]
    services: Vec<ServiceDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceDoc {
    id: u32,
    name: String,
    url: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RosterDoc {
    course_id: String,
    members: Vec<String>,
    course_start_ms: u64,
    window_before_ms: Option<u64>,
    window_after_ms: Option<u64>,
    late_cutoff_ms: Option<u64>,
    max_retries: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    name: Option<String>,
    text: Option<String>,
    path: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UsageDoc {
    students: Option<u64>,
    pages_per_student_week: u64,
    weeks: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SteppedDoc {
    target: Option<String>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FileSource {
    Inline(FilePayload),
    /// Resolved against the scenario file's directory.
    Path(PathBuf),
}

/// A validated scenario with every default filled in.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: Mode,
    pub radio: RadioParams,
    pub loss_probability: f64,
    pub local: RadioDevice,
    pub devices: Vec<RadioDevice>,
    pub roster: Option<Roster>,
    pub file: FileSource,
    pub inquiry_interval: SimTime,
    pub usage: CourseUsage,
    pub step_target: Option<MacId>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base)
}

fn parse_mac(text: &str, what: &str) -> Result<MacId, ScenarioError> {
    MacId::parse(text).map_err(|e| invalid(format!("{what}: {e}")))
}

pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema_version {} (this build understands {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }

    let defaults = RadioParams::default();
    let r = &doc.radio;
    let radio = RadioParams {
        range_m: r.range_m.unwrap_or(defaults.range_m),
        inquiry_duration: r
            .inquiry_duration_ms
            .map_or(defaults.inquiry_duration, SimTime::from_millis),
        service_search_per_device: r
            .service_search_ms
            .map_or(defaults.service_search_per_device, SimTime::from_millis),
        link_rate_bps: r.link_rate_bps.unwrap_or(defaults.link_rate_bps),
        session_overhead: r
            .session_overhead_ms
            .map_or(defaults.session_overhead, SimTime::from_millis),
    };
    radio.validate().map_err(|e| invalid(e.to_string()))?;
    let loss_probability = r.loss_probability.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&loss_probability) {
        return Err(invalid("radio.loss_probability must lie in [0, 1]"));
    }

    let local_mac = parse_mac(&doc.local.mac, "local.mac")?;
    let mut local = RadioDevice::new(local_mac, doc.local.name.clone());
    local.position = Point::new(doc.local.position[0], doc.local.position[1]);
    local.powered = doc.local.powered;

    let mut seen = BTreeSet::from([local_mac]);
    let mut devices = Vec::with_capacity(doc.devices.len());
    for d in &doc.devices {
        let mac = parse_mac(&d.mac, "device.mac")?;
        if !seen.insert(mac) {
            return Err(invalid(format!("duplicate MAC {mac}")));
        }
        let mut device = RadioDevice::new(mac, d.name.clone()).at(d.position[0], d.position[1]);
        device.powered = d.powered;
        device.discoverable = d.discoverable;
        device.arrival = SimTime::from_millis(d.arrival_ms);
        device.departure = d.departure_ms.map(SimTime::from_millis);
        if device.departure.is_some_and(|dep| dep <= device.arrival) {
            return Err(invalid(format!(
                "device {mac}: departure_ms must be after arrival_ms"
            )));
        }
        device.refuse_push = d.refuse_push;
        device.link_loss_attempts = d.link_loss_attempts.iter().copied().collect();
        if device.link_loss_attempts.contains(&0) {
            return Err(invalid(format!(
                "device {mac}: link_loss_attempts are 1-based"
            )));
        }
        device.push_server.max_packet = d.max_packet.unwrap_or(DEFAULT_MAX_PACKET);
        let mut ids = BTreeSet::new();
        for s in &d.services {
            if s.id == 0 || !ids.insert(s.id) {
                return Err(invalid(format!(
                    "device {mac}: service ids must be positive and unique ({})",
                    s.id
                )));
            }
            let url = ConnectionUrl::parse(&s.url).map_err(|e| invalid(e.to_string()))?;
            if url.mac != mac {
                return Err(invalid(format!(
                    "device {mac}: service URL {url} names another device"
                )));
            }
            device
                .services
                .push(ServiceRecord::new(s.id, s.name.clone(), url));
        }
        device.services.sort_by_key(|s| s.service_id);
        devices.push(device);
    }

    let roster = match &doc.roster {
        None => None,
        Some(rd) => {
            let members = rd
                .members
                .iter()
                .map(|m| parse_mac(m, "roster.members"))
                .collect::<Result<BTreeSet<_>, _>>()?;
            if members.len() != rd.members.len() {
                return Err(invalid("roster.members contains duplicates"));
            }
            let mut roster = Roster::new(
                rd.course_id.clone(),
                members,
                SimTime::from_millis(rd.course_start_ms),
            );
            if let Some(ms) = rd.window_before_ms {
                roster.window_before = SimTime::from_millis(ms);
            }
            if let Some(ms) = rd.window_after_ms {
                roster.window_after = SimTime::from_millis(ms);
            }
            roster.late_cutoff = rd.late_cutoff_ms.map(SimTime::from_millis);
            roster.max_retries = rd.max_retries.unwrap_or(DEFAULT_MAX_RETRIES);
            roster.validate().map_err(|e| invalid(e.to_string()))?;
            Some(roster)
        }
    };
    if doc.mode == Mode::Proactive && roster.is_none() {
        return Err(invalid("proactive mode needs a [roster] section"));
    }

    let file = match (&doc.file.text, &doc.file.path) {
        (Some(text), None) => {
            let name = doc
                .file
                .name
                .clone()
                .ok_or_else(|| invalid("file.name is required with file.text"))?;
            if base_name(&name).is_empty() || !name.is_ascii() {
                return Err(invalid("file.name must be a non-empty ASCII name"));
            }
            FileSource::Inline(FilePayload::new(name, text.as_bytes()))
        }
        (None, Some(path)) => {
            if doc.file.name.is_some() {
                return Err(invalid(
                    "file.name is taken from file.path; do not set both",
                ));
            }
            FileSource::Path(base_dir.join(path))
        }
        _ => return Err(invalid("[file] needs exactly one of text or path")),
    };

    let inquiry_interval = doc
        .inquiry_interval_ms
        .map_or(DEFAULT_INQUIRY_INTERVAL, SimTime::from_millis);
    if inquiry_interval == SimTime::ZERO {
        return Err(invalid("inquiry_interval_ms must be positive"));
    }

    let usage = match &doc.usage {
        Some(u) => CourseUsage::new(u.students.unwrap_or(0), u.pages_per_student_week, u.weeks),
        None => CourseUsage::new(0, 3, 17),
    };
    let step_target = doc
        .stepped
        .as_ref()
        .and_then(|s| s.target.as_deref())
        .map(|t| parse_mac(t, "stepped.target"))
        .transpose()?;

    Ok(Scenario {
        schema_version: doc.schema_version,
        seed: doc.seed,
        mode: doc.mode,
        radio,
        loss_probability,
        local,
        devices,
        roster,
        file,
        inquiry_interval,
        usage,
        step_target,
    })
}

impl Scenario {
    /// Fresh world holding the local device and every scenario device.
    pub fn build_world(&self, seed: u64) -> Result<SimWorld, SimError> {
        let mut world = SimWorld::new(seed, self.radio)?;
        world.set_loss_probability(self.loss_probability);
        world.add_device(self.local.clone())?;
        for device in &self.devices {
            world.add_device(device.clone())?;
        }
        Ok(world)
    }

    /// Resolved configuration, defaults included, one record per line.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario schema_version={} seed={} mode={} devices={} inquiry_interval={}",
            self.schema_version,
            self.seed,
            self.mode.as_str(),
            self.devices.len(),
            self.inquiry_interval
        );
        let r = &self.radio;
        let _ = writeln!(
            out,
            "radio range_m={} inquiry_duration={} service_search={} link_rate_bps={} session_overhead={} loss_probability={}",
            r.range_m, r.inquiry_duration, r.service_search_per_device, r.link_rate_bps, r.session_overhead, self.loss_probability
        );
        let _ = writeln!(
            out,
            "local mac={} powered={}",
            self.local.mac, self.local.powered
        );
        if let Some(roster) = &self.roster {
            let _ = writeln!(
                out,
                "roster course={} members={} course_start={} window_before={} window_after={} late_cutoff={} max_retries={}",
                crate::simnet::quote_value(&roster.course_id),
                roster.members.len(),
                roster.course_start,
                roster.window_before,
                roster.window_after,
                roster.late_cutoff.map_or("none".to_string(), |c| c.to_string()),
                roster.max_retries
            );
        }
        let _ = writeln!(
            out,
            "usage pages_per_student_week={} weeks={}",
            self.usage.pages_per_student_week, self.usage.weeks
        );
        out
    }
}
