//! Test-only helpers shared by the integration suites: a from-scratch wire
//! reader used as an oracle for the codec, golden fixture loading, and a
//! random classroom generator with a brute-force eligibility oracle.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pid_sim::obexlite::{ObexFrame, ObexHeader};
use pid_sim::pidctl::Roster;
use pid_sim::sdp::{ConnectionUrl, ServiceRecord};
use pid_sim::simnet::{MacId, Point, RadioDevice, RadioParams, SimTime, SimWorld};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_path(name: &str) -> PathBuf {
    workspace_root()
        .join("scenarios")
        .join(format!("{name}.scn"))
}

pub fn mac(s: &str) -> MacId {
    MacId::parse(s).unwrap()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02X}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn unhex(text: &str) -> Vec<u8> {
    text.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).expect("hex byte"))
        .collect()
}

/// `label: hex bytes` lines from tests/golden/obex_frames.txt.
pub fn golden_frames() -> BTreeMap<String, Vec<u8>> {
    let text = include_str!("../golden/obex_frames.txt");
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (label, bytes) = l.split_once(':').expect("label: hex");
            (label.trim().to_string(), unhex(bytes))
        })
        .collect()
}

/// A frame as seen on the wire, without any knowledge of the library types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireFrame {
    pub opcode: u8,
    pub connect: Option<(u8, u8, u16)>,
    pub headers: Vec<(u8, Vec<u8>)>,
}

/// Reads one frame using the header-id encoding rules directly: the top two
/// bits of an id select a 2-byte-length sequence (00, 01) or a 4-byte
/// quantity (11). `connect` says whether 4 bytes of connect fields follow
/// the prefix.
pub fn read_wire(bytes: &[u8], connect: bool) -> Option<WireFrame> {
    let total = u16::from_be_bytes([*bytes.get(1)?, *bytes.get(2)?]) as usize;
    if total != bytes.len() {
        return None;
    }
    let mut i = 3;
    let params = if connect {
        let p = (
            bytes[i],
            bytes[i + 1],
            u16::from_be_bytes([bytes[i + 2], bytes[i + 3]]),
        );
        i += 4;
        Some(p)
    } else {
        None
    };
    let mut headers = Vec::new();
    while i < total {
        let id = bytes[i];
        match id >> 6 {
            0b00 | 0b01 => {
                let len = u16::from_be_bytes([bytes[i + 1], bytes[i + 2]]) as usize;
                headers.push((id, bytes[i + 3..i + len].to_vec()));
                i += len;
            }
            0b11 => {
                headers.push((id, bytes[i + 1..i + 5].to_vec()));
                i += 5;
            }
            _ => return None,
        }
    }
    (i == total).then_some(WireFrame {
        opcode: bytes[0],
        connect: params,
        headers,
    })
}

/// What the wire reader should see for a library frame.
pub fn expected_wire(frame: &ObexFrame) -> WireFrame {
    WireFrame {
        opcode: frame.opcode.code(),
        connect: frame.connect.map(|c| (c.version, c.flags, c.max_packet)),
        headers: frame
            .headers
            .iter()
            .map(|h| match h {
                ObexHeader::Name(n) => (0x01, n.as_bytes().to_vec()),
                ObexHeader::Length(v) => (0xC3, v.to_be_bytes().to_vec()),
                ObexHeader::Body(b) => (0x48, b.clone()),
                ObexHeader::EndOfBody(b) => (0x49, b.clone()),
                ObexHeader::ConnectionId(v) => (0xCB, v.to_be_bytes().to_vec()),
            })
            .collect(),
    }
}

pub fn ftp_record(m: MacId, id: u32) -> ServiceRecord {
    ServiceRecord::new(
        id,
        "OBEX File Transfer",
        ConnectionUrl::new("btgoep", m, 5, "ftp"),
    )
}

pub fn other_record(m: MacId, id: u32) -> ServiceRecord {
    ServiceRecord::new(id, "Headset", ConnectionUrl::new("btspp", m, 1, "headset"))
}

pub const LOCAL: u64 = 0x000D_88C0_FFEE;
pub const COURSE_START: u64 = 300_000;
pub const INTERVAL: u64 = 30_000;

#[derive(Clone, Debug)]
pub struct GenDevice {
    pub mac: MacId,
    pub member: bool,
    pub powered: bool,
    pub discoverable: bool,
    pub in_range: bool,
    pub ftp: bool,
    pub other_services: bool,
    pub arrival: u64,
}

#[derive(Clone, Debug)]
pub struct GenScenario {
    pub seed: u64,
    pub devices: Vec<GenDevice>,
    pub late_cutoff: Option<u64>,
}

/// Random classroom of up to 15 devices. Arrivals are before the window
/// opens, or for members (when a cutoff is set) strictly after the cutoff, so
/// the oracle below never depends on inquiry response timing or on when the
/// loop stops.
pub fn random_scenario(seed: u64) -> GenScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(0..=15usize);
    let late_cutoff = rng
        .random_bool(0.5)
        .then(|| rng.random_range(COURSE_START - 120_000..=COURSE_START + 60_000));
    let mut macs = BTreeSet::new();
    while macs.len() < count {
        macs.insert(rng.random_range(1..=0xFFFF_FFFF_FFFFu64));
    }
    macs.remove(&LOCAL);
    let devices = macs
        .into_iter()
        .map(|m| {
            let member = rng.random_bool(0.7);
            let arrival = match late_cutoff {
                Some(cutoff) if member && rng.random_bool(0.3) => {
                    rng.random_range(cutoff + 1..=cutoff + 60_000)
                }
                _ => rng.random_range(0..=COURSE_START - 240_000),
            };
            GenDevice {
                mac: MacId::from_u64(m).unwrap(),
                member,
                powered: rng.random_bool(0.9),
                discoverable: rng.random_bool(0.9),
                in_range: rng.random_bool(0.85),
                ftp: rng.random_bool(0.75),
                other_services: rng.random_bool(0.4),
                arrival,
            }
        })
        .collect();
    GenScenario {
        seed: rng.random(),
        devices,
        late_cutoff,
    }
}

impl GenScenario {
    pub fn build(&self) -> (SimWorld, Roster) {
        let mut world = SimWorld::new(self.seed, RadioParams::default()).unwrap();
        world
            .add_device(RadioDevice::new(MacId::from_u64(LOCAL).unwrap(), "client"))
            .unwrap();
        for (i, d) in self.devices.iter().enumerate() {
            let mut services = Vec::new();
            if d.other_services {
                services.push(other_record(d.mac, 1));
            }
            if d.ftp {
                services.push(ftp_record(d.mac, 2));
            }
            let distance = if d.in_range {
                1.0 + (i as f64) * 0.5
            } else {
                25.0 + i as f64
            };
            let mut dev = RadioDevice::new(d.mac, format!("dev{i}"))
                .at(distance, 0.0)
                .with_services(services)
                .present_between(SimTime::from_millis(d.arrival), None);
            dev.powered = d.powered;
            dev.discoverable = d.discoverable;
            world.add_device(dev).unwrap();
        }
        let members = self.devices.iter().filter(|d| d.member).map(|d| d.mac);
        let mut roster = Roster::new("gen", members, SimTime::from_millis(COURSE_START));
        roster.late_cutoff = self.late_cutoff.map(SimTime::from_millis);
        (world, roster)
    }

    fn reachable(d: &GenDevice) -> bool {
        d.powered && d.discoverable && d.in_range
    }

    fn late(&self, d: &GenDevice) -> bool {
        self.late_cutoff.is_some_and(|c| d.arrival > c)
    }

    /// Members that must end up delivered, computed directly from the inputs.
    pub fn oracle_delivered(&self) -> BTreeSet<MacId> {
        self.devices
            .iter()
            .filter(|d| d.member && Self::reachable(d) && d.ftp && !self.late(d))
            .map(|d| d.mac)
            .collect()
    }

    /// Expected outcome label for every member.
    pub fn oracle_outcomes(&self) -> BTreeMap<MacId, &'static str> {
        self.devices
            .iter()
            .filter(|d| d.member)
            .map(|d| {
                let label = if !Self::reachable(d) {
                    "never-discovered"
                } else if self.late(d) {
                    "late"
                } else if !d.ftp {
                    "no-ftp-service"
                } else {
                    "delivered"
                };
                (d.mac, label)
            })
            .collect()
    }

    /// Non-members that inquiry should report. With no members the loop
    /// never runs an inquiry.
    pub fn oracle_non_members(&self) -> BTreeSet<MacId> {
        if !self.devices.iter().any(|d| d.member) {
            return BTreeSet::new();
        }
        self.devices
            .iter()
            .filter(|d| !d.member && Self::reachable(d))
            .map(|d| d.mac)
            .collect()
    }
}

/// Largest `slaves` count in any link event of the log.
pub fn max_slaves_in_log(world: &SimWorld) -> usize {
    world
        .log()
        .iter()
        .filter_map(|e| e.field("slaves"))
        .map(|s| s.parse::<usize>().unwrap())
        .max()
        .unwrap_or(0)
}

/// Replays link open/close events and returns the peak concurrent slave
/// count seen at any log instant.
pub fn peak_concurrent_slaves(world: &SimWorld) -> usize {
    let mut open: BTreeSet<(String, String)> = BTreeSet::new();
    let mut peak = 0;
    for e in world.log() {
        let key = || {
            (
                e.field("master").unwrap().to_string(),
                e.field("slave").unwrap().to_string(),
            )
        };
        match e.name.as_str() {
            "link_opened" => {
                assert!(open.insert(key()), "link opened twice: {e}");
            }
            "link_closed" => {
                assert!(open.remove(&key()), "closing unknown link: {e}");
            }
            _ => {}
        }
        let mut per_master: BTreeMap<&str, usize> = BTreeMap::new();
        for (m, _) in &open {
            *per_master.entry(m.as_str()).or_default() += 1;
        }
        peak = peak.max(per_master.values().copied().max().unwrap_or(0));
    }
    peak
}

pub fn delivered_events(world: &SimWorld) -> Vec<MacId> {
    world
        .log()
        .iter()
        .filter(|e| e.name == "delivered")
        .map(|e| mac(e.field("mac").unwrap()))
        .collect()
}

pub fn point(x: f64, y: f64) -> Point {
    Point { x, y }
}
