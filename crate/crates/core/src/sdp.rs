//! Service records, service search and FTP-profile filtering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::simnet::{MacId, SimError, SimWorld};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdpError {
    #[error("malformed connection URL {url:?}: {reason}")]
    MalformedUrl { url: String, reason: &'static str },
    #[error("{0} was not seen by a previous inquiry")]
    NotDiscovered(MacId),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `<scheme>://<MAC>:<channel>/<path>`. The scheme is opaque.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionUrl {
    pub scheme: String,
    pub mac: MacId,
    pub channel: u32,
    pub path: String,
}

impl ConnectionUrl {
    pub fn new(
        scheme: impl Into<String>,
        mac: MacId,
        channel: u32,
        path: impl Into<String>,
    ) -> Self {
        Self {
            scheme: scheme.into(),
            mac,
            channel,
            path: path.into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, SdpError> {
        let malformed = |reason| SdpError::MalformedUrl {
            url: text.to_string(),
            reason,
        };
        let (scheme, rest) = text
            .split_once("://")
            .ok_or(malformed("missing scheme separator"))?;
        if !valid_scheme(scheme) {
            return Err(malformed("invalid scheme"));
        }
        let (authority, rest) = rest.split_once(':').ok_or(malformed("missing channel"))?;
        let mac =
            MacId::parse(authority).map_err(|_| malformed("authority is not 12 hex digits"))?;
        let (channel, path) = rest
            .split_once('/')
            .ok_or(malformed("missing path separator"))?;
        if channel.is_empty() || !channel.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed("channel is not a number"));
        }
        let channel: u32 = channel
            .parse()
            .map_err(|_| malformed("channel out of range"))?;
        if channel == 0 {
            return Err(malformed("channel must be positive"));
        }
        Ok(Self {
            scheme: scheme.to_string(),
            mac,
            channel,
            path: path.to_string(),
        })
    }
}

fn valid_scheme(scheme: &str) -> bool {
    let mut chars = scheme.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
}

impl fmt::Display for ConnectionUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}://{}:{}/{}",
            self.scheme, self.mac, self.channel, self.path
        )
    }
}

impl FromStr for ConnectionUrl {
    type Err = SdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Extracts the device address embedded in a connection URL.
pub fn parse_mac_from_url(url_text: &str) -> Result<MacId, SdpError> {
    ConnectionUrl::parse(url_text).map(|u| u.mac)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceRecord {
    pub service_id: u32,
    pub service_name: String,
    pub connection_url: ConnectionUrl,
}

impl ServiceRecord {
    pub fn new(
        service_id: u32,
        service_name: impl Into<String>,
        connection_url: ConnectionUrl,
    ) -> Self {
        Self {
            service_id,
            service_name: service_name.into(),
            connection_url,
        }
    }
}

/// Case-insensitive "file transfer" substring on the service name.
pub fn is_ftp_service(record: &ServiceRecord) -> bool {
    record
        .service_name
        .to_ascii_lowercase()
        .contains("file transfer")
}

/// Result of querying a set of discovered devices for their services.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServiceCatalog {
    /// Devices that returned at least one record, records in id order.
    pub services: BTreeMap<MacId, Vec<ServiceRecord>>,
    /// Devices queried that returned nothing.
    pub empty: BTreeSet<MacId>,
    /// Subset of `empty` that left before the query finished.
    pub departed: BTreeSet<MacId>,
}

impl ServiceCatalog {
    pub fn queried(&self) -> BTreeSet<MacId> {
        self.services
            .keys()
            .chain(self.empty.iter())
            .copied()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty() && self.empty.is_empty()
    }
}

/// Queries each target in MAC order; each query costs
/// `service_search_per_device` of simulated time. A target that is gone
/// when its query finishes is reported with zero services and flagged
/// departed.
pub fn search_services(
    world: &mut SimWorld,
    initiator: MacId,
    targets: &BTreeSet<MacId>,
) -> Result<ServiceCatalog, SdpError> {
    if world.device(initiator).is_none() {
        return Err(SimError::UnknownDevice(initiator).into());
    }
    let seen = world.discovered_by(initiator);
    if let Some(missing) = targets.iter().find(|t| !seen.contains(t)) {
        return Err(SdpError::NotDiscovered(*missing));
    }
    let mut catalog = ServiceCatalog::default();
    if targets.is_empty() {
        return Ok(catalog);
    }
    let per_device = world.params().service_search_per_device;
    world.record(
        "service_search_started",
        [
            ("initiator", initiator.to_string()),
            ("targets", targets.len().to_string()),
        ],
    );
    for &target in targets {
        let done = world.now() + per_device;
        world.advance(done);
        let device = world.device(target).expect("discovered devices exist");
        if !device.is_present(done) {
            catalog.empty.insert(target);
            catalog.departed.insert(target);
            world.record(
                "service_search_completed",
                [
                    ("departed", "true".to_string()),
                    ("mac", target.to_string()),
                    ("services", "0".to_string()),
                ],
            );
            continue;
        }
        let mut records = device.services.clone();
        records.sort_by_key(|r| r.service_id);
        debug_assert!(records.iter().all(|r| r.connection_url.mac == target));
        let count = records.len();
        if records.is_empty() {
            catalog.empty.insert(target);
        } else {
            world.record(
                "services_discovered",
                [("count", count.to_string()), ("mac", target.to_string())],
            );
            catalog.services.insert(target, records);
        }
        world.record(
            "service_search_completed",
            [
                ("departed", "false".to_string()),
                ("mac", target.to_string()),
                ("services", count.to_string()),
            ],
        );
    }
    Ok(catalog)
}

/// First FTP-capable record per device, lowest service id first.
pub fn filter_ftp(catalog: &ServiceCatalog) -> BTreeMap<MacId, ServiceRecord> {
    catalog
        .services
        .iter()
        .filter_map(|(mac, records)| {
            records
                .iter()
                .filter(|r| is_ftp_service(r))
                .min_by_key(|r| r.service_id)
                .map(|r| (*mac, r.clone()))
        })
        .collect()
}
