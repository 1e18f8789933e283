//! Topology description: hosts and delay links.
//!
//! Built programmatically or parsed from a plain-text file with one
//! directive per line:
//!
//! ```text
//! # comment
//! host client 10.0.0.2
//! host proxy            # address auto-assigned
//! link client proxy 15 15
//! link client server 30 30 0.01
//! ```
//!
//! `link A B delay_ab_ms delay_ba_ms [loss]`. Unlisted pairs are
//! unreachable.

use std::collections::BTreeMap;
use std::net::IpAddr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("duplicate host {0:?}")]
    DuplicateHost(String),
    #[error("invalid address {addr:?} for host {host:?}")]
    BadAddress { host: String, addr: String },
    #[error("address {0} assigned to more than one host")]
    DuplicateAddress(IpAddr),
    #[error("link references unknown host {0:?}")]
    UnknownHost(String),
    #[error("link from {0:?} to itself")]
    SelfLink(String),
    #[error("more than one link between {0:?} and {1:?}")]
    DuplicateLink(String, String),
    #[error("negative delay on link {a:?} - {b:?}")]
    NegativeDelay { a: String, b: String },
    #[error("loss rate {loss} on link {a:?} - {b:?} is outside [0, 1]")]
    BadLoss { a: String, b: String, loss: f64 },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// One bidirectional link with per-direction one-way delays and a shared
/// loss rate applied independently per datagram.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkProfile {
    pub a: String,
    pub b: String,
    pub delay_ab_ms: f64,
    pub delay_ba_ms: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct HostSpec {
    name: String,
    addr: Option<String>,
}

/// Declarative network description; validated when a simulator is built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    hosts: Vec<HostSpec>,
    links: Vec<LinkProfile>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a host with an auto-assigned address.
    pub fn host(mut self, name: &str) -> Self {
        self.hosts.push(HostSpec {
            name: name.to_string(),
            addr: None,
        });
        self
    }

    /// Adds a host at a fixed address.
    pub fn host_at(mut self, name: &str, addr: &str) -> Self {
        self.hosts.push(HostSpec {
            name: name.to_string(),
            addr: Some(addr.to_string()),
        });
        self
    }

    /// Adds a loss-free link.
    pub fn link(self, a: &str, b: &str, delay_ab_ms: f64, delay_ba_ms: f64) -> Self {
        self.lossy_link(a, b, delay_ab_ms, delay_ba_ms, 0.0)
    }

    pub fn lossy_link(
        mut self,
        a: &str,
        b: &str,
        delay_ab_ms: f64,
        delay_ba_ms: f64,
        loss: f64,
    ) -> Self {
        self.links.push(LinkProfile {
            a: a.to_string(),
            b: b.to_string(),
            delay_ab_ms,
            delay_ba_ms,
            loss,
        });
        self
    }

    pub fn hosts(&self) -> impl Iterator<Item = &str> {
        self.hosts.iter().map(|h| h.name.as_str())
    }

    pub fn links(&self) -> &[LinkProfile] {
        &self.links
    }

    /// Parses the plain-text form. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut topo = Topology::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            match fields[0] {
                "host" => match fields.len() {
                    2 => topo = topo.host(fields[1]),
                    3 => topo = topo.host_at(fields[1], fields[2]),
                    _ => {
                        return Err(TopologyError::Syntax {
                            line,
                            msg: "expected: host <name> [address]".into(),
                        })
                    }
                },
                "link" => {
                    if fields.len() != 5 && fields.len() != 6 {
                        return Err(TopologyError::Syntax {
                            line,
                            msg: "expected: link <a> <b> <delay_ab_ms> <delay_ba_ms> [loss]"
                                .into(),
                        });
                    }
                    let num = |s: &str, what: &str| {
                        s.parse::<f64>().map_err(|_| TopologyError::Syntax {
                            line,
                            msg: format!("invalid {what}: {s:?}"),
                        })
                    };
                    let ab = num(fields[3], "delay")?;
                    let ba = num(fields[4], "delay")?;
                    let loss = match fields.get(5) {
                        Some(s) => num(s, "loss rate")?,
                        None => 0.0,
                    };
                    topo = topo.lossy_link(fields[1], fields[2], ab, ba, loss);
                }
                other => {
                    return Err(TopologyError::Syntax {
                        line,
                        msg: format!("unknown directive {other:?}"),
                    })
                }
            }
        }
        Ok(topo)
    }

    /// Validates and resolves names to indices and addresses.
    pub(crate) fn resolve(&self) -> Result<Resolved, TopologyError> {
        let mut names = Vec::new();
        let mut ips = Vec::new();
        let mut ip_to_host = BTreeMap::new();
        for h in &self.hosts {
            if names.contains(&h.name) {
                return Err(TopologyError::DuplicateHost(h.name.clone()));
            }
            let ip = match &h.addr {
                Some(s) => s.parse::<IpAddr>().map_err(|_| TopologyError::BadAddress {
                    host: h.name.clone(),
                    addr: s.clone(),
                })?,
                None => auto_ip(names.len()),
            };
            if ip_to_host.insert(ip, names.len()).is_some() {
                return Err(TopologyError::DuplicateAddress(ip));
            }
            names.push(h.name.clone());
            ips.push(ip);
        }
        let index_of = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| TopologyError::UnknownHost(name.to_string()))
        };
        let mut links = Vec::new();
        let mut adj = BTreeMap::new();
        for l in &self.links {
            let a = index_of(&l.a)?;
            let b = index_of(&l.b)?;
            if a == b {
                return Err(TopologyError::SelfLink(l.a.clone()));
            }
            if l.delay_ab_ms < 0.0 || l.delay_ba_ms < 0.0 {
                return Err(TopologyError::NegativeDelay {
                    a: l.a.clone(),
                    b: l.b.clone(),
                });
            }
            if !(0.0..=1.0).contains(&l.loss) || !l.loss.is_finite() {
                return Err(TopologyError::BadLoss {
                    a: l.a.clone(),
                    b: l.b.clone(),
                    loss: l.loss,
                });
            }
            let idx = links.len();
            if adj.insert((a, b), (idx, true)).is_some()
                || adj.insert((b, a), (idx, false)).is_some()
            {
                return Err(TopologyError::DuplicateLink(l.a.clone(), l.b.clone()));
            }
            links.push(ResolvedLink {
                delay_ab_ns: ms_to_ns(l.delay_ab_ms),
                delay_ba_ns: ms_to_ns(l.delay_ba_ms),
                loss: l.loss,
            });
        }
        Ok(Resolved {
            names,
            ips,
            ip_to_host,
            links,
            adj,
        })
    }
}

fn auto_ip(index: usize) -> IpAddr {
    // 10.99.0.0/16 is reserved for auto-assignment; explicit addresses in
    // that range would collide and are reported as duplicates.
    IpAddr::from([10, 99, (index / 250) as u8, (index % 250) as u8 + 1])
}

pub(crate) fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

#[derive(Debug)]
pub(crate) struct ResolvedLink {
    pub delay_ab_ns: u64,
    pub delay_ba_ns: u64,
    pub loss: f64,
}

#[derive(Debug)]
pub(crate) struct Resolved {
    pub names: Vec<String>,
    pub ips: Vec<IpAddr>,
    pub ip_to_host: BTreeMap<IpAddr, usize>,
    pub links: Vec<ResolvedLink>,
    /// (src host, dst host) -> (link index, src-is-a).
    pub adj: BTreeMap<(usize, usize), (usize, bool)>,
}
