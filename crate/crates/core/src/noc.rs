//! 2D mesh interconnect with dimension-ordered (X then Y) routing.
//!
//! Messages are simulated whole, not as flits. Every directed link keeps its
//! reserved intervals; a message occupies each link on its path for
//! `ceil(bytes / link_width)` cycles and advances one router every
//! `hop_latency` cycles, so an idle path costs
//! `hops * hop_latency + ceil(bytes / link_width)` cycles. Queues are
//! unbounded: contention only ever shows up as added latency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Timeline;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NocError {
    #[error("coordinate ({x},{y}) lies outside the {w}x{h} mesh")]
    OutOfMesh { x: u8, y: u8, w: u8, h: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: u8,
    pub y: u8,
}

impl Coord {
    pub const fn new(x: u8, y: u8) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageClass {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NocMessage {
    pub src: Coord,
    pub dst: Coord,
    pub bytes: u32,
    pub class: MessageClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NocConfig {
    pub width: u8,
    pub height: u8,
    /// Router traversal latency, NOC cycles.
    pub hop_latency: u64,
    /// Bytes per cycle per direction (256-bit links).
    pub link_bytes: u32,
}

impl Default for NocConfig {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            hop_latency: 2,
            link_bytes: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    East,
    West,
    North,
    South,
    /// node -> router
    Inject,
    /// router -> node
    Eject,
}

const PORTS: usize = 6;

impl Port {
    fn index(self) -> usize {
        match self {
            Port::East => 0,
            Port::West => 1,
            Port::North => 2,
            Port::South => 3,
            Port::Inject => 4,
            Port::Eject => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub bytes: u64,
    pub busy_cycles: u64,
    pub messages: u64,
    /// First and last occupied cycle, for throughput audits.
    pub first_cycle: Option<u64>,
    pub last_cycle: u64,
}

impl LinkStats {
    /// Bytes per occupied cycle; never exceeds the link width.
    pub fn throughput(&self) -> f64 {
        if self.busy_cycles == 0 {
            0.0
        } else {
            self.bytes as f64 / self.busy_cycles as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Link {
    busy: Timeline,
    stats: LinkStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounters {
    pub injected_msgs: u64,
    pub injected_bytes: u64,
    pub delivered_msgs: u64,
    pub delivered_bytes: u64,
}

pub struct Mesh {
    cfg: NocConfig,
    links: Vec<Link>,
    counters: [ClassCounters; 2],
}

impl Mesh {
    pub fn new(cfg: NocConfig) -> Self {
        let n = cfg.width as usize * cfg.height as usize;
        Self {
            cfg,
            links: vec![Link::default(); n * PORTS],
            counters: [ClassCounters::default(); 2],
        }
    }

    pub fn config(&self) -> &NocConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> usize {
        self.cfg.width as usize * self.cfg.height as usize
    }

    pub fn coord(&self, node: usize) -> Coord {
        Coord::new(
            (node % self.cfg.width as usize) as u8,
            (node / self.cfg.width as usize) as u8,
        )
    }

    pub fn node_id(&self, c: Coord) -> usize {
        c.y as usize * self.cfg.width as usize + c.x as usize
    }

    fn check(&self, c: Coord) -> Result<(), NocError> {
        if c.x < self.cfg.width && c.y < self.cfg.height {
            Ok(())
        } else {
            Err(NocError::OutOfMesh {
                x: c.x,
                y: c.y,
                w: self.cfg.width,
                h: self.cfg.height,
            })
        }
    }

    /// Routers visited after `src`, X first, then Y.
    pub fn route_xy(&self, src: Coord, dst: Coord) -> Result<Vec<Coord>, NocError> {
        self.check(src)?;
        self.check(dst)?;
        Ok(route_xy(src, dst))
    }

    fn link_index(&self, at: Coord, port: Port) -> usize {
        self.node_id(at) * PORTS + port.index()
    }

    fn occupy(&mut self, idx: usize, ready: u64, ser: u64, bytes: u32) -> u64 {
        let link = &mut self.links[idx];
        let start = link.busy.reserve(ready, ser);
        let s = &mut link.stats;
        s.bytes += bytes as u64;
        s.busy_cycles += ser;
        s.messages += 1;
        s.first_cycle = Some(s.first_cycle.map_or(start, |f| f.min(start)));
        s.last_cycle = s.last_cycle.max(start + ser);
        start
    }

    /// Drops reservations that end by NOC cycle `before`. Callers promise
    /// no later message arrives at a link before that cycle.
    pub fn retire(&mut self, before: u64) {
        for l in &mut self.links {
            l.busy.retire(before);
        }
    }

    /// Injects `msg` at NOC cycle `now`; returns the delivery cycle.
    pub fn send(&mut self, msg: &NocMessage, now: u64) -> u64 {
        debug_assert!(msg.bytes > 0);
        let class = match msg.class {
            MessageClass::Request => 0,
            MessageClass::Response => 1,
        };
        self.counters[class].injected_msgs += 1;
        self.counters[class].injected_bytes += msg.bytes as u64;
        let delivered = if msg.src == msg.dst {
            now + 1
        } else {
            let ser = (msg.bytes as u64).div_ceil(self.cfg.link_bytes as u64);
            let inj = self.link_index(msg.src, Port::Inject);
            let mut t = self.occupy(inj, now, ser, msg.bytes);
            let mut here = msg.src;
            for next in route_xy(msg.src, msg.dst) {
                let port = direction(here, next);
                let idx = self.link_index(here, port);
                t = self.occupy(idx, t, ser, msg.bytes) + self.cfg.hop_latency;
                here = next;
            }
            let ej = self.link_index(msg.dst, Port::Eject);
            self.occupy(ej, t, ser, msg.bytes) + ser
        };
        self.counters[class].delivered_msgs += 1;
        self.counters[class].delivered_bytes += msg.bytes as u64;
        delivered
    }

    pub fn link_stats(&self, node: usize, port: Port) -> LinkStats {
        self.links[node * PORTS + port.index()].stats
    }

    pub fn all_link_stats(&self) -> impl Iterator<Item = (usize, Port, LinkStats)> + '_ {
        const ORDER: [Port; PORTS] = [
            Port::East,
            Port::West,
            Port::North,
            Port::South,
            Port::Inject,
            Port::Eject,
        ];
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| (i / PORTS, ORDER[i % PORTS], l.stats))
    }

    pub fn counters(&self, class: MessageClass) -> ClassCounters {
        match class {
            MessageClass::Request => self.counters[0],
            MessageClass::Response => self.counters[1],
        }
    }

    /// Cycle by which every link has drained.
    pub fn drained_at(&self) -> u64 {
        self.links.iter().map(|l| l.stats.last_cycle).max().unwrap_or(0)
    }
}

fn direction(from: Coord, to: Coord) -> Port {
    if to.x > from.x {
        Port::East
    } else if to.x < from.x {
        Port::West
    } else if to.y > from.y {
        Port::North
    } else {
        Port::South
    }
}

/// Dimension-ordered route, excluding `src`, including `dst` (empty if equal).
pub fn route_xy(src: Coord, dst: Coord) -> Vec<Coord> {
    let mut hops = Vec::new();
    let mut cur = src;
    while cur.x != dst.x {
        cur.x = if dst.x > cur.x { cur.x + 1 } else { cur.x - 1 };
        hops.push(cur);
    }
    while cur.y != dst.y {
        cur.y = if dst.y > cur.y { cur.y + 1 } else { cur.y - 1 };
        hops.push(cur);
    }
    hops
}

pub fn hop_count(src: Coord, dst: Coord) -> u64 {
    (src.x.abs_diff(dst.x) + src.y.abs_diff(dst.y)) as u64
}
