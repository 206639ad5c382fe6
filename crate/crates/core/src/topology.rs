//! Two-tier datacenter fabric: machines hang off rack switches, rack switches
//! connect to every core switch. Links are unidirectional and carry a capacity
//! in megabytes per second.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a megabit-per-second figure into megabytes per second.
pub fn mbps_to_mbytes(mbps: f64) -> f64 {
    mbps / 8.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MachineId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub usize);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Machine(usize),
    Rack(usize),
    Core(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Uplink,
    Downlink,
    RackToCore,
    CoreToRack,
}

impl LinkKind {
    pub fn is_internal(self) -> bool {
        matches!(self, LinkKind::RackToCore | LinkKind::CoreToRack)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub kind: LinkKind,
    pub src: NodeId,
    pub dst: NodeId,
    /// MB/s.
    pub capacity: f64,
}

impl Link {
    pub fn label(&self) -> String {
        let node = |n: NodeId| match n {
            NodeId::Machine(i) => format!("M{i}"),
            NodeId::Rack(i) => format!("R{i}"),
            NodeId::Core(i) => format!("C{i}"),
        };
        format!("{}->{}", node(self.src), node(self.dst))
    }
}

/// Ordered list of links a flow traverses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Route {
    pub link_ids: Vec<LinkId>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.link_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.link_ids.is_empty()
    }

    pub fn contains(&self, link: LinkId) -> bool {
        self.link_ids.contains(&link)
    }
}

/// Capacities for the three link classes, in MB/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FabricCapacities {
    pub uplink: f64,
    pub downlink: f64,
    pub internal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    rack_count: usize,
    machines_per_rack: usize,
    core_count: usize,
    links: Vec<Link>,
    /// Dense `src * machine_count + dst` table; the diagonal is empty.
    routes: Vec<Route>,
}

impl Topology {
    /// Builds a rack/core tree. Every rack switch gets one link to and one
    /// link from every core switch. Cross-rack traffic between `src` and `dst`
    /// is pinned to core `(src + dst) mod core_count`.
    pub fn build_fat_tree(
        rack_count: usize,
        machines_per_rack: usize,
        core_count: usize,
        caps: FabricCapacities,
    ) -> Result<Self> {
        for (name, v) in
            [("rack_count", rack_count), ("machines_per_rack", machines_per_rack), ("core_count", core_count)]
        {
            if v == 0 {
                return Err(Error::InvalidTopology(format!("{name} must be at least 1")));
            }
        }
        for (name, c) in [
            ("uplink capacity", caps.uplink),
            ("downlink capacity", caps.downlink),
            ("internal capacity", caps.internal),
        ] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidTopology(format!("{name} must be positive, got {c}")));
            }
        }

        let machine_count = rack_count * machines_per_rack;
        let mut links = Vec::with_capacity(2 * machine_count + 2 * rack_count * core_count);
        let mut push = |kind, src, dst, capacity| {
            let id = LinkId(links.len());
            links.push(Link { id, kind, src, dst, capacity });
        };
        for m in 0..machine_count {
            push(LinkKind::Uplink, NodeId::Machine(m), NodeId::Rack(m / machines_per_rack), caps.uplink);
        }
        for m in 0..machine_count {
            push(LinkKind::Downlink, NodeId::Rack(m / machines_per_rack), NodeId::Machine(m), caps.downlink);
        }
        for r in 0..rack_count {
            for c in 0..core_count {
                push(LinkKind::RackToCore, NodeId::Rack(r), NodeId::Core(c), caps.internal);
            }
        }
        for c in 0..core_count {
            for r in 0..rack_count {
                push(LinkKind::CoreToRack, NodeId::Core(c), NodeId::Rack(r), caps.internal);
            }
        }

        let mut topo = Topology { rack_count, machines_per_rack, core_count, links, routes: Vec::new() };
        topo.routes = (0..machine_count * machine_count)
            .map(|i| {
                let (s, d) = (i / machine_count, i % machine_count);
                if s == d {
                    Route::default()
                } else {
                    topo.compute_route(s, d)
                }
            })
            .collect();
        Ok(topo)
    }

    fn compute_route(&self, src: usize, dst: usize) -> Route {
        let (rs, rd) = (self.rack_of(src), self.rack_of(dst));
        let mut link_ids = vec![self.uplink(MachineId(src))];
        if rs != rd {
            let core = (src + dst) % self.core_count;
            link_ids.push(self.rack_to_core(rs, core));
            link_ids.push(self.core_to_rack(core, rd));
        }
        link_ids.push(self.downlink(MachineId(dst)));
        Route { link_ids }
    }

    pub fn machine_count(&self) -> usize {
        self.rack_count * self.machines_per_rack
    }

    pub fn rack_count(&self) -> usize {
        self.rack_count
    }

    pub fn core_count(&self) -> usize {
        self.core_count
    }

    pub fn machines(&self) -> Vec<MachineId> {
        (0..self.machine_count()).map(MachineId).collect()
    }

    pub fn rack_of(&self, machine: usize) -> usize {
        machine / self.machines_per_rack
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn uplink(&self, m: MachineId) -> LinkId {
        LinkId(m.0)
    }

    pub fn downlink(&self, m: MachineId) -> LinkId {
        LinkId(self.machine_count() + m.0)
    }

    pub fn rack_to_core(&self, rack: usize, core: usize) -> LinkId {
        LinkId(2 * self.machine_count() + rack * self.core_count + core)
    }

    pub fn core_to_rack(&self, core: usize, rack: usize) -> LinkId {
        LinkId(2 * self.machine_count() + self.rack_count * self.core_count + core * self.rack_count + rack)
    }

    pub fn contains(&self, m: MachineId) -> bool {
        m.0 < self.machine_count()
    }

    /// Static route between two distinct machines.
    pub fn route(&self, src: MachineId, dst: MachineId) -> Result<&Route> {
        for m in [src, dst] {
            if !self.contains(m) {
                return Err(Error::UnknownMachine(m.0));
            }
        }
        if src == dst {
            return Err(Error::SameMachine(src.0));
        }
        Ok(&self.routes[src.0 * self.machine_count() + dst.0])
    }

    /// Replaces the capacity of every link of `kind`.
    pub fn set_capacity(&mut self, kind: LinkKind, capacity: f64) -> Result<()> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::InvalidTopology(format!("capacity must be positive, got {capacity}")));
        }
        for link in self.links.iter_mut().filter(|l| l.kind == kind) {
            link.capacity = capacity;
        }
        Ok(())
    }

    pub fn set_link_capacity(&mut self, link: LinkId, capacity: f64) -> Result<()> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::InvalidTopology(format!("capacity must be positive, got {capacity}")));
        }
        self.links[link.0].capacity = capacity;
        Ok(())
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }
}

/// Capacity left for managed flows once unmanaged traffic is accounted for.
pub fn allocatable_capacity(link: &Link, external_traffic_rate: f64) -> f64 {
    (link.capacity - external_traffic_rate.max(0.0)).max(0.0)
}
