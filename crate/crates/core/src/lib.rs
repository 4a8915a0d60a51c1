//! Predictive VM provisioning against a co-simulated cloud twin.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//!
//! - [`domain`]: VM catalog, hosts, workloads, demand vectors, synthetic traces.
//! - [`sched`]: the best-fit-decreasing scheduler producing placements and
//!   preemptive migrations for a provisioning decision.
//! - [`cosim`]: the digital twin that advances one interval and reports QoS.
//! - [`autodiff`]: a small reverse-mode tensor tape with the attention layers.
//! - [`model`]: the composite graph-attention / transformer provisioner network.
//! - [`provision`]: the two-phase decision loop and comparator provisioners.
//! - [`train`]: oracle label generation, losses and the optimizer loop.
//!
//! File formats, the episode runner and the CLI live in the `cilp` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod cosim;
pub mod domain;
pub mod model;
pub mod provision;
pub mod sched;
pub mod train;

mod par;

pub use cosim::{QoSReport, QosWeights, SimConfig, SimState};
pub use domain::{DemandVector, HostId, VmCatalog, VmType, Workload, WorkloadId};
pub use sched::{ProvisioningDecision, Schedule};
