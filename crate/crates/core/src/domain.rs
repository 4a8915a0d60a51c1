//! Cloud inventory: VM types, hosts, workloads and their demand traces.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Seconds per hour, for converting per-hour prices to per-interval cost.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Tolerance used by capacity comparisons so that sums of floats that are
/// equal up to rounding still count as fitting.
pub const CAPACITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("catalog must be non-empty")]
    EmptyCatalog,
    #[error("catalog max_hosts must be positive")]
    ZeroMaxHosts,
    #[error("duplicate VM type name {0:?}")]
    DuplicateName(String),
    #[error("VM type {vm:?}: invalid {field}: {reason}")]
    InvalidField {
        vm: String,
        field: &'static str,
        reason: &'static str,
    },
    #[error("workload {id} has an empty trace")]
    EmptyTrace { id: WorkloadId },
    #[error("workload {id}: invalid {field} at offset {offset}")]
    InvalidDemand {
        id: WorkloadId,
        field: &'static str,
        offset: usize,
    },
    #[error("workload {id}: SLA deadline must be positive")]
    InvalidDeadline { id: WorkloadId },
    #[error("workload {id} has completed by interval {t}")]
    WorkloadCompleted { id: WorkloadId, t: usize },
    #[error("workload {id} has not arrived by interval {t}")]
    NotArrived { id: WorkloadId, t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkloadId(pub u64);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

impl fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Resource demand `[cpu (IPS), ram (GB), disk (GB)]` of one workload in one
/// interval, or a capacity / remaining-capacity vector of the same shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandVector {
    pub cpu: f64,
    pub ram: f64,
    pub disk: f64,
}

impl DemandVector {
    pub const ZERO: DemandVector = DemandVector {
        cpu: 0.0,
        ram: 0.0,
        disk: 0.0,
    };

    pub const fn new(cpu: f64, ram: f64, disk: f64) -> Self {
        Self { cpu, ram, disk }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.cpu, self.ram, self.disk]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Componentwise `self <= capacity` (up to [`CAPACITY_EPS`]).
    pub fn fits_within(&self, capacity: &DemandVector) -> bool {
        self.cpu <= capacity.cpu + CAPACITY_EPS
            && self.ram <= capacity.ram + CAPACITY_EPS
            && self.disk <= capacity.disk + CAPACITY_EPS
    }

    pub fn is_non_negative(&self) -> bool {
        self.cpu >= 0.0 && self.ram >= 0.0 && self.disk >= 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.cpu.is_finite() && self.ram.is_finite() && self.disk.is_finite()
    }

    pub fn max(self, other: DemandVector) -> DemandVector {
        DemandVector::new(
            self.cpu.max(other.cpu),
            self.ram.max(other.ram),
            self.disk.max(other.disk),
        )
    }

    pub fn clamp_non_negative(self) -> DemandVector {
        self.max(DemandVector::ZERO)
    }

    pub fn scale(self, k: f64) -> DemandVector {
        DemandVector::new(self.cpu * k, self.ram * k, self.disk * k)
    }

    /// Componentwise division, used for feature normalization.
    pub fn div(self, by: DemandVector) -> DemandVector {
        DemandVector::new(self.cpu / by.cpu, self.ram / by.ram, self.disk / by.disk)
    }

    pub fn mul(self, by: DemandVector) -> DemandVector {
        DemandVector::new(self.cpu * by.cpu, self.ram * by.ram, self.disk * by.disk)
    }
}

impl Add for DemandVector {
    type Output = DemandVector;
    fn add(self, o: DemandVector) -> DemandVector {
        DemandVector::new(self.cpu + o.cpu, self.ram + o.ram, self.disk + o.disk)
    }
}

impl AddAssign for DemandVector {
    fn add_assign(&mut self, o: DemandVector) {
        *self = *self + o;
    }
}

impl Sub for DemandVector {
    type Output = DemandVector;
    fn sub(self, o: DemandVector) -> DemandVector {
        DemandVector::new(self.cpu - o.cpu, self.ram - o.ram, self.disk - o.disk)
    }
}

impl core::iter::Sum for DemandVector {
    fn sum<I: Iterator<Item = DemandVector>>(iter: I) -> DemandVector {
        iter.fold(DemandVector::ZERO, |a, b| a + b)
    }
}

/// Per-workload demands for one interval, keyed by workload id.
pub type Demands = BTreeMap<WorkloadId, DemandVector>;

/// Gaussian provisioning (boot) delay of a VM type, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProvisionDelay {
    pub mean_s: f64,
    pub std_s: f64,
}

impl ProvisionDelay {
    /// Draws one boot delay, truncated to `[0, interval_s]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, interval_s: f64) -> f64 {
        let raw = match Normal::new(self.mean_s, self.std_s) {
            Ok(dist) => dist.sample(rng),
            Err(_) => self.mean_s,
        };
        raw.clamp(0.0, interval_s)
    }
}

pub const POWER_POINTS: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmType {
    pub name: String,
    /// IPS.
    pub cpu_capacity: f64,
    /// GB.
    pub ram_capacity: f64,
    /// GB.
    pub disk_capacity: f64,
    /// USD per hour.
    pub cost_per_hour: f64,
    pub provision_delay: ProvisionDelay,
    /// Watts at 0%, 10%, ..., 100% CPU utilization.
    pub power_table: [f64; POWER_POINTS],
}

impl VmType {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |field, reason| DomainError::InvalidField {
            vm: self.name.clone(),
            field,
            reason,
        };
        if self.name.is_empty() {
            return Err(bad("name", "must be non-empty"));
        }
        for (field, v) in [
            ("cpu_ips", self.cpu_capacity),
            ("ram_gb", self.ram_capacity),
            ("disk_gb", self.disk_capacity),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(field, "capacity must be positive"));
            }
        }
        if !(self.cost_per_hour.is_finite() && self.cost_per_hour >= 0.0) {
            return Err(bad("cost_per_hour_usd", "must be non-negative"));
        }
        if !(self.provision_delay.mean_s.is_finite() && self.provision_delay.mean_s >= 0.0) {
            return Err(bad("provision_mean_s", "must be non-negative"));
        }
        if !(self.provision_delay.std_s.is_finite() && self.provision_delay.std_s >= 0.0) {
            return Err(bad("provision_std_s", "must be non-negative"));
        }
        if self.power_table.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(bad("power_watts", "must be finite and non-negative"));
        }
        if self.power_table.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad("power_watts", "must be non-decreasing in utilization"));
        }
        Ok(())
    }

    pub fn capacity(&self) -> DemandVector {
        DemandVector::new(self.cpu_capacity, self.ram_capacity, self.disk_capacity)
    }

    /// Default power curve: linear from 60% to 100% of `max_watts`.
    pub fn linear_power_table(max_watts: f64) -> [f64; POWER_POINTS] {
        let mut table = [0.0; POWER_POINTS];
        for (i, w) in table.iter_mut().enumerate() {
            *w = max_watts * (0.6 + 0.4 * i as f64 / 10.0);
        }
        table
    }

    /// Power draw in watts at a CPU utilization fraction, interpolating the
    /// 10%-step table linearly. Utilization is clamped to `[0, 1]`.
    pub fn power_at(&self, utilization: f64) -> f64 {
        let u = if utilization.is_nan() {
            0.0
        } else {
            utilization.clamp(0.0, 1.0)
        };
        let pos = u * 10.0;
        let lo = libm::floor(pos) as usize;
        if lo >= POWER_POINTS - 1 {
            return self.power_table[POWER_POINTS - 1];
        }
        let frac = pos - lo as f64;
        self.power_table[lo] + frac * (self.power_table[lo + 1] - self.power_table[lo])
    }

    pub fn peak_power(&self) -> f64 {
        self.power_table[POWER_POINTS - 1]
    }

    /// Cost of keeping one host of this type for `interval_s` seconds.
    pub fn interval_cost(&self, interval_s: f64) -> f64 {
        self.cost_per_hour * interval_s / SECONDS_PER_HOUR
    }
}

/// The static set of VM types and the cap on simultaneously active hosts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmCatalog {
    vm_types: Vec<VmType>,
    max_hosts: usize,
}

impl VmCatalog {
    pub const DEFAULT_MAX_HOSTS: usize = 200;

    pub fn new(vm_types: Vec<VmType>, max_hosts: usize) -> Result<Self, DomainError> {
        if vm_types.is_empty() {
            return Err(DomainError::EmptyCatalog);
        }
        if max_hosts == 0 {
            return Err(DomainError::ZeroMaxHosts);
        }
        for (i, vm) in vm_types.iter().enumerate() {
            vm.validate()?;
            if vm_types[..i].iter().any(|other| other.name == vm.name) {
                return Err(DomainError::DuplicateName(vm.name.clone()));
            }
        }
        Ok(Self {
            vm_types,
            max_hosts,
        })
    }

    /// B2s / B4ms / B8ms with East-US style hourly prices.
    pub fn azure_default() -> Self {
        let vm = |name: &str, cpu, ram, disk, cost, mean, std, watts| VmType {
            name: name.into(),
            cpu_capacity: cpu,
            ram_capacity: ram,
            disk_capacity: disk,
            cost_per_hour: cost,
            provision_delay: ProvisionDelay {
                mean_s: mean,
                std_s: std,
            },
            power_table: VmType::linear_power_table(watts),
        };
        Self::new(
            alloc::vec![
                vm("B2s", 4000.0, 4.0, 32.0, 0.09, 90.0, 15.0, 120.0),
                vm("B4ms", 8000.0, 16.0, 64.0, 0.166, 105.0, 20.0, 190.0),
                vm("B8ms", 16000.0, 32.0, 128.0, 0.333, 120.0, 25.0, 310.0),
            ],
            Self::DEFAULT_MAX_HOSTS,
        )
        .expect("default catalog is valid")
    }

    pub fn with_max_hosts(mut self, max_hosts: usize) -> Result<Self, DomainError> {
        if max_hosts == 0 {
            return Err(DomainError::ZeroMaxHosts);
        }
        self.max_hosts = max_hosts;
        Ok(self)
    }

    pub fn vm_types(&self) -> &[VmType] {
        &self.vm_types
    }

    pub fn vm_type(&self, index: usize) -> &VmType {
        &self.vm_types[index]
    }

    pub fn len(&self) -> usize {
        self.vm_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vm_types.is_empty()
    }

    pub fn max_hosts(&self) -> usize {
        self.max_hosts
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vm_types.iter().position(|v| v.name == name)
    }

    /// Componentwise maximum capacity over all types; the normalization
    /// scale for model features.
    pub fn max_capacity(&self) -> DemandVector {
        self.vm_types
            .iter()
            .fold(DemandVector::ZERO, |acc, v| acc.max(v.capacity()))
    }

    pub fn max_cost_per_hour(&self) -> f64 {
        self.vm_types
            .iter()
            .map(|v| v.cost_per_hour)
            .fold(0.0, f64::max)
    }

    pub fn max_peak_power(&self) -> f64 {
        self.vm_types.iter().map(|v| v.peak_power()).fold(0.0, f64::max)
    }
}

/// An active (or booting) VM instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    /// Index into the [`VmCatalog`].
    pub vm_type: usize,
    pub active_since: usize,
    /// Seconds into the current interval at which the host finishes booting.
    pub pending_until: Option<f64>,
}

/// Per-host feature `[Σ cpu, Σ ram, Σ disk, c̄, r̄, s̄]` over the workloads
/// allocated to it. Capacity is not enforced here.
pub fn host_feature<I>(vm: &VmType, allocated: I) -> [f64; 6]
where
    I: IntoIterator<Item = DemandVector>,
{
    let used: DemandVector = allocated.into_iter().sum();
    [
        used.cpu,
        used.ram,
        used.disk,
        vm.cpu_capacity,
        vm.ram_capacity,
        vm.disk_capacity,
    ]
}

/// A running job whose per-interval demand is replayed from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub id: WorkloadId,
    pub arrival_interval: usize,
    pub trace: Vec<DemandVector>,
    /// Seconds.
    pub sla_deadline: f64,
    /// Waiting, boot and migration delays accumulated so far, in seconds.
    pub accrued_delay: f64,
}

impl Workload {
    pub fn new(
        id: WorkloadId,
        arrival_interval: usize,
        trace: Vec<DemandVector>,
        sla_deadline: f64,
    ) -> Result<Self, DomainError> {
        if trace.is_empty() {
            return Err(DomainError::EmptyTrace { id });
        }
        for (offset, d) in trace.iter().enumerate() {
            for (field, v) in [("cpu", d.cpu), ("ram", d.ram), ("disk", d.disk)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(DomainError::InvalidDemand { id, field, offset });
                }
            }
        }
        if !(sla_deadline.is_finite() && sla_deadline > 0.0) {
            return Err(DomainError::InvalidDeadline { id });
        }
        Ok(Self {
            id,
            arrival_interval,
            trace,
            sla_deadline,
            accrued_delay: 0.0,
        })
    }

    /// Last interval in which the workload runs.
    pub fn final_interval(&self) -> usize {
        self.arrival_interval + self.trace.len() - 1
    }

    /// Demand at interval `t`: the trace row at offset `t - arrival`.
    pub fn demand_at(&self, t: usize) -> Result<DemandVector, DomainError> {
        if t < self.arrival_interval {
            return Err(DomainError::NotArrived { id: self.id, t });
        }
        self.trace
            .get(t - self.arrival_interval)
            .copied()
            .ok_or(DomainError::WorkloadCompleted { id: self.id, t })
    }
}

/// A workload as read from a trace file, before it is given an arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTemplate {
    pub source_id: u64,
    pub first_interval: usize,
    pub trace: Vec<DemandVector>,
}

/// How SLA deadlines are derived from trace length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaPolicy {
    pub multiplier: f64,
    pub interval_s: f64,
}

impl Default for SlaPolicy {
    fn default() -> Self {
        Self {
            multiplier: 1.5,
            interval_s: 300.0,
        }
    }
}

impl SlaPolicy {
    pub fn deadline(&self, trace_len: usize) -> f64 {
        self.multiplier * trace_len as f64 * self.interval_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub interval: usize,
    pub workload: Workload,
}

/// Mean arrivals per interval implied by the templates' first intervals.
pub fn fitted_arrival_rate(templates: &[WorkloadTemplate]) -> f64 {
    let Some(first) = templates.iter().map(|t| t.first_interval).min() else {
        return 0.0;
    };
    let last = templates.iter().map(|t| t.first_interval).max().unwrap_or(first);
    templates.len() as f64 / (last - first + 1) as f64
}

/// Arrival plan over `horizon` intervals with Poisson counts fitted to the
/// templates. Pure in `(templates, horizon, seed)`.
pub fn synthesize_arrivals(
    templates: &[WorkloadTemplate],
    horizon: usize,
    seed: u64,
    sla: SlaPolicy,
) -> Vec<Arrival> {
    synthesize_arrivals_at_rate(templates, horizon, fitted_arrival_rate(templates), seed, sla)
}

/// As [`synthesize_arrivals`] with an explicit rate λ (arrivals / interval).
pub fn synthesize_arrivals_at_rate(
    templates: &[WorkloadTemplate],
    horizon: usize,
    rate: f64,
    seed: u64,
    sla: SlaPolicy,
) -> Vec<Arrival> {
    let mut plan = Vec::new();
    if templates.is_empty() || !(rate > 0.0) || !rate.is_finite() {
        return plan;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(rate).expect("positive finite rate");
    let mut next_id = 0u64;
    for interval in 0..horizon {
        let count = poisson.sample(&mut rng) as usize;
        for _ in 0..count {
            let tpl = &templates[rng.random_range(0..templates.len())];
            let workload = Workload {
                id: WorkloadId(next_id),
                arrival_interval: interval,
                trace: tpl.trace.clone(),
                sla_deadline: sla.deadline(tpl.trace.len()),
                accrued_delay: 0.0,
            };
            next_id += 1;
            plan.push(Arrival { interval, workload });
        }
    }
    plan
}

/// Parameters of the sinusoid-plus-noise trace generator that stands in for
/// public datacenter traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTraceSpec {
    pub workloads: usize,
    /// Templates' first intervals are spread uniformly over this many intervals.
    pub span_intervals: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub cpu_range: (f64, f64),
    pub ram_range: (f64, f64),
    pub disk_range: (f64, f64),
    /// Relative amplitude of the shared sinusoid.
    pub amplitude: f64,
    /// Period in intervals.
    pub period: f64,
    /// Relative standard deviation of per-interval Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticTraceSpec {
    fn default() -> Self {
        Self {
            workloads: 200,
            span_intervals: 100,
            min_len: 4,
            max_len: 16,
            cpu_range: (400.0, 2400.0),
            ram_range: (0.25, 3.0),
            disk_range: (1.0, 8.0),
            amplitude: 0.35,
            period: 24.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Generates templates whose demands follow a shared daily-style sinusoid
/// (phase tied to absolute interval) with per-workload scale and noise.
pub fn synthetic_templates(spec: &SyntheticTraceSpec) -> Vec<WorkloadTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let span = spec.span_intervals.max(1);
    let (lo_len, hi_len) = (spec.min_len.max(1), spec.max_len.max(spec.min_len.max(1)));
    let uniform = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| {
        if b > a {
            rng.random_range(a..b)
        } else {
            a
        }
    };
    let mut out = Vec::with_capacity(spec.workloads);
    for i in 0..spec.workloads {
        let first_interval = if spec.workloads <= 1 {
            0
        } else {
            i * span / spec.workloads
        };
        let len = rng.random_range(lo_len..=hi_len);
        let base = DemandVector::new(
            uniform(&mut rng, spec.cpu_range),
            uniform(&mut rng, spec.ram_range),
            uniform(&mut rng, spec.disk_range),
        );
        let trace = (0..len)
            .map(|k| {
                let phase = 2.0 * core::f64::consts::PI * (first_interval + k) as f64
                    / spec.period.max(1.0);
                let level = 1.0 + spec.amplitude * libm::sin(phase);
                let cpu = base.cpu * (level + noise.sample(&mut rng));
                let ram = base.ram * (1.0 + 0.5 * spec.amplitude * libm::sin(phase))
                    + base.ram * noise.sample(&mut rng);
                let disk = base.disk * (1.0 + noise.sample(&mut rng) * 0.5);
                DemandVector::new(cpu, ram, disk).clamp_non_negative()
            })
            .collect();
        out.push(WorkloadTemplate {
            source_id: i as u64,
            first_interval,
            trace,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn default_catalog_matches_azure_types() {
        let cat = VmCatalog::azure_default();
        let names: Vec<_> = cat.vm_types().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["B2s", "B4ms", "B8ms"]);
        let b2s = cat.vm_type(0);
        assert_eq!(b2s.ram_capacity, 4.0);
        assert_eq!(b2s.cost_per_hour, 0.09);
        assert_eq!(cat.vm_type(1).ram_capacity, 16.0);
        assert_eq!(cat.vm_type(2).ram_capacity, 32.0);
        assert_eq!(cat.max_hosts(), 200);
    }

    #[test]
    fn empty_catalog_rejected() {
        assert_eq!(VmCatalog::new(vec![], 10), Err(DomainError::EmptyCatalog));
        assert_eq!(
            DomainError::EmptyCatalog.to_string(),
            "catalog must be non-empty"
        );
    }

    #[test]
    fn zero_capacity_names_field() {
        let mut vm = VmCatalog::azure_default().vm_type(0).clone();
        vm.ram_capacity = 0.0;
        let err = VmCatalog::new(vec![vm], 5).unwrap_err();
        assert!(matches!(err, DomainError::InvalidField { field: "ram_gb", .. }));
    }

    #[test]
    fn decreasing_power_table_rejected() {
        let mut vm = VmCatalog::azure_default().vm_type(0).clone();
        vm.power_table[5] = 0.0;
        assert!(vm.validate().is_err());
    }

    #[test]
    fn power_interpolation() {
        let vm = VmCatalog::azure_default().vm_type(0).clone();
        assert_eq!(vm.power_at(0.0), 72.0);
        assert_eq!(vm.power_at(1.0), 120.0);
        assert!((vm.power_at(0.55) - 120.0 * (0.6 + 0.4 * 0.55)).abs() < 1e-9);
    }

    #[test]
    fn host_feature_sums_allocations() {
        let cat = VmCatalog::azure_default();
        let b2s = cat.vm_type(0);
        assert_eq!(
            host_feature(b2s, []),
            [0.0, 0.0, 0.0, 4000.0, 4.0, 32.0]
        );
        let f = host_feature(
            b2s,
            [
                DemandVector::new(100.0, 1.0, 1.0),
                DemandVector::new(200.0, 0.5, 2.0),
            ],
        );
        assert_eq!(f[0], 300.0);
        // over capacity is still reported
        let f = host_feature(b2s, [DemandVector::new(9000.0, 9.0, 9.0)]);
        assert_eq!(f[0], 9000.0);
    }

    #[test]
    fn workload_feature_lookup() {
        let w = Workload::new(
            WorkloadId(7),
            3,
            vec![DemandVector::new(1000.0, 1.0, 1.0), DemandVector::new(1200.0, 1.0, 1.0)],
            900.0,
        )
        .unwrap();
        assert_eq!(w.demand_at(3).unwrap().cpu, 1000.0);
        assert_eq!(w.demand_at(4).unwrap().cpu, 1200.0);
        assert_eq!(
            w.demand_at(5),
            Err(DomainError::WorkloadCompleted { id: WorkloadId(7), t: 5 })
        );
        assert!(w.demand_at(2).is_err());
        assert_eq!(w.final_interval(), 4);
    }

    #[test]
    fn negative_demand_rejected() {
        let err = Workload::new(
            WorkloadId(1),
            0,
            vec![DemandVector::new(1.0, -1.0, 0.0)],
            10.0,
        )
        .unwrap_err();
        assert_eq!(
            err,
            DomainError::InvalidDemand {
                id: WorkloadId(1),
                field: "ram",
                offset: 0
            }
        );
    }

    fn flat_templates(n: usize) -> Vec<WorkloadTemplate> {
        (0..n)
            .map(|i| WorkloadTemplate {
                source_id: i as u64,
                first_interval: i,
                trace: vec![DemandVector::new(100.0, 1.0, 1.0); 3],
            })
            .collect()
    }

    #[test]
    fn arrivals_deterministic_per_seed() {
        let tpl = flat_templates(10);
        let a = synthesize_arrivals_at_rate(&tpl, 50, 2.0, 1, SlaPolicy::default());
        let b = synthesize_arrivals_at_rate(&tpl, 50, 2.0, 1, SlaPolicy::default());
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let c = synthesize_arrivals_at_rate(&tpl, 50, 2.0, 2, SlaPolicy::default());
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rate_gives_empty_plan() {
        let tpl = flat_templates(10);
        assert!(synthesize_arrivals_at_rate(&tpl, 50, 0.0, 1, SlaPolicy::default()).is_empty());
        assert!(synthesize_arrivals(&[], 50, 1, SlaPolicy::default()).is_empty());
    }

    #[test]
    fn poisson_fit_total_within_twenty_percent() {
        // One template per interval over 200 intervals: λ = 1.
        let tpl = flat_templates(200);
        assert_eq!(fitted_arrival_rate(&tpl), 1.0);
        let total: usize = (0..10)
            .map(|seed| synthesize_arrivals(&tpl, 200, seed, SlaPolicy::default()).len())
            .sum();
        let mean = total as f64 / 10.0;
        assert!((mean - 200.0).abs() <= 40.0, "mean arrivals {mean}");
    }

    #[test]
    fn sla_deadline_scales_with_length() {
        let sla = SlaPolicy::default();
        assert_eq!(sla.deadline(2), 900.0);
    }

    #[test]
    fn synthetic_templates_are_valid_and_pure() {
        let spec = SyntheticTraceSpec::default();
        let a = synthetic_templates(&spec);
        assert_eq!(a, synthetic_templates(&spec));
        assert_eq!(a.len(), spec.workloads);
        for t in &a {
            assert!(t.trace.len() >= spec.min_len && t.trace.len() <= spec.max_len);
            assert!(t.trace.iter().all(|d| d.is_non_negative() && d.is_finite()));
        }
    }
}
