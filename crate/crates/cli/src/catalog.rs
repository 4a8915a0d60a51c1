//! VM catalog files: TOML with one `[[vm]]` table per type.

use std::path::Path;

use cilp_core::domain::{ProvisionDelay, VmCatalog, VmType, POWER_POINTS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmEntry {
    pub name: String,
    pub cpu_ips: f64,
    pub ram_gb: f64,
    pub disk_gb: f64,
    pub cost_per_hour_usd: f64,
    pub provision_mean_s: f64,
    pub provision_std_s: f64,
    /// Watts at 0, 10, …, 100% cpu utilization.
    pub power_watts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFile {
    #[serde(default = "default_max_hosts")]
    pub max_hosts: usize,
    #[serde(default)]
    pub vm: Vec<VmEntry>,
}

fn default_max_hosts() -> usize {
    VmCatalog::DEFAULT_MAX_HOSTS
}

impl CatalogFile {
    pub fn from_catalog(catalog: &VmCatalog) -> Self {
        Self {
            max_hosts: catalog.max_hosts(),
            vm: catalog
                .vm_types()
                .iter()
                .map(|v| VmEntry {
                    name: v.name.clone(),
                    cpu_ips: v.cpu_capacity,
                    ram_gb: v.ram_capacity,
                    disk_gb: v.disk_capacity,
                    cost_per_hour_usd: v.cost_per_hour,
                    provision_mean_s: v.provision_delay.mean_s,
                    provision_std_s: v.provision_delay.std_s,
                    power_watts: v.power_table.to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_catalog(self) -> Result<VmCatalog, String> {
        let mut types = Vec::with_capacity(self.vm.len());
        for e in self.vm {
            let power_table: [f64; POWER_POINTS] = e.power_watts.as_slice().try_into().map_err(|_| {
                format!(
                    "VM type {:?}: power_watts needs {POWER_POINTS} values, got {}",
                    e.name,
                    e.power_watts.len()
                )
            })?;
            types.push(VmType {
                name: e.name,
                cpu_capacity: e.cpu_ips,
                ram_capacity: e.ram_gb,
                disk_capacity: e.disk_gb,
                cost_per_hour: e.cost_per_hour_usd,
                provision_delay: ProvisionDelay {
                    mean_s: e.provision_mean_s,
                    std_s: e.provision_std_s,
                },
                power_table,
            });
        }
        VmCatalog::new(types, self.max_hosts).map_err(|e| e.to_string())
    }
}

pub fn parse_catalog(text: &str) -> Result<VmCatalog, String> {
    let file: CatalogFile = toml::from_str(text).map_err(|e| e.to_string())?;
    file.into_catalog()
}

pub fn load_catalog(path: &Path) -> Result<VmCatalog, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse_catalog(&text).map_err(|message| CliError::Catalog {
        path: path.to_path_buf(),
        message,
    })
}

pub fn catalog_to_toml(catalog: &VmCatalog) -> String {
    toml::to_string_pretty(&CatalogFile::from_catalog(catalog)).expect("catalog serializes")
}
