//! Files written and read by the runner.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use cilp_core::autodiff::Tensor;
use cilp_core::domain::{DemandVector, Demands, HostId, WorkloadId};
use cilp_core::model::{ActionFeature, CilpModel, ModelConfig, Snapshot};
use cilp_core::sched::HostSlot;
use cilp_core::train::{History, TrainingRow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::episode::IntervalRow;
use crate::error::CliError;

pub const CHECKPOINT_FORMAT: &str = "cilp-checkpoint";
pub const DATASET_FORMAT: &str = "cilp-dataset";
pub const FORMAT_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::write(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::read(path, e))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CliError::write(path, e))?;
    w.flush().map_err(|e| CliError::write(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Writes serializable rows as CSV with a header from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn write_metrics(path: &Path, rows: &[IntervalRow]) -> Result<(), CliError> {
    write_csv(path, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_history(path: &Path, history: &History) -> Result<(), CliError> {
    let rows: Vec<HistoryRow> = history
        .epochs
        .iter()
        .map(|e| HistoryRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_loss: e.val_loss,
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Versioned JSON checkpoint: configuration, normalization scale and a
/// name → tensor map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub scale: DemandVector,
    /// Label generation plus fitting, seconds.
    pub train_time_s: f64,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn of(model: &CilpModel, train_time_s: f64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: FORMAT_VERSION,
            config: model.network.config,
            scale: model.scale,
            train_time_s,
            params: model
                .params
                .iter()
                .map(|(_, p)| {
                    (
                        p.name.clone(),
                        StoredTensor {
                            shape: [p.value.rows(), p.value.cols()],
                            values: p.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Rebuilds the model; every parameter must be present with its shape
    /// and no extra names are allowed.
    pub fn into_model(self) -> Result<CilpModel, String> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(format!("unexpected format {:?}", self.format));
        }
        if self.version != FORMAT_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        let mut model = CilpModel::with_scale(self.config, self.scale, 0).map_err(|e| e.to_string())?;
        if model.params.len() != self.params.len() {
            return Err(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                self.params.len()
            ));
        }
        let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let stored = self.params.get(&name).ok_or_else(|| format!("missing parameter {name:?}"))?;
            let expected = model.params.value(id).shape();
            if (stored.shape[0], stored.shape[1]) != expected {
                return Err(format!("parameter {name:?} has shape {:?}, expected {expected:?}", stored.shape));
            }
            let t = Tensor::from_vec(stored.shape[0], stored.shape[1], stored.values.clone())
                .map_err(|e| format!("parameter {name:?}: {e}"))?;
            if !t.is_finite() {
                return Err(format!("parameter {name:?} has non-finite values"));
            }
            *model.params.value_mut(id) = t;
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, model: &CilpModel, train_time_s: f64) -> Result<(), CliError> {
    write_json(path, &Checkpoint::of(model, train_time_s))
}

/// The model and its recorded training time.
pub fn load_checkpoint(path: &Path) -> Result<(CilpModel, f64), CliError> {
    let bad = |message: String| CliError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let ck: Checkpoint = serde_json::from_reader(open(path)?).map_err(|e| bad(e.to_string()))?;
    let time = ck.train_time_s;
    Ok((ck.into_model().map_err(bad)?, time))
}

/// One CSV line per (row, workload).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLine {
    pub episode: usize,
    pub t: usize,
    pub workload_id: u64,
    /// Empty when the workload was queued.
    pub host_id: Option<u64>,
    pub obs_cpu: f64,
    pub obs_ram: f64,
    pub obs_disk: f64,
    pub target_cpu: f64,
    pub target_ram: f64,
    pub target_disk: f64,
}

/// Per-row data that does not fit the flat CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRowMeta {
    pub episode: usize,
    pub t: usize,
    pub hosts: Vec<HostSlot>,
    pub candidates: Vec<ActionFeature>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format: String,
    pub version: u32,
    pub rows: Vec<DatasetRowMeta>,
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_dataset(stem: &Path, rows: &[TrainingRow]) -> Result<(), CliError> {
    let mut lines = Vec::new();
    let mut meta = Vec::with_capacity(rows.len());
    for row in rows {
        for (w, obs) in &row.snapshot.workloads {
            let target = row.target.get(w).copied().unwrap_or_default();
            lines.push(DatasetLine {
                episode: row.episode,
                t: row.t,
                workload_id: w.0,
                host_id: row.snapshot.placements.get(w).map(|h| h.0),
                obs_cpu: obs.cpu,
                obs_ram: obs.ram,
                obs_disk: obs.disk,
                target_cpu: target.cpu,
                target_ram: target.ram,
                target_disk: target.disk,
            });
        }
        meta.push(DatasetRowMeta {
            episode: row.episode,
            t: row.t,
            hosts: row.snapshot.hosts.clone(),
            candidates: row.candidates.clone(),
            labels: row.labels.clone(),
        });
    }
    write_csv(&stem.with_extension("csv"), &lines)?;
    write_json(
        &stem.with_extension("json"),
        &DatasetSidecar {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            rows: meta,
        },
    )
}

pub fn read_dataset(stem: &Path) -> Result<Vec<TrainingRow>, CliError> {
    let json = stem.with_extension("json");
    let bad = |message: String| CliError::Dataset {
        path: json.clone(),
        message,
    };
    let sidecar: DatasetSidecar = serde_json::from_reader(open(&json)?).map_err(|e| bad(e.to_string()))?;
    if sidecar.format != DATASET_FORMAT || sidecar.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", sidecar.format, sidecar.version)));
    }
    let csv_path = stem.with_extension("csv");
    let lines: Vec<DatasetLine> = read_csv(&csv_path).map_err(|e| match e {
        CliError::Csv(e) => CliError::Dataset {
            path: csv_path.clone(),
            message: e.to_string(),
        },
        other => other,
    })?;
    let mut by_row: BTreeMap<(usize, usize), Vec<DatasetLine>> = BTreeMap::new();
    for l in lines {
        by_row.entry((l.episode, l.t)).or_default().push(l);
    }
    let mut rows = Vec::with_capacity(sidecar.rows.len());
    for m in sidecar.rows {
        if m.labels.len() != m.candidates.len() {
            return Err(bad(format!("episode {} t {}: label count mismatch", m.episode, m.t)));
        }
        let lines = by_row.remove(&(m.episode, m.t)).unwrap_or_default();
        let mut observed = Demands::new();
        let mut target = Demands::new();
        let mut placements = BTreeMap::new();
        for l in lines {
            let w = WorkloadId(l.workload_id);
            observed.insert(w, DemandVector::new(l.obs_cpu, l.obs_ram, l.obs_disk));
            target.insert(w, DemandVector::new(l.target_cpu, l.target_ram, l.target_disk));
            if let Some(h) = l.host_id {
                placements.insert(w, HostId(h));
            }
        }
        rows.push(TrainingRow {
            episode: m.episode,
            t: m.t,
            snapshot: Snapshot::new(m.hosts, &observed, placements),
            candidates: m.candidates,
            target,
            labels: m.labels,
        });
    }
    if let Some(((e, t), _)) = by_row.into_iter().next() {
        return Err(bad(format!("csv lines for episode {e} t {t} have no sidecar row")));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cilp_core::domain::VmCatalog;
    use cilp_core::train::EpochStats;

    fn small_model() -> CilpModel {
        let cfg = ModelConfig {
            width: 8,
            heads: 2,
            hidden: 8,
            ..ModelConfig::default()
        };
        CilpModel::new(cfg, &VmCatalog::azure_default(), 3).unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let model = small_model();
        save_checkpoint(&path, &model, 12.5).unwrap();
        let (back, time) = load_checkpoint(&path).unwrap();
        assert_eq!(time, 12.5);
        assert_eq!(back.params.flat_values(), model.params.flat_values());
        assert_eq!(back.scale, model.scale);
    }

    #[test]
    fn checkpoint_rejects_mismatches() {
        let model = small_model();
        let mut ck = Checkpoint::of(&model, 0.0);
        ck.version = 99;
        assert!(ck.clone().into_model().unwrap_err().contains("version"));
        let mut ck = Checkpoint::of(&model, 0.0);
        let name = ck.params.keys().next().unwrap().clone();
        ck.params.get_mut(&name).unwrap().shape = [1, 1];
        assert!(ck.into_model().unwrap_err().contains("shape"));
        let mut ck = Checkpoint::of(&model, 0.0);
        ck.params.remove(&name);
        assert!(ck.into_model().is_err());
    }

    #[test]
    fn corrupt_checkpoint_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        std::fs::write(&path, "{ not json").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn history_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let h = History {
            epochs: vec![EpochStats {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
            }],
            ..History::default()
        };
        write_history(&path, &h).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss\n1,0.5,0.25\n");
    }

    #[test]
    fn metrics_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let row = IntervalRow {
            t: 0,
            r: 0.1,
            cost_usd: 0.0075,
            q_e: 0.0,
            q_r: 0.0,
            q_sla: 0.0,
            qos: 1.0,
            reward: 0.1,
            active_hosts: 1,
            live_workloads: 0,
            migrations: 0,
            provisions: 0,
            deallocations: 0,
        };
        write_metrics(&path, std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "t,r,cost_usd,q_e,q_r,q_sla,qos,reward,active_hosts,live_workloads,migrations,provisions,deallocations\n"
        ));
        assert_eq!(read_csv::<IntervalRow>(&path).unwrap(), vec![row]);
    }

    #[test]
    fn dataset_round_trip() {
        use crate::config::{ExperimentConfig, Scenario, TrainSection};
        let cfg = ExperimentConfig {
            intervals: 5,
            max_hosts: Some(5),
            arrival_rate: Some(1.5),
            ..ExperimentConfig::default()
        };
        let scn = Scenario::from_config(&cfg).unwrap();
        let train = TrainSection {
            rollouts: 2,
            ..TrainSection::default()
        };
        let rows = crate::pipeline::build_dataset(&scn, &train).unwrap();
        assert!(rows.iter().any(|r| !r.snapshot.workloads.is_empty()));
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("dataset");
        write_dataset(&stem, &rows).unwrap();
        let header = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
        assert!(header.starts_with(
            "episode,t,workload_id,host_id,obs_cpu,obs_ram,obs_disk,target_cpu,target_ram,target_disk\n"
        ));
        assert_eq!(read_dataset(&stem).unwrap(), rows);
    }

    #[test]
    fn malformed_dataset_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("dataset");
        std::fs::write(stem.with_extension("json"), "[]").unwrap();
        assert_eq!(read_dataset(&stem).unwrap_err().exit_code(), 2);
    }
}
