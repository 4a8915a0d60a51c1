//! The provisioner network: graph attention over the schedule, a window
//! encoder over last interval's demands, a transformer encoder over both,
//! a demand decoder and a per-action likelihood head.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    positional_encoding, AutodiffError, EncoderBlock, FeedForward, Graph, GraphAttention, LayerNorm, Linear,
    ModelParams, Tensor, Var, DEFAULT_SLOPE,
};
use crate::cosim::SimState;
use crate::domain::{host_feature, DemandVector, Demands, HostId, VmCatalog, WorkloadId};
use crate::provision::ProvisionModel;
use crate::sched::HostSlot;

/// What a candidate action does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Deallocate(HostId),
    /// Catalog index of the VM type to create.
    Provision(usize),
}

/// One provisioning action `p^i` and its feature vector `F^i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionFeature {
    pub kind: ActionKind,
    /// `H^i` for deallocations, `[0, 0, 0, c̄, r̄, s̄]` for provisions.
    pub features: [f64; 6],
}

/// A schedule with per-workload demands: what the network sees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Fleet, ascending id.
    pub hosts: Vec<HostSlot>,
    /// Live workloads and their demand rows, ascending id.
    pub workloads: Vec<(WorkloadId, DemandVector)>,
    pub placements: BTreeMap<WorkloadId, HostId>,
}

impl Snapshot {
    /// `(D̂_{t−1}, W_{t−1})` of a state.
    pub fn of_state(state: &SimState, catalog: &VmCatalog, demands: &Demands) -> Self {
        Self::new(state.host_slots(catalog), demands, state.placements().clone())
    }

    pub fn new(hosts: Vec<HostSlot>, demands: &Demands, placements: BTreeMap<WorkloadId, HostId>) -> Self {
        Self {
            hosts,
            workloads: demands.iter().map(|(w, d)| (*w, *d)).collect(),
            placements,
        }
    }

    pub fn demands(&self) -> Demands {
        self.workloads.iter().copied().collect()
    }

    /// Host feature `H^i` of the host at `index` in [`Snapshot::hosts`].
    pub fn host_feature(&self, index: usize, catalog: &VmCatalog) -> [f64; 6] {
        let h = &self.hosts[index];
        let placed = self
            .workloads
            .iter()
            .filter(|(w, _)| self.placements.get(w) == Some(&h.id))
            .map(|(_, d)| *d);
        host_feature(catalog.vm_type(h.vm_type), placed)
    }
}

/// Width of a graph node embedding.
pub const NODE_FEATURES: usize = 7;
/// Width of a candidate row: `F^i` plus a provision flag.
pub const ACTION_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of `E = [E^G, E^W]`; each half gets `width / 2`.
    pub width: usize,
    pub heads: usize,
    /// Transformer blocks in the encoder and in the decoder.
    pub depth: usize,
    /// Hidden width of every feed-forward stack.
    pub hidden: usize,
    /// Hidden layers of the window and transformer feed-forward stacks.
    pub ffn_layers: usize,
    /// Negative slope of the graph attention scores.
    pub gat_slope: f64,
    /// Negative slope of hidden-layer activations.
    pub slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            depth: 1,
            hidden: 64,
            ffn_layers: 1,
            gat_slope: 0.25,
            slope: DEFAULT_SLOPE,
        }
    }
}

impl ModelConfig {
    /// Layer sizes of the original large configuration. Much slower to
    /// train than the default.
    pub fn large() -> Self {
        Self {
            width: 128,
            hidden: 128,
            ffn_layers: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.width < 2 || !self.width.is_multiple_of(2) || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(AutodiffError::Heads {
                width: self.width,
                heads: self.heads,
            });
        }
        Ok(())
    }

    fn hidden_stack(&self) -> Vec<usize> {
        vec![self.hidden; self.ffn_layers]
    }
}

/// Numeric form of a [`Snapshot`] and its candidates.
///
/// Rows are ordered workloads by id, then hosts by id. Every feature is
/// divided by the catalog's largest capacity in its resource.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub workload_ids: Vec<WorkloadId>,
    /// `|𝒲| × 3`.
    pub window: Tensor,
    /// `N × 7` node embeddings, `N = |𝒲| + |ℋ|`.
    pub nodes: Tensor,
    /// `N × N` adjacency, symmetric, bipartite.
    pub adjacency: Vec<bool>,
    /// `K × 7` candidate rows.
    pub actions: Tensor,
}

impl ModelInput {
    pub fn new(snapshot: &Snapshot, actions: &[ActionFeature], scale: DemandVector) -> Self {
        let mut workloads = snapshot.workloads.clone();
        workloads.sort_by_key(|(w, _)| *w);
        let mut hosts = snapshot.hosts.clone();
        hosts.sort_by_key(|h| h.id);
        let s = scale.to_array();
        let norm = |v: [f64; 3]| [v[0] / s[0], v[1] / s[1], v[2] / s[2]];

        let nw = workloads.len();
        let n = nw + hosts.len();
        let window = Tensor::from_fn(nw, 3, |i, j| norm(workloads[i].1.to_array())[j]);

        let host_row: BTreeMap<HostId, usize> = hosts.iter().enumerate().map(|(i, h)| (h.id, nw + i)).collect();
        let mut used = vec![DemandVector::ZERO; hosts.len()];
        let mut adjacency = vec![false; n * n];
        for (i, (w, d)) in workloads.iter().enumerate() {
            if let Some(&row) = snapshot.placements.get(w).and_then(|h| host_row.get(h)) {
                adjacency[i * n + row] = true;
                adjacency[row * n + i] = true;
                used[row - nw] += *d;
            }
        }
        let mut nodes = Tensor::zeros(n, NODE_FEATURES);
        for i in 0..nw {
            for j in 0..3 {
                nodes.set(i, j, window.get(i, j));
            }
        }
        for (k, h) in hosts.iter().enumerate() {
            let u = norm(used[k].to_array());
            let c = norm(h.capacity.to_array());
            for j in 0..3 {
                nodes.set(nw + k, j, u[j]);
                nodes.set(nw + k, 3 + j, c[j]);
            }
            nodes.set(nw + k, 6, 1.0);
        }

        let actions = Tensor::from_fn(actions.len(), ACTION_FEATURES, |i, j| {
            let a = &actions[i];
            match j {
                0..=5 => a.features[j] / s[j % 3],
                _ => f64::from(matches!(a.kind, ActionKind::Provision(_))),
            }
        });

        Self {
            workload_ids: workloads.iter().map(|(w, _)| *w).collect(),
            window,
            nodes,
            adjacency,
            actions,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.rows()
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub encoded: Var,
    /// `Ŵ` in normalized units, `|𝒲| × 3`.
    pub demands: Var,
    /// `K × 1` likelihoods.
    pub likelihoods: Var,
}

/// Layer handles of the network. Parameter values live in a separate
/// [`ModelParams`] so training can borrow them mutably.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: ModelConfig,
    pub gat: GraphAttention,
    pub window: FeedForward,
    pub encoder: Vec<EncoderBlock>,
    pub dec_in: Linear,
    pub dec_norm: LayerNorm,
    pub decoder: Vec<EncoderBlock>,
    pub dec_out: Linear,
    pub head: FeedForward,
}

impl Network {
    pub fn new(config: ModelConfig, params: &mut ModelParams, seed: u64) -> Result<Self, AutodiffError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = config.width / 2;
        let hidden = config.hidden_stack();

        let gat = GraphAttention::new(params, "gat", NODE_FEATURES, half, config.gat_slope, &mut rng)?;
        let mut window_widths = vec![3];
        window_widths.extend_from_slice(&hidden);
        window_widths.push(half);
        let window = FeedForward::new(params, "window", &window_widths, config.slope, &mut rng)?;
        let encoder = (0..config.depth)
            .map(|i| {
                EncoderBlock::new(
                    params,
                    &format!("enc{i}"),
                    config.width,
                    config.heads,
                    &hidden,
                    config.slope,
                    &mut rng,
                )
            })
            .collect::<Result<_, _>>()?;
        let dec_in = Linear::new(params, "dec.in", 3, config.width, &mut rng)?;
        let dec_norm = LayerNorm::new(params, "dec.ln", config.width)?;
        let decoder = (0..config.depth)
            .map(|i| {
                EncoderBlock::new(
                    params,
                    &format!("dec{i}"),
                    config.width,
                    config.heads,
                    &hidden,
                    config.slope,
                    &mut rng,
                )
            })
            .collect::<Result<_, _>>()?;
        let dec_out = Linear::new(params, "dec.out", config.width, 3, &mut rng)?;
        let head = FeedForward::new(
            params,
            "head",
            &[config.width + ACTION_FEATURES, config.hidden, config.hidden, 1],
            config.slope,
            &mut rng,
        )?;
        Ok(Self {
            config,
            gat,
            window,
            encoder,
            dec_in,
            dec_norm,
            decoder,
            dec_out,
            head,
        })
    }

    /// `E^G`: `N × width/2`.
    pub fn encode_graph(&self, g: &mut Graph, params: &ModelParams, input: &ModelInput) -> Result<Var, AutodiffError> {
        let x = g.constant(input.nodes.clone());
        self.gat.forward(g, params, x, &input.adjacency)
    }

    /// `E^W = σ(FFN(W))`: `|𝒲| × width/2`.
    pub fn encode_window(&self, g: &mut Graph, params: &ModelParams, window: Var) -> Result<Var, AutodiffError> {
        let h = self.window.forward(g, params, window)?;
        Ok(g.sigmoid(h))
    }

    /// `E^0 = TransformerEncoder([E^G, E^W] + PE)`, with `E^W` zero-padded
    /// on host rows.
    pub fn encode(&self, g: &mut Graph, params: &ModelParams, eg: Var, ew: Var) -> Result<Var, AutodiffError> {
        let (n, half) = g.shape(eg);
        let nw = g.shape(ew).0;
        let pad = g.constant(Tensor::zeros(n - nw, half));
        let ew = g.concat_rows(&[ew, pad])?;
        let e = g.concat_cols(&[eg, ew])?;
        let pe = g.constant(positional_encoding(n, self.config.width));
        let mut x = g.add(e, pe)?;
        for block in &self.encoder {
            x = block.forward(g, params, x)?;
        }
        Ok(x)
    }

    /// `Ŵ = W + Lin(Dec(LN(Lin(W) + E^0_𝒲)))` in normalized units.
    pub fn predict_demands(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        e0: Var,
        window: Var,
    ) -> Result<Var, AutodiffError> {
        let nw = g.shape(window).0;
        let rows = g.shape(e0).0;
        if nw > rows {
            return Err(AutodiffError::Slice {
                op: "predict_demands",
                start: 0,
                len: nw,
                extent: rows,
            });
        }
        let ew = g.slice_rows(e0, 0, nw)?;
        let wi = self.dec_in.forward(g, params, window)?;
        let sum = g.add(wi, ew)?;
        let mut d = self.dec_norm.forward(g, params, sum)?;
        for block in &self.decoder {
            d = block.forward(g, params, d)?;
        }
        let delta = self.dec_out.forward(g, params, d)?;
        g.add(window, delta)
    }

    /// `l = σ(FFN([mean(E^0), F^i]))`, one row per candidate.
    pub fn likelihoods(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        e0: Var,
        actions: Var,
    ) -> Result<Var, AutodiffError> {
        let k = g.shape(actions).0;
        let pooled = g.mean_rows(e0);
        let rep = g.repeat_rows(pooled, k)?;
        let x = g.concat_cols(&[rep, actions])?;
        let h = self.head.forward(g, params, x)?;
        Ok(g.sigmoid(h))
    }

    /// Both heads over one shared encoding.
    pub fn forward(&self, g: &mut Graph, params: &ModelParams, input: &ModelInput) -> Result<Outputs, AutodiffError> {
        let window = g.constant(input.window.clone());
        let actions = g.constant(input.actions.clone());
        let eg = self.encode_graph(g, params, input)?;
        let ew = self.encode_window(g, params, window)?;
        let encoded = self.encode(g, params, eg, ew)?;
        let demands = self.predict_demands(g, params, encoded, window)?;
        let likelihoods = self.likelihoods(g, params, encoded, actions)?;
        Ok(Outputs {
            encoded,
            demands,
            likelihoods,
        })
    }
}

/// A network with its parameters and the normalization scale it was built
/// for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CilpModel {
    pub network: Network,
    pub params: ModelParams,
    /// Per-resource divisor of every demand and capacity feature.
    pub scale: DemandVector,
}

impl CilpModel {
    pub fn new(config: ModelConfig, catalog: &VmCatalog, seed: u64) -> Result<Self, AutodiffError> {
        Self::with_scale(config, catalog.max_capacity(), seed)
    }

    pub fn with_scale(config: ModelConfig, scale: DemandVector, seed: u64) -> Result<Self, AutodiffError> {
        let mut params = ModelParams::new();
        let network = Network::new(config, &mut params, seed)?;
        Ok(Self { network, params, scale })
    }

    pub fn input(&self, snapshot: &Snapshot, actions: &[ActionFeature]) -> ModelInput {
        ModelInput::new(snapshot, actions, self.scale)
    }

    /// Inference pass: `Ŵ` in original units, clamped at zero, and the
    /// candidate likelihoods.
    pub fn infer(&self, snapshot: &Snapshot, actions: &[ActionFeature]) -> Result<(Demands, Vec<f64>), AutodiffError> {
        let input = self.input(snapshot, actions);
        let mut g = Graph::new();
        let out = self.network.forward(&mut g, &self.params, &input)?;
        Ok((self.denormalize(&input, g.value(out.demands)), g.value(out.likelihoods).data().to_vec()))
    }

    fn denormalize(&self, input: &ModelInput, w: &Tensor) -> Demands {
        input
            .workload_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let v = DemandVector::new(w.get(i, 0), w.get(i, 1), w.get(i, 2));
                (*id, v.mul(self.scale).clamp_non_negative())
            })
            .collect()
    }
}

impl ProvisionModel for CilpModel {
    fn predict_demands(&self, snapshot: &Snapshot) -> Demands {
        let input = self.input(snapshot, &[]);
        let mut g = Graph::new();
        let window = g.constant(input.window.clone());
        let run = |g: &mut Graph| -> Result<Var, AutodiffError> {
            let eg = self.network.encode_graph(g, &self.params, &input)?;
            let ew = self.network.encode_window(g, &self.params, window)?;
            let e0 = self.network.encode(g, &self.params, eg, ew)?;
            self.network.predict_demands(g, &self.params, e0, window)
        };
        let w = run(&mut g).expect("input built from the model's own layout");
        self.denormalize(&input, g.value(w))
    }

    fn likelihoods(&self, snapshot: &Snapshot, candidates: &[ActionFeature]) -> Vec<f64> {
        let input = self.input(snapshot, candidates);
        let mut g = Graph::new();
        let actions = g.constant(input.actions.clone());
        let window = g.constant(input.window.clone());
        let run = |g: &mut Graph| -> Result<Var, AutodiffError> {
            let eg = self.network.encode_graph(g, &self.params, &input)?;
            let ew = self.network.encode_window(g, &self.params, window)?;
            let e0 = self.network.encode(g, &self.params, eg, ew)?;
            self.network.likelihoods(g, &self.params, e0, actions)
        };
        let l = run(&mut g).expect("input built from the model's own layout");
        g.value(l).data().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VmCatalog;

    fn catalog() -> VmCatalog {
        VmCatalog::azure_default()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            width: 16,
            heads: 4,
            hidden: 8,
            ..ModelConfig::default()
        }
    }

    fn slot(id: u64, vm_type: usize) -> HostSlot {
        HostSlot {
            id: HostId(id),
            vm_type,
            capacity: catalog().vm_type(vm_type).capacity(),
        }
    }

    fn snapshot() -> Snapshot {
        let demands: Demands = [
            (WorkloadId(1), DemandVector::new(800.0, 1.0, 2.0)),
            (WorkloadId(4), DemandVector::new(1500.0, 2.5, 4.0)),
            (WorkloadId(7), DemandVector::new(300.0, 0.5, 1.0)),
        ]
        .into_iter()
        .collect();
        let placements = [(WorkloadId(1), HostId(0)), (WorkloadId(4), HostId(0)), (WorkloadId(7), HostId(2))]
            .into_iter()
            .collect();
        Snapshot::new(vec![slot(0, 0), slot(2, 1), slot(5, 2)], &demands, placements)
    }

    fn actions(s: &Snapshot) -> Vec<ActionFeature> {
        let cat = catalog();
        let mut v: Vec<ActionFeature> = (0..s.hosts.len())
            .map(|i| ActionFeature {
                kind: ActionKind::Deallocate(s.hosts[i].id),
                features: s.host_feature(i, &cat),
            })
            .collect();
        for (t, vm) in cat.vm_types().iter().enumerate() {
            v.push(ActionFeature {
                kind: ActionKind::Provision(t),
                features: [0.0, 0.0, 0.0, vm.cpu_capacity, vm.ram_capacity, vm.disk_capacity],
            });
        }
        v
    }

    #[test]
    fn input_layout() {
        let s = snapshot();
        let input = ModelInput::new(&s, &actions(&s), catalog().max_capacity());
        assert_eq!(input.node_count(), 6);
        assert_eq!(input.window.shape(), (3, 3));
        assert_eq!(input.actions.shape(), (6, ACTION_FEATURES));
        // w1 (row 0) sits on h0 (row 3); w7 (row 2) on h2 (row 4); h5 is empty.
        assert!(input.adjacency[3] && input.adjacency[3 * 6]);
        assert!(input.adjacency[2 * 6 + 4]);
        assert!(!input.adjacency[..].iter().skip(5 * 6).any(|&a| a));
        assert!(input.nodes.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(input.actions.get(5, 6), 1.0);
        assert_eq!(input.actions.get(0, 6), 0.0);
    }

    #[test]
    fn outputs_have_contract_shapes_and_ranges() {
        let model = CilpModel::new(small(), &catalog(), 1).unwrap();
        let s = snapshot();
        let acts = actions(&s);
        let (w, l) = model.infer(&s, &acts).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(l.len(), acts.len());
        assert!(l.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(w.values().all(|d| d.is_finite() && d.is_non_negative()));
        assert_eq!((w, l), model.infer(&s, &acts).unwrap());
    }

    #[test]
    fn identical_features_score_identically_and_independently() {
        let model = CilpModel::new(small(), &catalog(), 2).unwrap();
        let s = snapshot();
        let mut acts = actions(&s);
        let base = model.likelihoods(&s, &acts);
        acts.push(acts[1]);
        let more = model.likelihoods(&s, &acts);
        assert_eq!(more[acts.len() - 1], more[1]);
        assert_eq!(&more[..base.len()], &base[..]);
    }

    #[test]
    fn empty_workload_set_gives_empty_prediction() {
        let model = CilpModel::new(small(), &catalog(), 3).unwrap();
        let s = Snapshot::new(vec![slot(0, 0)], &Demands::new(), BTreeMap::new());
        assert!(model.predict_demands(&s).is_empty());
        let none = Snapshot::default();
        assert!(model.predict_demands(&none).is_empty());
        assert_eq!(model.likelihoods(&none, &[]).len(), 0);
    }

    #[test]
    fn input_order_does_not_matter() {
        let model = CilpModel::new(small(), &catalog(), 4).unwrap();
        let s = snapshot();
        let mut shuffled = s.clone();
        shuffled.workloads.reverse();
        shuffled.hosts.reverse();
        assert_eq!(model.predict_demands(&s), model.predict_demands(&shuffled));
    }

    #[test]
    fn gat_rows_follow_workload_relabeling() {
        let model = CilpModel::new(small(), &catalog(), 5).unwrap();
        let s = snapshot();
        // Swap the ids of w1 and w7: rows 0 and 2 trade places.
        let swap = |w: WorkloadId| match w.0 {
            1 => WorkloadId(7),
            7 => WorkloadId(1),
            _ => w,
        };
        let relabeled = Snapshot {
            hosts: s.hosts.clone(),
            workloads: s.workloads.iter().map(|(w, d)| (swap(*w), *d)).collect(),
            placements: s.placements.iter().map(|(w, h)| (swap(*w), *h)).collect(),
        };
        let eg = |s: &Snapshot| {
            let input = model.input(s, &[]);
            let mut g = Graph::new();
            let v = model.network.encode_graph(&mut g, &model.params, &input).unwrap();
            g.value(v).clone()
        };
        let (a, b) = (eg(&s), eg(&relabeled));
        let perm = [2, 1, 0, 3, 4, 5];
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(a.row(i), b.row(p));
        }
    }

    #[test]
    fn singleton_neighborhood_and_isolated_host() {
        let model = CilpModel::new(small(), &catalog(), 6).unwrap();
        let s = snapshot();
        let input = model.input(&s, &[]);
        let alpha = model.network.gat.weights(&model.params, &input.nodes, &input.adjacency).unwrap();
        // w7 has a single neighbor.
        assert_eq!(alpha.get(2, 4), 1.0);
        let mut g = Graph::new();
        let eg = model.network.encode_graph(&mut g, &model.params, &input).unwrap();
        assert!(g.value(eg).row(5).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn window_rows_are_independent() {
        let model = CilpModel::new(small(), &catalog(), 7).unwrap();
        let run = |w: Tensor| {
            let mut g = Graph::new();
            let x = g.constant(w);
            let e = model.network.encode_window(&mut g, &model.params, x).unwrap();
            g.value(e).clone()
        };
        let base = Tensor::from_fn(3, 3, |i, j| 0.1 * (i + j) as f64);
        let mut doubled = base.clone();
        for j in 0..3 {
            doubled.set(1, j, 2.0 * base.get(1, j));
        }
        let (a, b) = (run(base), run(doubled));
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(2), b.row(2));
        assert_ne!(a.row(1), b.row(1));
        assert!(a.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        let zero = run(Tensor::zeros(2, 3));
        assert_eq!(zero.row(0), zero.row(1));
    }

    #[test]
    fn gradient_reaches_both_encoder_branches() {
        let mut model = CilpModel::new(small(), &catalog(), 8).unwrap();
        let s = snapshot();
        let input = model.input(&s, &actions(&s));
        let mut g = Graph::new();
        let out = model.network.forward(&mut g, &model.params, &input).unwrap();
        let a = g.sum(out.demands);
        let b = g.sum(out.likelihoods);
        let loss = g.add(a, b).unwrap();
        g.backward(loss, &mut model.params).unwrap();
        let norm = |id| model.params.grad(id).data().iter().map(|v: &f64| v.abs()).sum::<f64>();
        assert!(norm(model.network.gat.transform.w) > 0.0);
        assert!(norm(model.network.window.layers[0].w) > 0.0);
    }

    #[test]
    fn width_must_split_across_heads() {
        let bad = ModelConfig {
            width: 18,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(CilpModel::new(bad, &catalog(), 0).is_err());
    }
}
