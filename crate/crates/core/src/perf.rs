//! Operation counting and a cycle-level schedule of one GRU-DPD sample on
//! the PE array.
//!
//! Counting convention: a multiply-accumulate is 2 ops, every other add,
//! subtract, multiply or activation is 1, and the feature preprocessor is 5
//! (two squares, one add, one square and the rounding of its output).
//!
//! Hardware model: the preprocessor and the input, hidden and FC arrays are
//! groups of PEs that each retire one op per cycle. A mat-vec row is split
//! into contiguous column lanes, one lane per PE, and a pipelined adder tree
//! joins the lanes, the other half of the gate sum and the biases in one
//! cycle. Activations run on dedicated one-cycle units. Element-wise gate
//! work runs on hidden-array PEs, with `a·b + c` fused into one cycle. A
//! final cycle registers the output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dpd::DpdModel;
use crate::error::{Error, Result};
use crate::fxp::FxpFormat;

/// The preprocessor's contribution to the op count.
pub const PREPROCESSOR_OPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpItem {
    pub layer: String,
    pub item: String,
    pub ops: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpBreakdown {
    pub items: Vec<OpItem>,
}

impl OpBreakdown {
    pub fn total(&self) -> usize {
        self.items.iter().map(|i| i.ops).sum()
    }

    pub fn layer_total(&self, layer: &str) -> usize {
        self.items.iter().filter(|i| i.layer == layer).map(|i| i.ops).sum()
    }

    /// Markdown table with a total row.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| layer | item | ops |\n|---|---|---:|\n");
        for i in &self.items {
            let _ = writeln!(s, "| {} | {} | {} |", i.layer, i.item, i.ops);
        }
        let _ = writeln!(s, "| **total** | | **{}** |", self.total());
        s
    }
}

/// Per-item op count for one sample.
pub fn op_breakdown(model: &DpdModel) -> OpBreakdown {
    let i = model.params.input_size();
    let h = model.params.hidden_size();
    let o = model.params.output_size();
    let item = |layer: &str, item: String, ops: usize| OpItem {
        layer: layer.into(),
        item,
        ops,
    };
    OpBreakdown {
        items: vec![
            item("preprocessor", "I², Q²".into(), 2),
            item("preprocessor", "P = I² + Q²".into(), 1),
            item("preprocessor", "P²".into(), 1),
            item("preprocessor", "feature output rounding".into(), 1),
            item("gru", format!("W_i x, 3×{h}×{i} MAC"), 2 * 3 * h * i),
            item("gru", format!("W_h h, 3×{h}×{h} MAC"), 2 * 3 * h * h),
            item("gru", format!("r, z bias adds b_i + b_h, 2×2×{h}"), 4 * h),
            item("gru", format!("candidate bias adds b_in, b_hn, 2×{h}"), 2 * h),
            item("gru", "r ⊙ (W_hn h + b_hn)".into(), h),
            item("gru", "candidate sum W_in x + b_in + r ⊙ (…)".into(), h),
            item("gru", "hardsigmoid r, z".into(), 2 * h),
            item("gru", "hardtanh n".into(), h),
            item("gru", "1 − z".into(), h),
            item("gru", "(1 − z) ⊙ n".into(), h),
            item("gru", "z ⊙ h".into(), h),
            item("gru", "blend sum".into(), h),
            item("fc", format!("W_fc h, {o}×{h} MAC"), 2 * o * h),
            item("fc", "bias adds".into(), o),
        ],
    }
}

/// Ops per I/Q sample under the module's counting convention.
pub fn count_ops(model: &DpdModel) -> usize {
    op_breakdown(model).total()
}

/// `ops_per_sample × sample_rate_msps` in GOPS.
pub fn throughput_report(ops_per_sample: f64, sample_rate_msps: f64) -> f64 {
    ops_per_sample * sample_rate_msps / 1000.0
}

/// Weight buffer size in bits.
pub fn weight_buffer_bits(model: &DpdModel, fmt: FxpFormat) -> usize {
    model.param_count() * fmt.total_bits() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeArrayConfig {
    pub n_preproc_pe: usize,
    pub n_input_pe: usize,
    pub n_hidden_pe: usize,
    pub n_fc_pe: usize,
    pub fclk_hz: f64,
}

impl Default for PeArrayConfig {
    fn default() -> Self {
        Self {
            n_preproc_pe: 2,
            n_input_pe: 30,
            n_hidden_pe: 120,
            n_fc_pe: 6,
            fclk_hz: 2.0e9,
        }
    }
}

impl PeArrayConfig {
    /// Same PE count in every group.
    pub fn uniform(n: usize) -> Self {
        Self {
            n_preproc_pe: n,
            n_input_pe: n,
            n_hidden_pe: n,
            n_fc_pe: n,
            ..Self::default()
        }
    }

    pub fn array_pes(&self) -> usize {
        self.n_input_pe + self.n_hidden_pe + self.n_fc_pe
    }

    pub fn total_pes(&self) -> usize {
        self.array_pes() + self.n_preproc_pe
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fclk_hz.is_finite() && self.fclk_hz > 0.0) {
            return Err(Error::InvalidConfig("perf.fclk_hz must be positive".into()));
        }
        Ok(())
    }

    fn size(&self, g: PeGroup) -> Option<usize> {
        match g {
            PeGroup::Preprocessor => Some(self.n_preproc_pe),
            PeGroup::Input => Some(self.n_input_pe),
            PeGroup::Hidden => Some(self.n_hidden_pe),
            PeGroup::Fc => Some(self.n_fc_pe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub ops_per_sample: usize,
    pub latency_cycles: u32,
    pub latency_ns: f64,
    pub initiation_interval_cycles: u32,
    pub max_sample_rate_msps: f64,
    pub throughput_gops: f64,
    pub pe_utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeGroup {
    Preprocessor,
    Input,
    Hidden,
    Fc,
    /// Dedicated activation units.
    Activation,
    /// Dedicated adder trees.
    AdderTree,
    /// Output register stage.
    Output,
}

impl PeGroup {
    pub fn name(self) -> &'static str {
        match self {
            PeGroup::Preprocessor => "preprocessor",
            PeGroup::Input => "input",
            PeGroup::Hidden => "hidden",
            PeGroup::Fc => "fc",
            PeGroup::Activation => "activation",
            PeGroup::AdderTree => "adder_tree",
            PeGroup::Output => "output",
        }
    }

    /// Whether the group is made of shared PEs (as opposed to dedicated units).
    pub fn is_pe_array(self) -> bool {
        matches!(self, PeGroup::Preprocessor | PeGroup::Input | PeGroup::Hidden | PeGroup::Fc)
    }
}

/// Lane counts per mat-vec row and the cycle at which the previous sample's
/// hidden state is released to this sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub input_lanes: usize,
    pub hidden_lanes: usize,
    pub fc_lanes: usize,
    pub release_offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    /// Raw I/Q, available at cycle 0.
    Sample,
    /// Previous hidden state, available at the release offset.
    HPrev,
    Task(usize),
}

/// `start + offset >= ready(source)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dep {
    source: Source,
    offset: u32,
}

#[derive(Debug, Clone)]
struct Task {
    label: String,
    group: PeGroup,
    dur: u32,
    deps: Vec<Dep>,
    ops: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledOp {
    pub label: String,
    pub group: PeGroup,
    /// PE index within the group, or unit index for dedicated units.
    pub unit: usize,
    pub start: u32,
    pub dur: u32,
    /// Ops this entry accounts for under the counting convention.
    pub ops: usize,
}

impl ScheduledOp {
    pub fn end(&self) -> u32 {
        self.start + self.dur
    }
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub report: PerfReport,
    pub mapping: Mapping,
    pub ops: Vec<ScheduledOp>,
    config: PeArrayConfig,
    deps: Vec<Vec<Dep>>,
    h_tasks: Vec<usize>,
}

struct Graph {
    tasks: Vec<Task>,
    /// Tasks producing the new hidden state.
    h_tasks: Vec<usize>,
}

impl Graph {
    fn push(&mut self, label: String, group: PeGroup, dur: u32, deps: Vec<Dep>, ops: usize) -> usize {
        self.tasks.push(Task {
            label,
            group,
            dur,
            deps,
            ops,
        });
        self.tasks.len() - 1
    }

    /// One row of a mat-vec split into `lanes` contiguous column chunks.
    fn row_lanes(
        &mut self,
        label: &str,
        group: PeGroup,
        cols: usize,
        lanes: usize,
        col_src: &dyn Fn(usize) -> Source,
    ) -> Vec<usize> {
        let base = cols / lanes;
        let extra = cols % lanes;
        let mut c0 = 0;
        (0..lanes)
            .map(|l| {
                let len = base + usize::from(l < extra);
                let deps = (0..len)
                    .map(|k| Dep {
                        source: col_src(c0 + k),
                        offset: k as u32,
                    })
                    .collect();
                let id = self.push(
                    format!("{label} c{}-{}", c0, c0 + len - 1),
                    group,
                    len as u32,
                    deps,
                    2 * len,
                );
                c0 += len;
                id
            })
            .collect()
    }
}

fn on(ids: &[usize]) -> Vec<Dep> {
    ids.iter()
        .map(|&t| Dep {
            source: Source::Task(t),
            offset: 0,
        })
        .collect()
}

fn build_graph(inputs: usize, hidden: usize, outputs: usize, m: &Mapping) -> Graph {
    let mut g = Graph {
        tasks: Vec::new(),
        h_tasks: Vec::new(),
    };
    let raw = vec![Dep {
        source: Source::Sample,
        offset: 0,
    }];
    let ii = g.push("I²".into(), PeGroup::Preprocessor, 1, raw.clone(), 1);
    let qq = g.push("Q²".into(), PeGroup::Preprocessor, 1, raw, 1);
    let p = g.push("P = I² + Q²".into(), PeGroup::Preprocessor, 1, on(&[ii, qq]), 1);
    // the square of P and the rounding of the feature vector share a cycle
    let p2 = g.push("P², round".into(), PeGroup::Preprocessor, 1, on(&[p]), 2);
    let feature = move |c: usize| match c {
        0 | 1 => Source::Sample,
        2 => Source::Task(p),
        _ => Source::Task(p2),
    };
    let _ = inputs;

    const GATES: [&str; 3] = ["r", "z", "n"];
    let mut in_rows = vec![Vec::new(); 3];
    let mut hid_rows = vec![Vec::new(); 3];
    for (k, name) in GATES.iter().enumerate() {
        for j in 0..hidden {
            let ids = g.row_lanes(&format!("W_i{name}[{j}]·x"), PeGroup::Input, INPUTS, m.input_lanes, &feature);
            in_rows[k].push(ids);
        }
    }
    for (k, name) in GATES.iter().enumerate() {
        for j in 0..hidden {
            let ids = g.row_lanes(&format!("W_h{name}[{j}]·h"), PeGroup::Hidden, hidden, m.hidden_lanes, &|_| {
                Source::HPrev
            });
            hid_rows[k].push(ids);
        }
    }
    let mut sig = vec![Vec::new(); 2];
    for k in 0..2 {
        for j in 0..hidden {
            let mut parts = in_rows[k][j].clone();
            parts.extend(&hid_rows[k][j]);
            let t = g.push(format!("sum {}[{j}] + b", GATES[k]), PeGroup::AdderTree, 1, on(&parts), 2);
            sig[k].push(g.push(format!("hardsigmoid {}[{j}]", GATES[k]), PeGroup::Activation, 1, on(&[t]), 1));
        }
    }
    for j in 0..hidden {
        let hn = g.push(format!("sum hn[{j}] + b_hn"), PeGroup::AdderTree, 1, on(&hid_rows[2][j]), 1);
        let xn = g.push(format!("sum xn[{j}] + b_in"), PeGroup::AdderTree, 1, on(&in_rows[2][j]), 1);
        let cand = g.push(format!("r⊙hn + xn [{j}]"), PeGroup::Hidden, 1, on(&[sig[0][j], hn, xn]), 2);
        let tanh = g.push(format!("hardtanh n[{j}]"), PeGroup::Activation, 1, on(&[cand]), 1);
        let omz = g.push(format!("1 − z[{j}]"), PeGroup::Hidden, 1, on(&[sig[1][j]]), 1);
        let mut zh_deps = on(&[sig[1][j]]);
        zh_deps.push(Dep {
            source: Source::HPrev,
            offset: 0,
        });
        let zh = g.push(format!("z⊙h[{j}]"), PeGroup::Hidden, 1, zh_deps, 1);
        let blend = g.push(format!("(1−z)⊙n + z⊙h [{j}]"), PeGroup::Hidden, 1, on(&[tanh, omz, zh]), 2);
        g.h_tasks.push(blend);
    }
    let h_tasks = g.h_tasks.clone();
    let mut trees = Vec::new();
    for o in 0..outputs {
        let lanes = g.row_lanes(&format!("W_fc[{o}]·h"), PeGroup::Fc, hidden, m.fc_lanes, &|c| {
            Source::Task(h_tasks[c])
        });
        trees.push(g.push(format!("sum y[{o}] + b"), PeGroup::AdderTree, 1, on(&lanes), 1));
    }
    g.push("output register".into(), PeGroup::Output, 1, on(&trees), 0);
    g
}

const INPUTS: usize = 4;

struct Placed {
    ops: Vec<ScheduledOp>,
    makespan: u32,
}

fn ready(dep: &Dep, end: &[Option<u32>], release: u32) -> Option<u32> {
    let t = match dep.source {
        Source::Sample => 0,
        Source::HPrev => release,
        Source::Task(i) => end[i]?,
    };
    Some(t.saturating_sub(dep.offset))
}

/// Time-driven list scheduling: repeatedly place the task that can start
/// earliest, breaking ties by longest remaining path, then by creation
/// order. PE-array tasks take the lowest-numbered free PE of their group.
fn place(g: &Graph, cfg: &PeArrayConfig, release: u32) -> Placed {
    let n = g.tasks.len();
    let mut succ = vec![Vec::new(); n];
    for (i, t) in g.tasks.iter().enumerate() {
        for d in &t.deps {
            if let Source::Task(p) = d.source {
                succ[p].push(i);
            }
        }
    }
    // tasks are created in topological order
    let mut prio = vec![0u32; n];
    for i in (0..n).rev() {
        prio[i] = g.tasks[i].dur + succ[i].iter().map(|&s| prio[s]).max().unwrap_or(0);
    }
    let mut free: BTreeMap<PeGroup, Vec<u32>> = BTreeMap::new();
    for grp in [PeGroup::Preprocessor, PeGroup::Input, PeGroup::Hidden, PeGroup::Fc] {
        free.insert(grp, vec![0; cfg.size(grp).unwrap_or(0)]);
    }
    let mut dedicated: BTreeMap<PeGroup, usize> = BTreeMap::new();
    let mut end: Vec<Option<u32>> = vec![None; n];
    let mut out: Vec<Option<ScheduledOp>> = vec![None; n];
    for _ in 0..n {
        let mut best: Option<(u32, std::cmp::Reverse<u32>, usize)> = None;
        for (i, t) in g.tasks.iter().enumerate() {
            if end[i].is_some() {
                continue;
            }
            let Some(est) = t.deps.iter().map(|d| ready(d, &end, release)).try_fold(0u32, |a, r| r.map(|r| a.max(r)))
            else {
                continue;
            };
            let start = match free.get(&t.group) {
                Some(pes) => est.max(*pes.iter().min().expect("group checked non-empty")),
                None => est,
            };
            let key = (start, std::cmp::Reverse(prio[i]), i);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let (start, _, i) = best.expect("task graph is acyclic");
        let t = &g.tasks[i];
        let unit = match free.get_mut(&t.group) {
            Some(pes) => {
                let u = pes.iter().position(|&f| f <= start).expect("a PE is free at start");
                pes[u] = start + t.dur;
                u
            }
            None => {
                let c = dedicated.entry(t.group).or_insert(0);
                *c += 1;
                *c - 1
            }
        };
        end[i] = Some(start + t.dur);
        out[i] = Some(ScheduledOp {
            label: t.label.clone(),
            group: t.group,
            unit,
            start,
            dur: t.dur,
            ops: t.ops,
        });
    }
    let ops: Vec<ScheduledOp> = out.into_iter().map(|o| o.expect("all tasks placed")).collect();
    let makespan = ops.iter().map(|o| o.end()).max().unwrap_or(0);
    Placed { ops, makespan }
}

/// Per-unit busy cycles, keyed by (group, unit).
fn busy_map(ops: &[ScheduledOp]) -> BTreeMap<(PeGroup, usize), Vec<u32>> {
    let mut m: BTreeMap<(PeGroup, usize), Vec<u32>> = BTreeMap::new();
    for o in ops {
        m.entry((o.group, o.unit)).or_default().extend(o.start..o.end());
    }
    m
}

/// No unit is used twice in the same slot when a new sample enters every
/// `ii` cycles.
fn modulo_ok(busy: &BTreeMap<(PeGroup, usize), Vec<u32>>, ii: u32) -> bool {
    busy.values().all(|cycles| {
        let mut seen = vec![false; ii as usize];
        cycles.iter().all(|&c| !std::mem::replace(&mut seen[(c % ii) as usize], true))
    })
}

fn initiation_interval(ops: &[ScheduledOp], h_tasks: &[usize], release: u32) -> u32 {
    let h_ready = h_tasks.iter().map(|&i| ops[i].end()).max().unwrap_or(0);
    let busy = busy_map(ops);
    let max_busy = busy.values().map(|v| v.len() as u32).max().unwrap_or(0);
    let mut ii = h_ready.saturating_sub(release).max(max_busy).max(1);
    while !modulo_ok(&busy, ii) {
        ii += 1;
    }
    ii
}

fn check_groups(cfg: &PeArrayConfig, hidden: usize, outputs: usize) -> Result<()> {
    let work = [
        ("preprocessor", cfg.n_preproc_pe, PREPROCESSOR_OPS),
        ("input", cfg.n_input_pe, 2 * 3 * hidden * INPUTS),
        ("hidden", cfg.n_hidden_pe, 2 * 3 * hidden * hidden + 6 * hidden),
        ("fc", cfg.n_fc_pe, 2 * outputs * hidden),
    ];
    for (group, n, work) in work {
        if n == 0 && work > 0 {
            return Err(Error::EmptyPeGroup { group, work });
        }
    }
    Ok(())
}

/// Schedule one sample, searching lane counts and the hidden-state release
/// offset for minimum latency, then minimum initiation interval.
pub fn schedule_detailed(model: &DpdModel, cfg: &PeArrayConfig) -> Result<Schedule> {
    cfg.validate()?;
    let input = model.params.input_size();
    let hidden = model.params.hidden_size();
    let outputs = model.params.output_size();
    if input != INPUTS {
        return Err(Error::Dimension {
            what: "preprocessor features",
            expected: INPUTS,
            got: input,
        });
    }
    check_groups(cfg, hidden, outputs)?;
    let max_lanes = |pes: usize, rows: usize, cols: usize| (pes / rows).clamp(1, cols);
    let li = max_lanes(cfg.n_input_pe, 3 * hidden, INPUTS);
    let lh = max_lanes(cfg.n_hidden_pe, 3 * hidden, hidden);
    let lf = max_lanes(cfg.n_fc_pe, outputs, hidden);
    let mut best: Option<(u32, u32, Mapping, Placed, Vec<Task>, Vec<usize>)> = None;
    for input_lanes in 1..=li {
        for hidden_lanes in 1..=lh {
            for fc_lanes in 1..=lf {
                let mut release = 0;
                loop {
                    let m = Mapping {
                        input_lanes,
                        hidden_lanes,
                        fc_lanes,
                        release_offset: release,
                    };
                    let g = build_graph(input, hidden, outputs, &m);
                    let placed = place(&g, cfg, release);
                    let ii = initiation_interval(&placed.ops, &g.h_tasks, release);
                    let busy = busy_map(&placed.ops).values().map(|v| v.len() as u32).max().unwrap_or(0);
                    let h_ready = g.h_tasks.iter().map(|&i| placed.ops[i].end()).max().unwrap_or(0);
                    let better = best
                        .as_ref()
                        .is_none_or(|b| (placed.makespan, ii) < (b.0, b.1));
                    let makespan = placed.makespan;
                    if better {
                        best = Some((makespan, ii, m, placed, g.tasks, g.h_tasks));
                    }
                    // a later release only helps while the recurrence bounds
                    // II, and never shortens the latency
                    let worse = best.as_ref().is_some_and(|b| makespan > b.0);
                    if h_ready.saturating_sub(release) <= busy || worse {
                        break;
                    }
                    release += 1;
                }
            }
        }
    }
    let (latency, ii, mapping, placed, tasks, h_tasks) = best.expect("at least one mapping");
    let ops_per_sample = count_ops(model);
    let msps = cfg.fclk_hz / ii as f64 / 1e6;
    let busy: usize = placed
        .ops
        .iter()
        .filter(|o| o.group.is_pe_array())
        .map(|o| o.dur as usize)
        .sum();
    let report = PerfReport {
        ops_per_sample,
        latency_cycles: latency,
        latency_ns: latency as f64 * 1e9 / cfg.fclk_hz,
        initiation_interval_cycles: ii,
        max_sample_rate_msps: msps,
        throughput_gops: throughput_report(ops_per_sample as f64, msps),
        pe_utilization: busy as f64 / (cfg.total_pes() as f64 * ii as f64),
    };
    Ok(Schedule {
        report,
        mapping,
        ops: placed.ops,
        config: *cfg,
        deps: tasks.into_iter().map(|t| t.deps).collect(),
        h_tasks,
    })
}

/// Latency, initiation interval and throughput of `model` on `cfg`.
pub fn schedule(model: &DpdModel, cfg: &PeArrayConfig) -> Result<PerfReport> {
    schedule_detailed(model, cfg).map(|s| s.report)
}

impl Schedule {
    pub fn config(&self) -> &PeArrayConfig {
        &self.config
    }

    /// Structural legality: every op starts after its inputs are ready, no
    /// PE runs two ops at once, PE indices fit their groups, the initiation
    /// interval admits overlapping samples, and the op tags add up to the
    /// op count.
    pub fn check_legal(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("illegal schedule: {msg}")));
        let release = self.mapping.release_offset;
        let end: Vec<Option<u32>> = self.ops.iter().map(|o| Some(o.end())).collect();
        for (o, deps) in self.ops.iter().zip(&self.deps) {
            for d in deps {
                let r = ready(d, &end, release).expect("all ops placed");
                if o.start < r {
                    return bad(format!("{} starts at {} before input ready at {r}", o.label, o.start));
                }
            }
            if let Some(n) = self.config.size(o.group) {
                if o.unit >= n {
                    return bad(format!("{} on PE {} of {n}", o.label, o.unit));
                }
            } else if o.dur != 1 {
                return bad(format!("{} on a dedicated unit for {} cycles", o.label, o.dur));
            }
        }
        for ((g, u), mut cycles) in busy_map(&self.ops) {
            cycles.sort_unstable();
            if cycles.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("{} unit {u} double-booked", g.name()));
            }
        }
        let ii = self.report.initiation_interval_cycles;
        if !modulo_ok(&busy_map(&self.ops), ii) {
            return bad(format!("resource conflict between samples at II {ii}"));
        }
        let h_ready = self.h_tasks.iter().map(|&i| self.ops[i].end()).max().unwrap_or(0);
        if h_ready > release + ii {
            return bad(format!("hidden state ready at {h_ready}, needed at {}", release + ii));
        }
        let tags: usize = self.ops.iter().map(|o| o.ops).sum();
        if tags != self.report.ops_per_sample {
            return bad(format!("op tags sum to {tags}, expected {}", self.report.ops_per_sample));
        }
        Ok(())
    }

    /// PE-cycles spent on the PE arrays.
    pub fn pe_cycles(&self) -> usize {
        self.ops
            .iter()
            .filter(|o| o.group.is_pe_array())
            .map(|o| o.dur as usize)
            .sum()
    }

    /// CSV with one row per busy unit-cycle: `cycle,pe_group,op`.
    pub fn trace_csv(&self) -> String {
        let mut rows: Vec<(u32, PeGroup, usize, &str)> = Vec::new();
        for o in &self.ops {
            for c in o.start..o.end() {
                rows.push((c, o.group, o.unit, &o.label));
            }
        }
        rows.sort();
        let mut s = String::from("cycle,pe_group,op\n");
        for (c, g, u, label) in rows {
            let _ = writeln!(s, "{c},{},\"#{u} {}\"", g.name(), label.replace('"', "'"));
        }
        s
    }
}
