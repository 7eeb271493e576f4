//! Circuit description and modified nodal analysis assembly.
//!
//! Unknowns are the non-ground node voltages (in order of first appearance)
//! followed by one branch current per voltage source and inductor. The
//! assembled system is
//!
//! ```text
//! C x' = -G x + F(x) + B u(t)
//! ```
//!
//! where `C` and `G` here hold only the linear stamps; nonlinear devices are kept
//! in a list and evaluated per state by [`crate::devices`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::devices::{DiodeModel, MosfetModel};
use crate::error::{Error, Result};
use crate::math;
use crate::sparse::{CsrMatrix, Triplets};

/// Literal name of the reference node.
pub const GROUND: &str = "0";

/// Independent source waveform.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SourceWaveform {
    Dc(f64),
    /// `(time, value)` breakpoints, strictly increasing in time. Held constant
    /// before the first and after the last breakpoint.
    Pwl(Vec<(f64, f64)>),
    Pulse(Pulse),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pulse {
    pub v1: f64,
    pub v2: f64,
    pub delay: f64,
    pub rise: f64,
    pub fall: f64,
    pub width: f64,
    /// Zero means a single pulse.
    pub period: f64,
}

impl SourceWaveform {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceWaveform::Dc(v) if !v.is_finite() => Err(Error::NonFinite),
            SourceWaveform::Dc(_) => Ok(()),
            SourceWaveform::Pwl(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidCircuit("PWL needs at least one point".into()));
                }
                if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                    return Err(Error::NonFinite);
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidCircuit(
                        "PWL times must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            SourceWaveform::Pulse(p) => {
                let all = [p.v1, p.v2, p.delay, p.rise, p.fall, p.width, p.period];
                if all.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite);
                }
                if p.delay < 0.0 || p.rise < 0.0 || p.fall < 0.0 || p.width < 0.0 || p.period < 0.0
                {
                    return Err(Error::InvalidCircuit(
                        "PULSE timing parameters must be nonnegative".into(),
                    ));
                }
                if p.period > 0.0 && p.period < p.rise + p.width + p.fall {
                    return Err(Error::InvalidCircuit(
                        "PULSE period shorter than rise + width + fall".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SourceWaveform::Dc(v) => *v,
            SourceWaveform::Pwl(points) => {
                let first = points[0];
                if t <= first.0 {
                    return first.1;
                }
                match points.iter().position(|&(tp, _)| tp > t) {
                    None => points[points.len() - 1].1,
                    Some(k) => {
                        let (t0, v0) = points[k - 1];
                        let (t1, v1) = points[k];
                        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                    }
                }
            }
            SourceWaveform::Pulse(p) => {
                if t < p.delay {
                    return p.v1;
                }
                let mut tt = t - p.delay;
                if p.period > 0.0 {
                    tt -= p.period * math::floor(tt / p.period);
                }
                if tt < p.rise {
                    p.v1 + (p.v2 - p.v1) * tt / p.rise
                } else if tt < p.rise + p.width {
                    p.v2
                } else if tt < p.rise + p.width + p.fall {
                    p.v2 + (p.v1 - p.v2) * (tt - p.rise - p.width) / p.fall
                } else {
                    p.v1
                }
            }
        }
    }

    /// Slope changes strictly inside `(t0, t1)`, ascending.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            SourceWaveform::Dc(_) => {}
            SourceWaveform::Pwl(points) => {
                out.extend(points.iter().map(|p| p.0).filter(|&t| t > t0 && t < t1));
            }
            SourceWaveform::Pulse(p) => {
                let edges = [0.0, p.rise, p.rise + p.width, p.rise + p.width + p.fall];
                let mut start = p.delay;
                if p.period > 0.0 && t0 > p.delay {
                    // skip whole periods before the window
                    start += p.period * math::floor((t0 - p.delay) / p.period);
                }
                loop {
                    if start >= t1 {
                        break;
                    }
                    out.extend(
                        edges
                            .iter()
                            .map(|e| start + e)
                            .filter(|&t| t > t0 && t < t1),
                    );
                    if p.period <= 0.0 {
                        break;
                    }
                    start += p.period;
                }
                out.sort_by(f64::total_cmp);
                out.dedup();
            }
        }
        out
    }
}

/// A netlist element with node names still symbolic.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Element {
    Resistor {
        name: String,
        a: String,
        b: String,
        resistance: f64,
    },
    Capacitor {
        name: String,
        a: String,
        b: String,
        capacitance: f64,
    },
    Inductor {
        name: String,
        a: String,
        b: String,
        inductance: f64,
    },
    VoltageSource {
        name: String,
        pos: String,
        neg: String,
        wave: SourceWaveform,
    },
    /// Positive current flows from `pos` through the source to `neg`.
    CurrentSource {
        name: String,
        pos: String,
        neg: String,
        wave: SourceWaveform,
    },
    Diode {
        name: String,
        anode: String,
        cathode: String,
        model: DiodeModel,
    },
    Mosfet {
        name: String,
        drain: String,
        gate: String,
        source: String,
        bulk: String,
        model: MosfetModel,
    },
}

impl Element {
    pub fn name(&self) -> &str {
        match self {
            Element::Resistor { name, .. }
            | Element::Capacitor { name, .. }
            | Element::Inductor { name, .. }
            | Element::VoltageSource { name, .. }
            | Element::CurrentSource { name, .. }
            | Element::Diode { name, .. }
            | Element::Mosfet { name, .. } => name,
        }
    }

    pub fn nodes(&self) -> Vec<&str> {
        match self {
            Element::Resistor { a, b, .. }
            | Element::Capacitor { a, b, .. }
            | Element::Inductor { a, b, .. } => vec![a, b],
            Element::VoltageSource { pos, neg, .. } | Element::CurrentSource { pos, neg, .. } => {
                vec![pos, neg]
            }
            Element::Diode { anode, cathode, .. } => vec![anode, cathode],
            Element::Mosfet {
                drain,
                gate,
                source,
                bulk,
                ..
            } => vec![drain, gate, source, bulk],
        }
    }

    fn needs_branch(&self) -> bool {
        matches!(
            self,
            Element::VoltageSource { .. } | Element::Inductor { .. }
        )
    }
}

/// Simulator settings carried by the netlist.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimOptions {
    /// Local error budget for step acceptance (infinity norm, volts/amps).
    pub err_budget: f64,
    /// Krylov residual tolerance.
    pub krylov_eps: f64,
    /// Conductance from every node to ground.
    pub gmin: f64,
    /// Krylov dimension cap.
    pub m_max: usize,
    pub hmin: Option<f64>,
    pub hmax: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            err_budget: 1e-4,
            krylov_eps: 1e-7,
            gmin: 1e-12,
            m_max: 100,
            hmin: None,
            hmax: None,
        }
    }
}

/// Element list plus options; the input to [`MnaSystem::build`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Circuit {
    pub title: String,
    pub elements: Vec<Element>,
    pub options: SimOptions,
}

impl Circuit {
    pub fn new(elements: Vec<Element>) -> Self {
        Circuit {
            title: String::new(),
            elements,
            options: SimOptions::default(),
        }
    }

    pub fn with_options(mut self, options: SimOptions) -> Self {
        self.options = options;
        self
    }
}

/// Nonlinear device with resolved unknown indices (`None` is ground).
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceInstance {
    Diode {
        name: String,
        anode: Option<usize>,
        cathode: Option<usize>,
        model: DiodeModel,
    },
    Mosfet {
        name: String,
        drain: Option<usize>,
        gate: Option<usize>,
        source: Option<usize>,
        model: MosfetModel,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceEntry {
    pub name: String,
    pub wave: SourceWaveform,
}

/// Assembled modified-nodal-analysis system.
#[derive(Debug, Clone)]
pub struct MnaSystem {
    n: usize,
    n_nodes: usize,
    node_index: BTreeMap<String, usize>,
    unknown_names: Vec<String>,
    c_lin: CsrMatrix,
    g_lin: CsrMatrix,
    b: CsrMatrix,
    sources: Vec<SourceEntry>,
    devices: Vec<DeviceInstance>,
    options: SimOptions,
    floating: Vec<usize>,
}

impl MnaSystem {
    /// Assembles and rejects circuits whose conductance graph leaves nodes
    /// without a path to ground (only possible when gmin is zero).
    pub fn build(circuit: &Circuit) -> Result<Self> {
        let sys = Self::assemble(circuit)?;
        let floating = sys.floating_nodes();
        if !floating.is_empty() {
            return Err(Error::FloatingNodes(floating));
        }
        Ok(sys)
    }

    /// Assembles without the connectivity diagnostic.
    pub fn assemble(circuit: &Circuit) -> Result<Self> {
        validate(circuit)?;
        let mut node_index = BTreeMap::new();
        let mut unknown_names = Vec::new();
        for el in &circuit.elements {
            for node in el.nodes() {
                if node != GROUND && !node_index.contains_key(node) {
                    node_index.insert(node.to_string(), unknown_names.len());
                    unknown_names.push(node.to_string());
                }
            }
        }
        let n_nodes = unknown_names.len();
        let mut branch_of = BTreeMap::new();
        for el in circuit.elements.iter().filter(|e| e.needs_branch()) {
            branch_of.insert(el.name().to_string(), unknown_names.len());
            unknown_names.push(format!("i({})", el.name()));
        }
        let n = unknown_names.len();
        let n_inputs = circuit
            .elements
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    Element::VoltageSource { .. } | Element::CurrentSource { .. }
                )
            })
            .count();

        let idx = |name: &str| -> Option<usize> {
            if name == GROUND {
                None
            } else {
                node_index.get(name).copied()
            }
        };

        let mut c = Triplets::new(n, n);
        let mut g = Triplets::new(n, n);
        let mut b = Triplets::new(n, n_inputs);
        let mut sources = Vec::new();
        let mut devices = Vec::new();

        for el in &circuit.elements {
            match el {
                Element::Resistor {
                    a,
                    b: nb,
                    resistance,
                    ..
                } => g.stamp_pair(idx(a), idx(nb), 1.0 / resistance),
                Element::Capacitor {
                    a,
                    b: nb,
                    capacitance,
                    ..
                } => c.stamp_pair(idx(a), idx(nb), *capacitance),
                Element::Inductor {
                    name,
                    a,
                    b: nb,
                    inductance,
                } => {
                    let k = branch_of[name.as_str()];
                    incidence(&mut g, idx(a), idx(nb), k);
                    c.add(k, k, -inductance);
                }
                Element::VoltageSource {
                    name,
                    pos,
                    neg,
                    wave,
                } => {
                    let k = branch_of[name.as_str()];
                    incidence(&mut g, idx(pos), idx(neg), k);
                    b.add(k, sources.len(), 1.0);
                    sources.push(SourceEntry {
                        name: name.clone(),
                        wave: wave.clone(),
                    });
                }
                Element::CurrentSource {
                    name,
                    pos,
                    neg,
                    wave,
                } => {
                    let col = sources.len();
                    if let Some(p) = idx(pos) {
                        b.add(p, col, -1.0);
                    }
                    if let Some(q) = idx(neg) {
                        b.add(q, col, 1.0);
                    }
                    sources.push(SourceEntry {
                        name: name.clone(),
                        wave: wave.clone(),
                    });
                }
                Element::Diode {
                    name,
                    anode,
                    cathode,
                    model,
                } => devices.push(DeviceInstance::Diode {
                    name: name.clone(),
                    anode: idx(anode),
                    cathode: idx(cathode),
                    model: *model,
                }),
                Element::Mosfet {
                    name,
                    drain,
                    gate,
                    source,
                    model,
                    ..
                } => devices.push(DeviceInstance::Mosfet {
                    name: name.clone(),
                    drain: idx(drain),
                    gate: idx(gate),
                    source: idx(source),
                    model: *model,
                }),
            }
        }
        let floating = isolated_nodes(&circuit.elements, n_nodes, idx);
        let gmin = circuit.options.gmin;
        if gmin > 0.0 {
            for i in 0..n_nodes {
                g.add(i, i, gmin);
            }
        }

        Ok(MnaSystem {
            n,
            n_nodes,
            node_index,
            unknown_names,
            c_lin: c.build(),
            g_lin: g.build(),
            b: b.build(),
            sources,
            devices,
            options: circuit.options,
            floating,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_inputs(&self) -> usize {
        self.sources.len()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    /// Node names followed by `i(<element>)` for branch unknowns.
    pub fn unknown_names(&self) -> &[String] {
        &self.unknown_names
    }

    pub fn c_lin(&self) -> &CsrMatrix {
        &self.c_lin
    }

    pub fn g_lin(&self) -> &CsrMatrix {
        &self.g_lin
    }

    pub fn b(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn sources(&self) -> &[SourceEntry] {
        &self.sources
    }

    pub fn devices(&self) -> &[DeviceInstance] {
        &self.devices
    }

    pub fn is_linear(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn options(&self) -> &SimOptions {
        &self.options
    }

    /// `u(t)`, one entry per independent source in netlist order.
    pub fn eval_sources(&self, t: f64) -> Vec<f64> {
        self.sources.iter().map(|s| s.wave.eval(t)).collect()
    }

    /// `B u(t)`.
    pub fn excitation(&self, t: f64) -> Vec<f64> {
        self.b
            .spmv(&self.eval_sources(t))
            .expect("B has one column per source")
    }

    /// All source slope changes strictly inside `(t0, t1)`, ascending and
    /// without duplicates.
    pub fn source_breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .sources
            .iter()
            .flat_map(|s| s.wave.breakpoints(t0, t1))
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1e-300));
        all
    }

    /// First breakpoint strictly after `t`, if any before `t_end`.
    pub fn next_breakpoint(&self, t: f64, t_end: f64) -> Option<f64> {
        self.sources
            .iter()
            .filter_map(|s| s.wave.breakpoints(t, t_end).first().copied())
            .min_by(f64::total_cmp)
    }

    /// Nodes with no conductive path to ground. Always empty when gmin > 0.
    pub fn floating_nodes(&self) -> Vec<String> {
        if self.options.gmin > 0.0 {
            return Vec::new();
        }
        self.floating
            .iter()
            .map(|&i| self.unknown_names[i].clone())
            .collect()
    }
}

/// Node indices not joined to ground by resistors, inductors, voltage sources,
/// diodes or MOSFET channels.
fn isolated_nodes(
    elements: &[Element],
    n_nodes: usize,
    idx: impl Fn(&str) -> Option<usize>,
) -> Vec<usize> {
    // union-find with the ground slot at n_nodes
    let mut parent: Vec<usize> = (0..=n_nodes).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for el in elements {
        let (a, b) = match el {
            Element::Resistor { a, b, .. } | Element::Inductor { a, b, .. } => (a, b),
            Element::VoltageSource { pos, neg, .. } => (pos, neg),
            Element::Diode { anode, cathode, .. } => (anode, cathode),
            Element::Mosfet { drain, source, .. } => (drain, source),
            Element::Capacitor { .. } | Element::CurrentSource { .. } => continue,
        };
        let ra = find(&mut parent, idx(a).unwrap_or(n_nodes));
        let rb = find(&mut parent, idx(b).unwrap_or(n_nodes));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let ground = find(&mut parent, n_nodes);
    (0..n_nodes)
        .filter(|&i| find(&mut parent, i) != ground)
        .collect()
}

fn incidence(g: &mut Triplets, pos: Option<usize>, neg: Option<usize>, k: usize) {
    if let Some(p) = pos {
        g.add(p, k, 1.0);
        g.add(k, p, 1.0);
    }
    if let Some(q) = neg {
        g.add(q, k, -1.0);
        g.add(k, q, -1.0);
    }
}

fn validate(circuit: &Circuit) -> Result<()> {
    if circuit.elements.is_empty() {
        return Err(Error::InvalidCircuit("no elements".into()));
    }
    let mut names = BTreeMap::new();
    for el in &circuit.elements {
        if names.insert(el.name().to_string(), ()).is_some() {
            return Err(Error::InvalidCircuit(format!(
                "duplicate element name {}",
                el.name()
            )));
        }
    }
    if !circuit.elements.iter().any(|e| e.nodes().contains(&GROUND)) {
        return Err(Error::InvalidCircuit(
            "no element connects to ground node 0".into(),
        ));
    }
    for el in &circuit.elements {
        let positive = |v: f64, what: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidCircuit(format!(
                    "{}: {what} must be positive and finite",
                    el.name()
                )))
            }
        };
        match el {
            Element::Resistor { resistance, .. } => positive(*resistance, "resistance")?,
            Element::Capacitor { capacitance, .. } => positive(*capacitance, "capacitance")?,
            Element::Inductor { inductance, .. } => positive(*inductance, "inductance")?,
            Element::VoltageSource { wave, .. } | Element::CurrentSource { wave, .. } => {
                wave.validate()?
            }
            Element::Diode { model, .. } => model.validate()?,
            Element::Mosfet { model, .. } => model.validate()?,
        }
    }
    let o = &circuit.options;
    if !(o.err_budget > 0.0 && o.krylov_eps > 0.0 && o.gmin >= 0.0 && o.m_max >= 1) {
        return Err(Error::InvalidCircuit("invalid simulator options".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(name: &str, a: &str, b: &str, v: f64) -> Element {
        Element::Resistor {
            name: name.into(),
            a: a.into(),
            b: b.into(),
            resistance: v,
        }
    }

    fn cap(name: &str, a: &str, b: &str, v: f64) -> Element {
        Element::Capacitor {
            name: name.into(),
            a: a.into(),
            b: b.into(),
            capacitance: v,
        }
    }

    fn vsrc(name: &str, p: &str, n: &str, wave: SourceWaveform) -> Element {
        Element::VoltageSource {
            name: name.into(),
            pos: p.into(),
            neg: n.into(),
            wave,
        }
    }

    fn no_gmin() -> SimOptions {
        SimOptions {
            gmin: 0.0,
            ..SimOptions::default()
        }
    }

    #[test]
    fn single_resistor_stamp() {
        let sys =
            MnaSystem::build(&Circuit::new(vec![r("R1", "1", "0", 1.0)]).with_options(no_gmin()))
                .unwrap();
        assert_eq!(sys.n(), 1);
        assert_eq!(sys.g_lin().to_dense(), vec![vec![1.0]]);
        assert_eq!(sys.c_lin().nnz(), 0);
    }

    #[test]
    fn divider_with_source_branch() {
        let ckt = Circuit::new(vec![
            vsrc("V1", "in", "0", SourceWaveform::Dc(1.0)),
            r("R1", "in", "mid", 2.0),
            r("R2", "mid", "0", 2.0),
        ])
        .with_options(no_gmin());
        let sys = MnaSystem::build(&ckt).unwrap();
        assert_eq!(sys.n(), 3);
        // unknowns: v(in), v(mid), i(V1)
        let expected = vec![
            vec![0.5, -0.5, 1.0],
            vec![-0.5, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        assert_eq!(sys.g_lin().to_dense(), expected);
        assert_eq!(sys.b().to_dense(), vec![vec![0.0], vec![0.0], vec![1.0]]);
        assert_eq!(sys.unknown_names()[2], "i(V1)");
    }

    #[test]
    fn capacitor_only_has_singular_g_without_gmin() {
        let ckt = Circuit::new(vec![cap("C1", "1", "0", 1.0)]).with_options(no_gmin());
        let sys = MnaSystem::assemble(&ckt).unwrap();
        assert_eq!(sys.c_lin().to_dense(), vec![vec![1.0]]);
        assert_eq!(sys.g_lin().nnz(), 0);
        assert_eq!(
            MnaSystem::build(&ckt).unwrap_err(),
            Error::FloatingNodes(vec!["1".into()])
        );
        // default gmin makes it well posed
        let sys = MnaSystem::build(&Circuit::new(vec![cap("C1", "1", "0", 1.0)])).unwrap();
        assert_eq!(sys.g_lin().get(0, 0), 1e-12);
    }

    #[test]
    fn inductor_branch_stamp() {
        let ckt = Circuit::new(vec![
            Element::Inductor {
                name: "L1".into(),
                a: "1".into(),
                b: "0".into(),
                inductance: 2.0,
            },
            r("R1", "1", "0", 1.0),
        ])
        .with_options(no_gmin());
        let sys = MnaSystem::build(&ckt).unwrap();
        assert_eq!(sys.g_lin().to_dense(), vec![vec![1.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(
            sys.c_lin().to_dense(),
            vec![vec![0.0, 0.0], vec![0.0, -2.0]]
        );
    }

    #[test]
    fn current_source_direction() {
        let ckt = Circuit::new(vec![
            Element::CurrentSource {
                name: "I1".into(),
                pos: "0".into(),
                neg: "1".into(),
                wave: SourceWaveform::Dc(1e-3),
            },
            r("R1", "1", "0", 1e3),
        ]);
        let sys = MnaSystem::build(&ckt).unwrap();
        // current flows from ground through the source into node 1
        assert_eq!(sys.b().to_dense(), vec![vec![1.0]]);
        assert_eq!(sys.excitation(0.0), vec![1e-3]);
    }

    #[test]
    fn floating_island_is_named() {
        let ckt = Circuit::new(vec![
            r("R1", "a", "0", 1.0),
            cap("C1", "a", "b", 1.0),
            r("R2", "b", "c", 1.0),
        ])
        .with_options(no_gmin());
        match MnaSystem::build(&ckt) {
            Err(Error::FloatingNodes(nodes)) => assert_eq!(nodes, vec!["b", "c"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_and_missing_ground_rejected() {
        let dup = Circuit::new(vec![r("R1", "1", "0", 1.0), r("R1", "1", "0", 2.0)]);
        assert!(matches!(
            MnaSystem::build(&dup),
            Err(Error::InvalidCircuit(_))
        ));
        let noground = Circuit::new(vec![r("R1", "1", "2", 1.0)]);
        assert!(matches!(
            MnaSystem::build(&noground),
            Err(Error::InvalidCircuit(_))
        ));
    }

    #[test]
    fn source_evaluation() {
        assert_eq!(SourceWaveform::Dc(5.0).eval(123.0), 5.0);
        let pwl = SourceWaveform::Pwl(vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(pwl.eval(0.5), 0.5);
        assert_eq!(pwl.eval(3.0), 1.0);
        let pulse = SourceWaveform::Pulse(Pulse {
            v1: 0.0,
            v2: 1.0,
            delay: 1.0,
            rise: 1.0,
            fall: 1.0,
            width: 1.0,
            period: 0.0,
        });
        // independent piecewise oracle: delay [0,1) -> v1, rise [1,2), width [2,3), fall [3,4)
        let oracle = |t: f64| -> f64 {
            if t < 1.0 {
                0.0
            } else if t < 2.0 {
                t - 1.0
            } else if t < 3.0 {
                1.0
            } else if t < 4.0 {
                4.0 - t
            } else {
                0.0
            }
        };
        for k in 0..50 {
            let t = k as f64 * 0.1;
            assert!((pulse.eval(t) - oracle(t)).abs() < 1e-12, "t = {t}");
        }
        assert_eq!(pulse.eval(1.5), 0.5);
    }

    #[test]
    fn breakpoint_enumeration() {
        let pwl = SourceWaveform::Pwl(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]);
        assert_eq!(pwl.breakpoints(0.0, 2.0), vec![1.0]);
        assert!(SourceWaveform::Dc(1.0).breakpoints(0.0, 10.0).is_empty());
        let pulse = SourceWaveform::Pulse(Pulse {
            v1: 0.0,
            v2: 1.0,
            delay: 1.0,
            rise: 1.0,
            fall: 1.0,
            width: 0.0,
            period: 4.0,
        });
        // edges per period: delay + {0, rise, rise+width, rise+width+fall}
        // = {1, 2, 2, 3} + 4k -> dedup {1,2,3,5,6,7}
        let mut oracle = Vec::new();
        for k in 0..3 {
            for e in [0.0, 1.0, 1.0, 2.0] {
                let t: f64 = 1.0 + e + 4.0 * k as f64;
                if t > 0.0 && t < 8.0 && !oracle.contains(&t) {
                    oracle.push(t);
                }
            }
        }
        assert_eq!(pulse.breakpoints(0.0, 8.0), oracle);
        let wide = SourceWaveform::Pulse(Pulse {
            width: 1.0,
            fall: 1.0,
            rise: 1.0,
            ..match pulse {
                SourceWaveform::Pulse(p) => p,
                _ => unreachable!(),
            }
        });
        assert_eq!(
            wide.breakpoints(0.0, 8.0),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        );
        // windows that start mid-train
        assert_eq!(wide.breakpoints(5.5, 9.5), vec![6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn pwl_validation() {
        assert!(SourceWaveform::Pwl(vec![(0.0, 0.0), (0.0, 1.0)])
            .validate()
            .is_err());
        assert!(SourceWaveform::Pwl(vec![]).validate().is_err());
    }
}
