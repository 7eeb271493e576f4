//! Synthetic benchmark decks.
//!
//! - `RC_LADDER`: a source driving `stages` series-R / shunt-C sections.
//! - `INVERTER_CHAIN`: `stages` level-1 CMOS inverters with load capacitors,
//!   driven by a single input pulse.
//! - `COUPLED_MESH`: `stages` wire nodes arranged as parallel RC lines of
//!   [`WIRE_LEN`] nodes, each driven from a common ramp, plus
//!   `round(coupling_density * stages^2)` coupling capacitors between randomly
//!   chosen node pairs that share no resistor. The coupling widens the pattern of
//!   `C` far beyond the band of `G`.
//!
//! Element values are drawn log-uniformly from the configured ranges with a
//! ChaCha8 stream seeded from `seed`, so a fixed seed always yields the same
//! bytes.

use std::fmt;
use std::str::FromStr;

use exprb_core::circuit::Pulse;
use exprb_core::devices::{MosfetModel, Polarity};
use exprb_core::{Element, SimOptions, SourceWaveform};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netlist::{NetlistDoc, Tran};

/// Nodes per line in a coupled mesh.
pub const WIRE_LEN: usize = 10;

pub const SUPPLY: f64 = 1.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    RcLadder,
    InverterChain,
    CoupledMesh,
}

impl FromStr for GenKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rc_ladder" => Ok(GenKind::RcLadder),
            "inverter_chain" => Ok(GenKind::InverterChain),
            "coupled_mesh" => Ok(GenKind::CoupledMesh),
            _ => Err(format!(
                "unknown generator `{s}` (expected RC_LADDER, INVERTER_CHAIN or COUPLED_MESH)"
            )),
        }
    }
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenKind::RcLadder => "RC_LADDER",
            GenKind::InverterChain => "INVERTER_CHAIN",
            GenKind::CoupledMesh => "COUPLED_MESH",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub kind: GenKind,
    pub stages: usize,
    /// Coupling capacitor count relative to `stages^2`, in `[0, 1]`.
    pub coupling_density: f64,
    pub r_range: (f64, f64),
    pub c_range: (f64, f64),
    pub cc_range: (f64, f64),
    pub seed: u64,
}

impl GeneratorParams {
    /// Value ranges typical for each kind.
    pub fn new(kind: GenKind, stages: usize) -> Self {
        let (r_range, c_range, cc_range) = match kind {
            GenKind::RcLadder => ((100.0, 1e3), (1e-13, 1e-12), (1e-15, 1e-14)),
            GenKind::InverterChain => ((1e3, 1e3), (4e-15, 6e-15), (1e-16, 1e-15)),
            GenKind::CoupledMesh => ((10.0, 100.0), (1e-15, 1e-14), (1e-16, 1e-15)),
        };
        GeneratorParams {
            kind,
            stages,
            coupling_density: 0.0,
            r_range,
            c_range,
            cc_range,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stages == 0 {
            return Err("stages must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.coupling_density) {
            return Err("coupling density must lie in [0, 1]".into());
        }
        for (what, (lo, hi)) in [
            ("R", self.r_range),
            ("C", self.c_range),
            ("coupling C", self.cc_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(format!("{what} range must satisfy 0 < lo <= hi"));
            }
        }
        Ok(())
    }
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn log_uniform(&mut self, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            return lo;
        }
        let u: f64 = self.0.random();
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    }
}

fn r(name: String, a: &str, b: &str, v: f64) -> Element {
    Element::Resistor {
        name,
        a: a.into(),
        b: b.into(),
        resistance: v,
    }
}

fn c(name: String, a: &str, b: &str, v: f64) -> Element {
    Element::Capacitor {
        name,
        a: a.into(),
        b: b.into(),
        capacitance: v,
    }
}

fn v(name: &str, pos: &str, wave: SourceWaveform) -> Element {
    Element::VoltageSource {
        name: name.into(),
        pos: pos.into(),
        neg: "0".into(),
        wave,
    }
}

fn geo_mean((lo, hi): (f64, f64)) -> f64 {
    (lo * hi).sqrt()
}

/// Builds the deck described by `p`.
pub fn generate(p: &GeneratorParams) -> Result<NetlistDoc, String> {
    p.validate()?;
    let mut rng = Sampler(ChaCha8Rng::seed_from_u64(p.seed));
    let title = format!(
        "{} stages={} density={} seed={}",
        p.kind, p.stages, p.coupling_density, p.seed
    );
    let (elements, tran) = match p.kind {
        GenKind::RcLadder => rc_ladder(p, &mut rng),
        GenKind::InverterChain => inverter_chain(p, &mut rng),
        GenKind::CoupledMesh => coupled_mesh(p, &mut rng),
    };
    Ok(NetlistDoc {
        title,
        elements,
        tran: Some(tran),
        options: SimOptions::default(),
    })
}

fn rc_ladder(p: &GeneratorParams, rng: &mut Sampler) -> (Vec<Element>, Tran) {
    let n = p.stages;
    let tau = (n * n) as f64 * geo_mean(p.r_range) * geo_mean(p.c_range) / 2.0;
    let mut els = vec![v(
        "V1",
        "in",
        SourceWaveform::Pwl(vec![(0.0, 0.0), (tau / 10.0, 1.0)]),
    )];
    let mut prev = "in".to_string();
    for k in 1..=n {
        let node = format!("n{k}");
        els.push(r(format!("R{k}"), &prev, &node, rng.log_uniform(p.r_range)));
        els.push(c(format!("C{k}"), &node, "0", rng.log_uniform(p.c_range)));
        prev = node;
    }
    (
        els,
        Tran {
            step: tau / 100.0,
            stop: 5.0 * tau,
        },
    )
}

/// Level-1 devices of the inverter chain.
pub fn inverter_models() -> (MosfetModel, MosfetModel) {
    let nmos = MosfetModel {
        polarity: Polarity::N,
        vth: 0.5,
        kp: 1e-4,
        lambda: 0.05,
        w: 2e-6,
        l: 1e-6,
        cgs0: 1e-15,
        cgd0: 0.5e-15,
    };
    let pmos = MosfetModel {
        polarity: Polarity::P,
        kp: 4e-5,
        w: 4e-6,
        ..nmos
    };
    (nmos, pmos)
}

fn inverter_chain(p: &GeneratorParams, rng: &mut Sampler) -> (Vec<Element>, Tran) {
    let (nmos, pmos) = inverter_models();
    let mut els = vec![
        v("VDD", "vdd", SourceWaveform::Dc(SUPPLY)),
        v(
            "VIN",
            "in",
            SourceWaveform::Pulse(Pulse {
                v1: 0.0,
                v2: SUPPLY,
                delay: 0.2e-9,
                rise: 0.1e-9,
                fall: 0.1e-9,
                width: 1e-9,
                period: 0.0,
            }),
        ),
    ];
    let mut prev = "in".to_string();
    let mut outs = Vec::new();
    for k in 1..=p.stages {
        let out = format!("n{k}");
        els.push(Element::Mosfet {
            name: format!("MN{k}"),
            drain: out.clone(),
            gate: prev.clone(),
            source: "0".into(),
            bulk: "0".into(),
            model: nmos,
        });
        els.push(Element::Mosfet {
            name: format!("MP{k}"),
            drain: out.clone(),
            gate: prev.clone(),
            source: "vdd".into(),
            bulk: "vdd".into(),
            model: pmos,
        });
        els.push(c(format!("CL{k}"), &out, "0", rng.log_uniform(p.c_range)));
        outs.push(out.clone());
        prev = out;
    }
    // stage outputs that do not drive each other
    let pairs: Vec<(usize, usize)> = (0..outs.len())
        .flat_map(|i| (i + 2..outs.len()).map(move |j| (i, j)))
        .collect();
    for (k, (i, j)) in couple(p, &pairs, rng).into_iter().enumerate() {
        els.push(c(
            format!("CC{}", k + 1),
            &outs[i],
            &outs[j],
            rng.log_uniform(p.cc_range),
        ));
    }
    (
        els,
        Tran {
            step: 5e-12,
            stop: 2e-9,
        },
    )
}

/// Picks `round(density * stages^2)` distinct pairs, at most all of them.
fn couple(p: &GeneratorParams, pairs: &[(usize, usize)], rng: &mut Sampler) -> Vec<(usize, usize)> {
    let want = (p.coupling_density * (p.stages * p.stages) as f64).round() as usize;
    let count = want.min(pairs.len());
    if count == 0 {
        return Vec::new();
    }
    let mut picked: Vec<usize> = index::sample(&mut rng.0, pairs.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| pairs[k]).collect()
}

fn coupled_mesh(p: &GeneratorParams, rng: &mut Sampler) -> (Vec<Element>, Tran) {
    let n = p.stages;
    let names: Vec<String> = (0..n)
        .map(|i| format!("w{}_{}", i / WIRE_LEN, i % WIRE_LEN))
        .collect();
    let len = WIRE_LEN.min(n);
    let r_bar = geo_mean(p.r_range);
    let c_bar = geo_mean(p.c_range);
    let want = (p.coupling_density * (n * n) as f64).round();
    let c_node = c_bar + 2.0 * want * geo_mean(p.cc_range) / n as f64;
    let tau = ((len + 1) * (len + 1)) as f64 * r_bar * c_node / 2.0;

    let mut els = vec![v(
        "V1",
        "in",
        SourceWaveform::Pwl(vec![(0.0, 0.0), (tau, 1.0)]),
    )];
    let mut rk = 0;
    let mut next_r = |els: &mut Vec<Element>, a: &str, b: &str, rng: &mut Sampler| {
        rk += 1;
        els.push(r(format!("R{rk}"), a, b, rng.log_uniform(p.r_range)));
    };
    for i in 0..n {
        if i % WIRE_LEN == 0 {
            next_r(&mut els, "in", &names[i], rng);
        } else {
            next_r(&mut els, &names[i - 1], &names[i], rng);
        }
    }
    for (i, node) in names.iter().enumerate() {
        els.push(c(
            format!("C{}", i + 1),
            node,
            "0",
            rng.log_uniform(p.c_range),
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !(j == i + 1 && j % WIRE_LEN != 0))
        .collect();
    for (k, (i, j)) in couple(p, &pairs, rng).into_iter().enumerate() {
        els.push(c(
            format!("CC{}", k + 1),
            &names[i],
            &names[j],
            rng.log_uniform(p.cc_range),
        ));
    }
    (
        els,
        Tran {
            step: tau / 20.0,
            stop: 10.0 * tau,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{build_mna, parse_netlist};

    fn count(doc: &NetlistDoc, prefix: char) -> usize {
        doc.elements
            .iter()
            .filter(|e| e.name().starts_with(prefix))
            .count()
    }

    #[test]
    fn ladder_shape() {
        let doc = generate(&GeneratorParams::new(GenKind::RcLadder, 3)).unwrap();
        assert_eq!(count(&doc, 'R'), 3);
        assert_eq!(count(&doc, 'C'), 3);
        assert_eq!(count(&doc, 'V'), 1);
        let sys = build_mna(&doc).unwrap();
        assert_eq!(sys.n_nodes(), 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        for kind in [
            GenKind::RcLadder,
            GenKind::InverterChain,
            GenKind::CoupledMesh,
        ] {
            let mut p = GeneratorParams::new(kind, 12);
            p.coupling_density = 0.1;
            p.seed = 42;
            let a = generate(&p).unwrap().to_string();
            let b = generate(&p).unwrap().to_string();
            assert_eq!(a, b);
            p.seed = 43;
            let c = generate(&p).unwrap().to_string();
            assert_ne!(a, c, "{kind}");
        }
    }

    #[test]
    fn generated_decks_reparse() {
        for kind in [
            GenKind::RcLadder,
            GenKind::InverterChain,
            GenKind::CoupledMesh,
        ] {
            let mut p = GeneratorParams::new(kind, 7);
            p.coupling_density = 0.2;
            let doc = generate(&p).unwrap();
            assert_eq!(parse_netlist(&doc.to_string()).unwrap(), doc);
        }
    }

    #[test]
    fn mesh_coupling_dominates() {
        let mut p = GeneratorParams::new(GenKind::CoupledMesh, 20);
        p.coupling_density = 0.1;
        let doc = generate(&p).unwrap();
        assert_eq!(count(&doc, 'C') - 20, 40);
        let sys = build_mna(&doc).unwrap();
        assert!(sys.c_lin().nnz() > sys.g_lin().nnz());
    }

    #[test]
    fn coupling_never_shorts_neighbours() {
        let mut p = GeneratorParams::new(GenKind::CoupledMesh, 25);
        p.coupling_density = 1.0;
        let doc = generate(&p).unwrap();
        let mut rpairs = std::collections::HashSet::new();
        for e in &doc.elements {
            if let Element::Resistor { a, b, .. } = e {
                rpairs.insert((a.clone(), b.clone()));
                rpairs.insert((b.clone(), a.clone()));
            }
        }
        let cc: Vec<_> = doc
            .elements
            .iter()
            .filter(|e| e.name().starts_with("CC"))
            .collect();
        // every non-adjacent pair of 25 nodes: 300 - 22 neighbours
        assert_eq!(cc.len(), 278);
        for e in cc {
            let n = e.nodes();
            assert!(!rpairs.contains(&(n[0].to_string(), n[1].to_string())));
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = GeneratorParams::new(GenKind::CoupledMesh, 0);
        assert!(generate(&p).is_err());
        p.stages = 3;
        p.coupling_density = 1.5;
        assert!(generate(&p).is_err());
        p.coupling_density = 0.0;
        p.r_range = (10.0, 1.0);
        assert!(generate(&p).is_err());
    }

    #[test]
    fn kind_names() {
        assert_eq!(
            "coupled-mesh".parse::<GenKind>().unwrap(),
            GenKind::CoupledMesh
        );
        assert_eq!("RC_LADDER".parse::<GenKind>().unwrap(), GenKind::RcLadder);
        assert!("ring".parse::<GenKind>().is_err());
    }
}
