//! The single-qutrit Clifford group and sequence compilation with a virtual
//! phase frame.

use std::collections::{HashMap, VecDeque};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::algebra::{canonical_phase, cis, identity, CMatrix};
use crate::error::{Error, Result};
use crate::synthesis::{decompose, GateDecomposition, GivensRotation};

pub const QUTRIT_CLIFFORD_ORDER: usize = 216;

const KEY_GRID: f64 = 1e6;
const CANONICAL_TOL: f64 = 1e-6;

/// Qutrit Fourier gate `(1/sqrt 3) [omega^{jk}]`.
pub fn fourier3() -> CMatrix {
    let w = 2.0 * std::f64::consts::PI / 3.0;
    let s = 1.0 / 3f64.sqrt();
    CMatrix::from_fn(3, 3, |j, k| cis(w * (j * k) as f64) * s)
}

/// Qutrit phase gate `diag(1, 1, omega)`.
pub fn phase3() -> CMatrix {
    let mut m = identity(3);
    m[(2, 2)] = cis(2.0 * std::f64::consts::PI / 3.0);
    m
}

type Key = Vec<(i64, i64)>;

fn key_of(m: &CMatrix) -> Key {
    canonical_phase(m, CANONICAL_TOL)
        .iter()
        .map(|z| ((z.re * KEY_GRID).round() as i64, (z.im * KEY_GRID).round() as i64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CliffordElement {
    pub index: usize,
    /// Canonical representative: first sizeable entry real and positive.
    pub matrix: CMatrix,
    /// Generator letters (`H`, `S`) in the order they are applied.
    pub word: String,
    pub decomposition: GateDecomposition,
}

#[derive(Debug)]
pub struct CliffordGroup {
    elements: Vec<CliffordElement>,
    lookup: HashMap<Key, usize>,
    /// `product[a * n + b]` is the index of `elements[a] * elements[b]`.
    product: Vec<u16>,
    inverse: Vec<usize>,
}

impl CliffordGroup {
    /// Breadth-first closure of `{H, S}` up to global phase.
    pub fn generate() -> Result<Self> {
        let generators = [('H', fourier3()), ('S', phase3())];
        let mut elements: Vec<(CMatrix, String)> = Vec::new();
        let mut lookup = HashMap::new();
        let id = identity(3);
        lookup.insert(key_of(&id), 0);
        elements.push((id.clone(), String::new()));
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for (letter, g) in &generators {
                let next = g * &elements[i].0;
                let key = key_of(&next);
                if lookup.contains_key(&key) {
                    continue;
                }
                let idx = elements.len();
                if idx >= QUTRIT_CLIFFORD_ORDER {
                    return Err(Error::Validation("Clifford closure exceeded 216 elements".into()));
                }
                lookup.insert(key, idx);
                let word = format!("{}{}", elements[i].1, letter);
                elements.push((canonical_phase(&next, CANONICAL_TOL), word));
                queue.push_back(idx);
            }
        }
        if elements.len() != QUTRIT_CLIFFORD_ORDER {
            return Err(Error::Validation(format!("Clifford closure has {} elements", elements.len())));
        }

        let n = elements.len();
        let mut product = vec![0u16; n * n];
        for a in 0..n {
            for b in 0..n {
                let key = key_of(&(&elements[a].0 * &elements[b].0));
                let idx = *lookup
                    .get(&key)
                    .ok_or_else(|| Error::Validation("Clifford product left the group".into()))?;
                product[a * n + b] = idx as u16;
            }
        }
        let mut inverse = vec![usize::MAX; n];
        for a in 0..n {
            inverse[a] = (0..n)
                .find(|&b| product[a * n + b] == 0)
                .ok_or_else(|| Error::Validation("Clifford element without inverse".into()))?;
        }

        let elements = elements
            .into_iter()
            .enumerate()
            .map(|(index, (matrix, word))| {
                let decomposition = decompose(&matrix)?;
                Ok(CliffordElement { index, matrix, word, decomposition })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self { elements, lookup, product, inverse })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CliffordElement] {
        &self.elements
    }

    pub fn element(&self, index: usize) -> Result<&CliffordElement> {
        self.elements.get(index).ok_or(Error::IndexOutOfRange { index, size: self.len() })
    }

    pub fn identity_index(&self) -> usize {
        0
    }

    /// Index of `elements[a] * elements[b]` (`b` applied first).
    pub fn multiply(&self, a: usize, b: usize) -> Result<usize> {
        let n = self.len();
        for idx in [a, b] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, size: n });
            }
        }
        Ok(self.product[a * n + b] as usize)
    }

    pub fn inverse(&self, index: usize) -> Result<usize> {
        self.inverse.get(index).copied().ok_or(Error::IndexOutOfRange { index, size: self.len() })
    }

    /// Index of a matrix, up to global phase, if it is a Clifford.
    pub fn index_of(&self, m: &CMatrix) -> Option<usize> {
        if m.shape() != (3, 3) {
            return None;
        }
        self.lookup.get(&key_of(m)).copied()
    }

    /// Index of the product of gates applied in the given time order.
    pub fn sequence_product(&self, gates: &[usize]) -> Result<usize> {
        gates.iter().try_fold(self.identity_index(), |acc, &g| self.multiply(g, acc))
    }

    /// Index of the gate that returns a sequence to the identity.
    pub fn recovery(&self, gates: &[usize]) -> Result<usize> {
        self.inverse(self.sequence_product(gates)?)
    }

    /// Average number of rotations per element.
    pub fn mean_rotation_count(&self) -> f64 {
        let total: usize = self.elements.iter().map(|e| e.decomposition.rotations.len()).sum();
        total as f64 / self.len() as f64
    }

    pub fn to_records(&self) -> Vec<CliffordRecord> {
        self.elements
            .iter()
            .map(|e| CliffordRecord {
                index: e.index,
                word: e.word.clone(),
                matrix: (0..3)
                    .map(|r| (0..3).map(|c| [e.matrix[(r, c)].re, e.matrix[(r, c)].im]).collect())
                    .collect(),
                rotations: e.decomposition.rotations.clone(),
                diagonal: e.decomposition.diagonal.clone(),
            })
            .collect()
    }

    pub fn inverse_table(&self) -> &[usize] {
        &self.inverse
    }
}

/// Serializable form of one group element.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CliffordRecord {
    pub index: usize,
    pub word: String,
    /// Rows of `[re, im]` pairs.
    pub matrix: Vec<Vec<[f64; 2]>>,
    pub rotations: Vec<GivensRotation>,
    pub diagonal: Vec<f64>,
}

/// The shared, lazily built qutrit Clifford group.
pub fn clifford_group() -> &'static CliffordGroup {
    static GROUP: OnceLock<CliffordGroup> = OnceLock::new();
    GROUP.get_or_init(|| CliffordGroup::generate().expect("qutrit Clifford closure"))
}

/// Accumulated virtual-Z phases. The frame `diag(e^{i delta})` sits to the
/// left of all physical rotations emitted so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFrame {
    pub phases: Vec<f64>,
}

impl PhaseFrame {
    pub fn new(d: usize) -> Self {
        Self { phases: vec![0.0; d] }
    }

    /// The rotation `R'` with `R F = F R'`.
    pub fn transform(&self, rot: &GivensRotation) -> GivensRotation {
        let phi = rot.phi + self.phases[rot.m] - self.phases[rot.n];
        GivensRotation { phi, ..*rot }.normalized()
    }

    pub fn absorb(&mut self, diagonal: &[f64]) {
        for (p, d) in self.phases.iter_mut().zip(diagonal) {
            *p += d;
        }
    }

    pub fn matrix(&self) -> CMatrix {
        let d = self.phases.len();
        let mut m = CMatrix::zeros(d, d);
        for (j, &p) in self.phases.iter().enumerate() {
            m[(j, j)] = cis(p);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledSequence {
    /// Physical rotations in time order.
    pub rotations: Vec<GivensRotation>,
    /// Virtual phase left over after the last rotation.
    pub frame: PhaseFrame,
}

impl CompiledSequence {
    /// `frame * R_K * ... * R_1`.
    pub fn realized_unitary(&self) -> Result<CMatrix> {
        let d = self.frame.phases.len();
        let mut u = identity(d);
        for rot in &self.rotations {
            u = rot.matrix(d)? * u;
        }
        Ok(self.frame.matrix() * u)
    }
}

/// Compile decomposed gates, given in time order, into physical rotations with
/// every diagonal factor tracked virtually.
pub fn compile_decompositions<'a, I>(gates: I, d: usize) -> CompiledSequence
where
    I: IntoIterator<Item = &'a GateDecomposition>,
{
    let mut frame = PhaseFrame::new(d);
    let mut rotations = Vec::new();
    for gate in gates {
        for rot in gate.application_order() {
            rotations.push(frame.transform(rot));
        }
        frame.absorb(&gate.diagonal);
    }
    CompiledSequence { rotations, frame }
}

/// Compile a sequence of Clifford indices in time order.
pub fn compile_sequence(group: &CliffordGroup, gates: &[usize]) -> Result<CompiledSequence> {
    let decs = gates
        .iter()
        .map(|&g| group.element(g).map(|e| &e.decomposition))
        .collect::<Result<Vec<_>>>()?;
    Ok(compile_decompositions(decs, 3))
}

/// Product `G_N ... G_1` of gates given in time order.
pub fn sequence_unitary(group: &CliffordGroup, gates: &[usize]) -> Result<CMatrix> {
    let mut u = identity(3);
    for &g in gates {
        u = &group.element(g)?.matrix * u;
    }
    Ok(u)
}

/// The four named gates used in characterization: `X`, `Z`, `H`, `S`.
pub fn named_gate(name: &str) -> Option<CMatrix> {
    match name {
        "X" | "x" => Some(crate::algebra::shift(3)),
        "Z" | "z" => Some(crate::algebra::clock(3)),
        "H" | "h" => Some(fourier3()),
        "S" | "s" => Some(phase3()),
        "I" | "i" => Some(identity(3)),
        _ => None,
    }
}
