//! Words, transition matrices, strongly connected components and the entropy
//! of subshifts of finite type.

use std::fmt;
use std::str::FromStr;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{input, Error, Result};

/// Default cap on the number of enumerated words.
pub const ENUMERATION_CAP: u64 = 1 << 24;

/// Relative tolerance of the Perron root iteration.
pub const SPECTRAL_TOL: f64 = 1e-10;

/// Finite word over `{0, …, k-1}`; written as a string of digits `0-9a-z`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn new(symbols: Vec<u8>) -> Word {
        Word(symbols)
    }

    pub fn empty() -> Word {
        Word(Vec::new())
    }

    pub fn repeat(symbol: u8, n: usize) -> Word {
        Word(vec![symbol; n])
    }

    #[inline]
    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn push(&mut self, s: u8) {
        self.0.push(s);
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

fn symbol_char(s: u8) -> Option<char> {
    std::char::from_digit(s as u32, 36)
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            match symbol_char(s) {
                Some(c) => write!(f, "{c}")?,
                None => write!(f, "<{s}>")?,
            }
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;
    fn from_str(s: &str) -> Result<Word> {
        let mut out = Vec::with_capacity(s.len());
        let mut chars = s.chars();
        while let Some(c) = chars.next() {
            if c == '<' {
                let num: String = chars.by_ref().take_while(|&d| d != '>').collect();
                match num.parse::<u8>() {
                    Ok(v) => out.push(v),
                    Err(_) => return input(format!("bad symbol <{num}> in word {s:?}")),
                }
            } else {
                match c.to_digit(36) {
                    Some(d) => out.push(d as u8),
                    None => return input(format!("bad symbol {c:?} in word {s:?}")),
                }
            }
        }
        Ok(Word(out))
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Word, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All `kⁿ` words of length `n` in lexicographic order.
pub fn enumerate_words(k: usize, n: usize) -> Result<Vec<Word>> {
    enumerate_words_capped(k, n, ENUMERATION_CAP)
}

pub fn enumerate_words_capped(k: usize, n: usize, cap: u64) -> Result<Vec<Word>> {
    if k == 0 || k > 255 {
        return input(format!("alphabet size must be in 1..=255, got {k}"));
    }
    let total = (k as u64).checked_pow(n as u32).filter(|&t| t <= cap);
    let Some(total) = total else {
        return Err(Error::Resource(format!("{k}^{n} words exceed the enumeration cap {cap}; use sampling instead")));
    };
    let mut out = Vec::with_capacity(total as usize);
    let mut cur = vec![0u8; n];
    for _ in 0..total {
        out.push(Word(cur.clone()));
        for pos in (0..n).rev() {
            if (cur[pos] as usize) + 1 < k {
                cur[pos] += 1;
                break;
            }
            cur[pos] = 0;
        }
    }
    Ok(out)
}

/// Square 0/1 matrix, serialized as row-major rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionMatrix {
    size: usize,
    entries: Vec<bool>,
}

impl Serialize for TransitionMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<u8>> =
            (0..self.size).map(|i| (0..self.size).map(|j| self.get(i, j) as u8).collect()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransitionMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<u8>> = Vec::deserialize(d)?;
        TransitionMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl TransitionMatrix {
    pub fn zeros(size: usize) -> TransitionMatrix {
        TransitionMatrix { size, entries: vec![false; size * size] }
    }

    pub fn full(size: usize) -> TransitionMatrix {
        TransitionMatrix { size, entries: vec![true; size * size] }
    }

    pub fn identity(size: usize) -> TransitionMatrix {
        let mut a = TransitionMatrix::zeros(size);
        for i in 0..size {
            a.set(i, i, true);
        }
        a
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<TransitionMatrix> {
        let size = rows.len();
        let mut a = TransitionMatrix::zeros(size);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != size {
                return input(format!("row {i} has {} entries, expected {size}", r.len()));
            }
            for (j, &v) in r.iter().enumerate() {
                match v {
                    0 => {}
                    1 => a.set(i, j, true),
                    _ => return input(format!("entry ({i},{j}) is {v}, expected 0 or 1")),
                }
            }
        }
        Ok(a)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.entries[i * self.size + j] = v;
    }

    pub fn row_count(&self, i: usize) -> usize {
        (0..self.size).filter(|&j| self.get(i, j)).count()
    }

    /// Submatrix on the given (ordered) index set.
    pub fn restrict(&self, idx: &[usize]) -> TransitionMatrix {
        let mut a = TransitionMatrix::zeros(idx.len());
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                a.set(p, q, self.get(i, j));
            }
        }
        a
    }

    /// Simultaneous permutation of rows and columns: new index `p` is old `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> TransitionMatrix {
        self.restrict(perm)
    }
}

/// One strongly connected component of the transition graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Indices in increasing order.
    pub indices: Vec<usize>,
    pub submatrix: TransitionMatrix,
    /// Whether the component carries a cycle (false for a lone state without a self-loop).
    pub cyclic: bool,
}

/// Strongly connected components, ordered by smallest index.
pub fn scc_decompose(a: &TransitionMatrix) -> Vec<Component> {
    let mut g: DiGraph<(), ()> = DiGraph::new();
    let nodes: Vec<_> = (0..a.size()).map(|_| g.add_node(())).collect();
    for i in 0..a.size() {
        for j in 0..a.size() {
            if a.get(i, j) {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut comps: Vec<Component> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut indices: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            indices.sort_unstable();
            let submatrix = a.restrict(&indices);
            let cyclic = indices.len() > 1 || a.get(indices[0], indices[0]);
            Component { indices, submatrix, cyclic }
        })
        .collect();
    comps.sort_by_key(|c| c.indices[0]);
    comps
}

/// Perron data of an irreducible matrix: spectral radius plus normalized
/// right and left eigenvectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Perron {
    pub radius: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

fn perron_vector(a: &TransitionMatrix, transpose: bool, tol: f64) -> (f64, Vec<f64>) {
    // Iterate with A + I, which is primitive whenever A is irreducible, and
    // stop on the Collatz-Wielandt bracket.
    let n = a.size();
    let mut v = vec![1.0; n];
    let mut bracket = (0.0, f64::INFINITY);
    for _ in 0..200_000 {
        let mut w = v.clone();
        for i in 0..n {
            for j in 0..n {
                let e = if transpose { a.get(j, i) } else { a.get(i, j) };
                if e {
                    w[i] += v[j];
                }
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..n {
            let r = w[i] / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let s: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= s;
        }
        v = w;
        bracket = (lo, hi);
        if hi - lo <= tol * 1e-3 * hi {
            break;
        }
    }
    (0.5 * (bracket.0 + bracket.1) - 1.0, v)
}

/// Perron root and eigenvectors of an irreducible 0/1 matrix.
pub fn perron(a: &TransitionMatrix) -> Perron {
    let (radius, right) = perron_vector(a, false, SPECTRAL_TOL);
    let (_, left) = perron_vector(a, true, SPECTRAL_TOL);
    Perron { radius, right, left }
}

/// Topological entropy of the SFT: the largest `log ρ` over cyclic components,
/// or 0 if the graph has no cycle.
pub fn sft_entropy(a: &TransitionMatrix) -> f64 {
    scc_decompose(a).iter().filter(|c| c.cyclic).map(|c| component_entropy(&c.submatrix)).fold(0.0, f64::max)
}

pub(crate) fn component_entropy(a: &TransitionMatrix) -> f64 {
    if a.size() == 1 {
        return 0.0;
    }
    if a.entries.iter().all(|&e| e) {
        return (a.size() as f64).ln();
    }
    let (rho, _) = perron_vector(a, false, SPECTRAL_TOL);
    rho.max(1.0).ln()
}

/// Number of `A`-admissible words of length `n`, exactly.
pub fn admissible_word_count(a: &TransitionMatrix, n: usize) -> Result<u128> {
    if n == 0 {
        return input("word length must be at least 1");
    }
    let m = a.size();
    let mut v: Vec<u128> = vec![1; m];
    for _ in 1..n {
        let mut w = vec![0u128; m];
        for i in 0..m {
            for j in 0..m {
                if a.get(i, j) {
                    w[i] = w[i].checked_add(v[j]).ok_or_else(overflow)?;
                }
            }
        }
        v = w;
    }
    v.iter().try_fold(0u128, |acc, &x| acc.checked_add(x).ok_or_else(overflow))
}

fn overflow() -> Error {
    Error::Resource("admissible word count overflows 128 bits".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration() {
        let w = enumerate_words(2, 2).unwrap();
        let s: Vec<String> = w.iter().map(|w| w.to_string()).collect();
        assert_eq!(s, ["00", "01", "10", "11"]);
        assert_eq!(enumerate_words(3, 0).unwrap(), vec![Word::empty()]);
        assert!(matches!(enumerate_words(2, 30), Err(Error::Resource(_))));
    }

    #[test]
    fn word_text() {
        let w: Word = "01a".parse().unwrap();
        assert_eq!(w.symbols(), &[0, 1, 10]);
        assert_eq!(w.to_string(), "01a");
        let big = Word::new(vec![40, 1]);
        assert_eq!(big.to_string().parse::<Word>().unwrap(), big);
        assert!("0-1".parse::<Word>().is_err());
    }

    #[test]
    fn components() {
        let c = scc_decompose(&TransitionMatrix::full(3));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].indices, vec![0, 1, 2]);
        let c = scc_decompose(&TransitionMatrix::identity(2));
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.cyclic && c.indices.len() == 1));
        let nil = TransitionMatrix::from_rows(&[[0, 1], [0, 0]]).unwrap();
        let c = scc_decompose(&nil);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| !c.cyclic));
    }

    #[test]
    fn entropies() {
        assert!((sft_entropy(&TransitionMatrix::full(3)) - 3f64.ln()).abs() < 1e-12);
        let golden = TransitionMatrix::from_rows(&[[1, 1], [1, 0]]).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sft_entropy(&golden) - phi.ln()).abs() < 1e-9);
        let upper = TransitionMatrix::from_rows(&[[0, 1, 1], [0, 0, 1], [0, 0, 0]]).unwrap();
        assert_eq!(sft_entropy(&upper), 0.0);
        // periodic irreducible matrix: a 2-cycle has entropy 0
        let swap = TransitionMatrix::from_rows(&[[0, 1], [1, 0]]).unwrap();
        assert!(sft_entropy(&swap).abs() < 1e-9);
    }

    #[test]
    fn counts() {
        assert_eq!(admissible_word_count(&TransitionMatrix::full(2), 5).unwrap(), 32);
        let golden = TransitionMatrix::from_rows(&[[1, 1], [1, 0]]).unwrap();
        assert_eq!(admissible_word_count(&golden, 5).unwrap(), 13);
        // enumeration oracle: words of length 5 avoiding "11"
        let brute =
            enumerate_words(2, 5).unwrap().iter().filter(|w| !w.symbols().windows(2).any(|p| p == [1, 1])).count();
        assert_eq!(brute, 13);
        assert_eq!(admissible_word_count(&TransitionMatrix::identity(4), 1).unwrap(), 4);
        assert!(matches!(admissible_word_count(&TransitionMatrix::full(8), 60), Err(Error::Resource(_))));
        assert!(admissible_word_count(&golden, 0).is_err());
    }

    #[test]
    fn perron_vectors() {
        let golden = TransitionMatrix::from_rows(&[[1, 1], [1, 0]]).unwrap();
        let p = perron(&golden);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p.radius - phi).abs() < 1e-9);
        assert!((p.right[0] / p.right[1] - phi).abs() < 1e-8);
    }
}
