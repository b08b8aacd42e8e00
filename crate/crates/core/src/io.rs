//! JSON file formats for states, ensembles, certificates and base tables.
//!
//! Complex matrices are stored row-major as lists of `[re, im]` pairs.
//! Floats are written with shortest round-trip formatting, so
//! `load(save(x))` reproduces every entry bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certificate::{self, Certificate, Method, Provenance};
use crate::detector::{BaseTable, TableEntry};
use crate::error::{Error, Result};
use crate::linalg::{c, BipartiteState, CMatrix};
use crate::maps::ChoiMatrix;
use crate::states::{ProductEnsemble, ProductTerm};

pub const VERSION: u32 = 1;
pub const STATE_FORMAT: &str = "sepcert-state";
pub const ENSEMBLE_FORMAT: &str = "sepcert-ensemble";
pub const CERTIFICATE_FORMAT: &str = "sepcert-certificate";
pub const TABLE_FORMAT: &str = "sepcert-table";

type Pairs = Vec<[f64; 2]>;

fn to_pairs(m: &CMatrix) -> Pairs {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            out.push([z.re, z.im]);
        }
    }
    out
}

fn from_pairs(p: &[[f64; 2]], n: usize, what: &str) -> Result<CMatrix> {
    if p.len() != n * n {
        return Err(Error::Format(format!(
            "{what}: expected {} entries for a {n}x{n} matrix, found {}",
            n * n,
            p.len()
        )));
    }
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{what}: non-finite entry")));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| {
        let [re, im] = p[i * n + j];
        c(re, im)
    }))
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected format \"{expected}\", found \"{format}\"")));
    }
    if version != VERSION {
        return Err(Error::Format(format!("unsupported {expected} version {version}")));
    }
    Ok(())
}

/// Optional descriptive fields carried by state files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateMeta {
    pub label: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    format: String,
    version: u32,
    dims: [usize; 2],
    matrix: Pairs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    weight: f64,
    rho_a: Pairs,
    rho_b: Pairs,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRepr {
    dims: [usize; 2],
    terms: Vec<TermRepr>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    ensemble: EnsembleRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ChoiRepr {
    d_in: usize,
    d_out: usize,
    matrix: Pairs,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceRepr {
    method: Method,
    base: EnsembleRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    map_a: Option<ChoiRepr>,
    map_b: ChoiRepr,
}

#[derive(Serialize, Deserialize)]
struct Tolerances {
    residual: f64,
    clip_floor: f64,
    simplex: f64,
}

#[derive(Serialize, Deserialize)]
struct CertificateFile {
    format: String,
    version: u32,
    generator: String,
    target_hash: String,
    dims: [usize; 2],
    residual: f64,
    tolerances: Tolerances,
    clipped: f64,
    dropped: usize,
    terms: Vec<TermRepr>,
    provenance: ProvenanceRepr,
}

#[derive(Serialize, Deserialize)]
struct TableEntryRepr {
    ensemble: EnsembleRepr,
    digest: String,
    sigma_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pruned_by: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format: String,
    version: u32,
    entries: Vec<TableEntryRepr>,
}

fn term_repr(t: &ProductTerm) -> TermRepr {
    TermRepr {
        weight: t.weight,
        rho_a: to_pairs(&t.rho_a),
        rho_b: to_pairs(&t.rho_b),
    }
}

fn raw_terms(dims: [usize; 2], terms: &[TermRepr]) -> Result<Vec<ProductTerm>> {
    terms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(ProductTerm {
                weight: t.weight,
                rho_a: from_pairs(&t.rho_a, dims[0], &format!("term {i} rho_a"))?,
                rho_b: from_pairs(&t.rho_b, dims[1], &format!("term {i} rho_b"))?,
            })
        })
        .collect()
}

fn ensemble_repr(e: &ProductEnsemble) -> EnsembleRepr {
    EnsembleRepr {
        dims: [e.d_a(), e.d_b()],
        terms: e.terms().iter().map(term_repr).collect(),
    }
}

fn ensemble_from_repr(r: &EnsembleRepr) -> Result<ProductEnsemble> {
    ProductEnsemble::new(r.dims[0], r.dims[1], raw_terms(r.dims, &r.terms)?)
}

fn choi_repr(z: &ChoiMatrix) -> ChoiRepr {
    ChoiRepr {
        d_in: z.d_in(),
        d_out: z.d_out(),
        matrix: to_pairs(z.matrix()),
    }
}

fn choi_from_repr(r: &ChoiRepr) -> Result<ChoiMatrix> {
    ChoiMatrix::new(r.d_in, r.d_out, from_pairs(&r.matrix, r.d_in * r.d_out, "Choi matrix")?)
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn render<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("file structs serialize");
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    out
}

/// Objects and arrays of containers break lines; arrays of scalars stay on
/// one line, so each matrix entry reads as one `[re, im]` row.
fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (k, (key, val)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(key).expect("string"));
                out.push_str(": ");
                write_value(val, indent + 1, out);
                if k + 1 < map.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        Value::Array(items) if items.iter().any(|x| x.is_array() || x.is_object()) => {
            out.push_str("[\n");
            for (k, val) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(val, indent + 1, out);
                if k + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Array(items) => {
            out.push('[');
            for (k, val) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                out.push_str(&serde_json::to_string(val).expect("scalar"));
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).expect("scalar")),
    }
}

pub fn state_to_json(state: &BipartiteState, meta: &StateMeta) -> String {
    render(&StateFile {
        format: STATE_FORMAT.into(),
        version: VERSION,
        dims: [state.d_a(), state.d_b()],
        matrix: to_pairs(state.matrix()),
        label: meta.label.clone(),
        seed: meta.seed,
    })
}

/// Parses and validates a state; the error names the violated invariant.
pub fn state_from_json(text: &str) -> Result<(BipartiteState, StateMeta)> {
    let f: StateFile = parse(text, "state file")?;
    check_header(&f.format, f.version, STATE_FORMAT)?;
    let [d_a, d_b] = f.dims;
    if d_a == 0 || d_b == 0 {
        return Err(Error::Format("state file: dimensions must be positive".into()));
    }
    let m = from_pairs(&f.matrix, d_a * d_b, "state matrix")?;
    let state = BipartiteState::new(d_a, d_b, m).map_err(|e| Error::Format(format!("state file: {e}")))?;
    Ok((
        state,
        StateMeta {
            label: f.label,
            seed: f.seed,
        },
    ))
}

pub fn ensemble_to_json(e: &ProductEnsemble, seed: Option<u64>) -> String {
    render(&EnsembleFile {
        format: ENSEMBLE_FORMAT.into(),
        version: VERSION,
        ensemble: ensemble_repr(e),
        seed,
    })
}

pub fn ensemble_from_json(text: &str) -> Result<(ProductEnsemble, Option<u64>)> {
    let f: EnsembleFile = parse(text, "ensemble file")?;
    check_header(&f.format, f.version, ENSEMBLE_FORMAT)?;
    Ok((ensemble_from_repr(&f.ensemble)?, f.seed))
}

pub fn certificate_to_json(cert: &Certificate) -> String {
    render(&CertificateFile {
        format: CERTIFICATE_FORMAT.into(),
        version: VERSION,
        generator: concat!("sepcert ", env!("CARGO_PKG_VERSION")).into(),
        target_hash: cert.target_hash.clone(),
        dims: [cert.dims.0, cert.dims.1],
        residual: cert.residual,
        tolerances: Tolerances {
            residual: cert.residual_tol,
            clip_floor: cert.clip_floor,
            simplex: certificate::TOL_SIMPLEX,
        },
        clipped: cert.clipped,
        dropped: cert.dropped,
        terms: cert.terms.iter().map(term_repr).collect(),
        provenance: ProvenanceRepr {
            method: cert.provenance.method,
            base: ensemble_repr(&cert.provenance.base),
            map_a: cert.provenance.map_a.as_ref().map(choi_repr),
            map_b: choi_repr(&cert.provenance.map_b),
        },
    })
}

/// Terms are loaded as written, without validation, so that the verifier
/// sees exactly what the file claims.
pub fn certificate_from_json(text: &str) -> Result<Certificate> {
    let f: CertificateFile = parse(text, "certificate file")?;
    check_header(&f.format, f.version, CERTIFICATE_FORMAT)?;
    Ok(Certificate {
        target_hash: f.target_hash,
        dims: (f.dims[0], f.dims[1]),
        terms: raw_terms(f.dims, &f.terms)?,
        provenance: Provenance {
            method: f.provenance.method,
            base: ensemble_from_repr(&f.provenance.base)?,
            map_a: f.provenance.map_a.as_ref().map(choi_from_repr).transpose()?,
            map_b: choi_from_repr(&f.provenance.map_b)?,
        },
        residual: f.residual,
        residual_tol: f.tolerances.residual,
        clip_floor: f.tolerances.clip_floor,
        clipped: f.clipped,
        dropped: f.dropped,
    })
}

pub fn table_to_json(table: &BaseTable) -> String {
    render(&TableFile {
        format: TABLE_FORMAT.into(),
        version: VERSION,
        entries: table
            .entries
            .iter()
            .map(|e| TableEntryRepr {
                ensemble: ensemble_repr(&e.ensemble),
                digest: e.digest.clone(),
                sigma_min: e.sigma_min,
                seed: e.seed,
                pruned_by: e.pruned_by,
            })
            .collect(),
    })
}

/// Loads a table, checking that every ensemble reassembles to its digest.
pub fn table_from_json(text: &str) -> Result<BaseTable> {
    let f: TableFile = parse(text, "table file")?;
    check_header(&f.format, f.version, TABLE_FORMAT)?;
    let n = f.entries.len();
    let entries = f
        .entries
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let ensemble = ensemble_from_repr(&r.ensemble)?;
            let state = ensemble.assemble()?;
            let digest = certificate::digest_of(&state);
            if digest != r.digest {
                return Err(Error::Format(format!("table entry {i}: ensemble does not reassemble to its digest")));
            }
            if r.pruned_by.is_some_and(|j| j >= n || j == i) {
                return Err(Error::Format(format!("table entry {i}: invalid pruned_by")));
            }
            Ok(TableEntry {
                ensemble,
                digest,
                sigma_min: r.sigma_min,
                seed: r.seed,
                pruned_by: r.pruned_by,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaseTable { entries })
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load_state(path: &Path) -> Result<(BipartiteState, StateMeta)> {
    state_from_json(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn load_ensemble(path: &Path) -> Result<(ProductEnsemble, Option<u64>)> {
    ensemble_from_json(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn load_certificate(path: &Path) -> Result<Certificate> {
    certificate_from_json(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn load_table(path: &Path) -> Result<BaseTable> {
    table_from_json(&read_file(path)?).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    Error::Format(format!("{}: {}", path.display(), e.to_string().trim_start_matches("format error: ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{build_corollary1, build_from_enhanced, verify_certificate, BuildOptions};
    use crate::linalg::testutil::*;
    use crate::maps::LocalMap;
    use crate::states::{isotropic_state, random_separable};
    use proptest::prelude::*;

    fn bits(m: &CMatrix) -> Vec<(u64, u64)> {
        m.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect()
    }

    #[test]
    fn state_round_trip_is_bit_exact() {
        let mut g = rng(1);
        for n in [(2, 2), (2, 3), (3, 3)] {
            let s = BipartiteState::from_unnormalized(n.0, n.1, &random_density(&mut g, n.0 * n.1)).unwrap();
            let meta = StateMeta {
                label: Some("x".into()),
                seed: Some(7),
            };
            let text = state_to_json(&s, &meta);
            let (back, m2) = state_from_json(&text).unwrap();
            assert_eq!(bits(back.matrix()), bits(s.matrix()));
            assert_eq!(m2, meta);
            assert_eq!(state_to_json(&back, &m2), text);
        }
    }

    #[test]
    fn layout_has_one_entry_per_line() {
        let text = state_to_json(&isotropic_state(2, 0.25).unwrap(), &StateMeta::default());
        assert!(text.contains("\"dims\": [2, 2]"));
        assert_eq!(text.lines().filter(|l| l.trim_start().starts_with('[') && l.contains(", ")).count(), 16);
    }

    #[test]
    fn invalid_states_name_the_invariant() {
        let good = state_to_json(&isotropic_state(2, 0.25).unwrap(), &StateMeta::default());
        let v: Value = serde_json::from_str(&good).unwrap();

        let mut bad = v.clone();
        bad["matrix"][1] = serde_json::json!([0.5, 0.0]);
        let err = state_from_json(&bad.to_string()).unwrap_err().to_string();
        assert!(err.contains("Hermitian"), "{err}");

        let mut bad = v.clone();
        bad["matrix"][0] = serde_json::json!([0.5, 0.0]);
        let err = state_from_json(&bad.to_string()).unwrap_err().to_string();
        assert!(err.contains("trace"), "{err}");

        let mut bad = v.clone();
        bad["matrix"][0] = serde_json::json!([-0.5, 0.0]);
        bad["matrix"][5] = serde_json::json!([1.5, 0.0]);
        let err = state_from_json(&bad.to_string()).unwrap_err().to_string();
        assert!(err.contains("positive semidefinite"), "{err}");

        let mut bad = v.clone();
        bad["matrix"].as_array_mut().unwrap().pop();
        assert!(state_from_json(&bad.to_string()).unwrap_err().to_string().contains("entries"));

        let mut bad = v;
        bad["format"] = serde_json::json!("other");
        assert!(state_from_json(&bad.to_string()).is_err());
        assert!(state_from_json("not json").is_err());
    }

    #[test]
    fn ensemble_round_trip() {
        let e = random_separable(2, 3, 5, 3).unwrap();
        let text = ensemble_to_json(&e, Some(3));
        let (back, seed) = ensemble_from_json(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(seed, Some(3));
    }

    #[test]
    fn certificate_round_trip_still_verifies() {
        let s = isotropic_state(2, 0.2).unwrap();
        let cert = build_corollary1(&s, &BuildOptions::default()).unwrap();
        let back = certificate_from_json(&certificate_to_json(&cert)).unwrap();
        assert_eq!(back, cert);
        assert!(verify_certificate(&back, &s, 1e-8).passed);

        let base = random_separable(2, 2, 4, 1).unwrap();
        let ma = LocalMap::random_cp(2, 2, 2, 2);
        let mb = LocalMap::random_cp(2, 2, 2, 3);
        let m = crate::maps::apply_local_sum(&ma, &mb, &base.assemble().unwrap()).unwrap();
        let sigma = BipartiteState::from_unnormalized(2, 2, &m).unwrap();
        let cert = build_from_enhanced(&base, &ma, &mb, &sigma, &BuildOptions::default()).unwrap();
        let back = certificate_from_json(&certificate_to_json(&cert)).unwrap();
        assert_eq!(back, cert);
    }

    #[test]
    fn tampered_certificate_loads_but_fails_verification() {
        let s = isotropic_state(2, 0.2).unwrap();
        let cert = build_corollary1(&s, &BuildOptions::default()).unwrap();
        let mut v: Value = serde_json::from_str(&certificate_to_json(&cert)).unwrap();
        let w = v["terms"][0]["weight"].as_f64().unwrap();
        v["terms"][0]["weight"] = serde_json::json!(w + 1e-3);
        let back = certificate_from_json(&v.to_string()).unwrap();
        assert!(!verify_certificate(&back, &s, 1e-6).passed);
    }

    #[test]
    fn table_round_trip_and_digest_check() {
        let e = random_separable(2, 2, 6, 4).unwrap();
        let mut table = BaseTable {
            entries: vec![TableEntry::new(e.clone(), Some(4)).unwrap(), TableEntry::new(e, Some(4)).unwrap()],
        };
        table.entries[1].pruned_by = Some(0);
        let text = table_to_json(&table);
        assert_eq!(table_from_json(&text).unwrap(), table);

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["entries"][0]["digest"] = serde_json::json!("00");
        assert!(table_from_json(&v.to_string()).unwrap_err().to_string().contains("digest"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn arbitrary_floats_round_trip(seed in any::<u64>()) {
            let mut g = rng(seed);
            let s = BipartiteState::from_unnormalized(2, 2, &random_density(&mut g, 4)).unwrap();
            let (back, _) = state_from_json(&state_to_json(&s, &StateMeta::default())).unwrap();
            prop_assert_eq!(bits(back.matrix()), bits(s.matrix()));
        }
    }
}
