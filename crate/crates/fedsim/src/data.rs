//! Dataset ingestion and synthetic problem generation.
//!
//! Covers the LibSVM text format (sparse `idx:val` pairs, 1-based indices),
//! row partitioning across clients, and the synthetic heterogeneous
//! quadratic instances built from per-client orthonormal frames.

use crate::error::{Error, Result};
use crate::problems::{GlobalProblem, LogisticClient, QuadraticClient};
use crate::rng::{StreamKind, StreamRng};
use crate::vecops;
use std::io::BufRead;

/// One sparse row: strictly increasing 1-based indices with values.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: f64, // exactly +1 or -1
    pub features: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Row>,
    pub dim: usize,
}

impl Dataset {
    pub fn count(&self) -> usize {
        self.rows.len()
    }

    /// Scale every row to Euclidean norm 2 (zero rows are left untouched).
    /// With this scaling each logistic component has smoothness
    /// `norm^2/4 + mu = 1 + mu`.
    pub fn normalize_rows_to(&mut self, target_norm: f64) {
        for row in &mut self.rows {
            let nrm = row.features.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                let s = target_norm / nrm;
                for f in &mut row.features {
                    f.1 *= s;
                }
            }
        }
    }
}

/// Map a raw numeric label to the canonical {-1, +1} pair: LibSVM corpora
/// mix {0,1} and {-1,+1}, so any nonpositive value becomes -1.
fn canonical_label(raw: f64) -> f64 {
    if raw > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Parse LibSVM text. Empty lines are skipped; any malformed token aborts
/// the parse with its line number.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a first token");
        let raw: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("non-numeric label `{label_tok}`"),
        })?;
        let mut features = Vec::new();
        let mut prev_idx = 0u32;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected `idx:val`, got `{tok}`"),
            })?;
            let idx: u32 = idx_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric index `{idx_s}`"),
            })?;
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric value `{val_s}`"),
            })?;
            if idx < 1 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature index < 1".into(),
                });
            }
            if idx <= prev_idx {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-increasing index {idx} after {prev_idx}"),
                });
            }
            prev_idx = idx;
            dim = dim.max(idx as usize);
            features.push((idx, val));
        }
        rows.push(Row {
            label: canonical_label(raw),
            features,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "empty file".into(),
        });
    }
    Ok(Dataset { rows, dim })
}

pub fn parse_libsvm_file(path: &std::path::Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    parse_libsvm(std::io::BufReader::new(file))
}

/// Re-emit in LibSVM text; `parse_libsvm` on the output reproduces the
/// dataset exactly (labels are written as `+1`/`-1`, values round-trip).
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for row in &ds.rows {
        out.push_str(if row.label > 0.0 { "+1" } else { "-1" });
        for &(idx, val) in &row.features {
            out.push(' ');
            out.push_str(&format!("{idx}:{val}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Random,
    LabelSorted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    pub n: usize,
    pub m: usize,
}

/// Split `ds` into `n` shards of exactly `m = count / n` rows. Rows beyond
/// `n * m` are dropped from the tail of the chosen ordering.
pub fn partition(ds: &Dataset, n: usize, mode: PartitionMode, seed: u64) -> Result<Partition> {
    let count = ds.count();
    if n == 0 || n > count {
        return Err(Error::Config(format!(
            "cannot split {count} rows across {n} clients"
        )));
    }
    let m = count / n;
    let mut order: Vec<usize> = (0..count).collect();
    match mode {
        PartitionMode::Random => {
            let mut rng = StreamRng::new(seed, StreamKind::Probe(0));
            // Fisher-Yates
            for i in (1..count).rev() {
                let j = rng.uniform_index(i + 1);
                order.swap(i, j);
            }
        }
        PartitionMode::LabelSorted => {
            order.sort_by(|&a, &b| {
                ds.rows[a]
                    .label
                    .partial_cmp(&ds.rows[b].label)
                    .expect("labels are finite")
            });
        }
    }
    let shards = (0..n).map(|i| order[i * m..(i + 1) * m].to_vec()).collect();
    Ok(Partition { shards, n, m })
}

/// Synthetic heterogeneous quadratic instance description.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadraticSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub mu: f64,
    pub seed: u64,
}

impl QuadraticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::Config("n, m, d must be positive".into()));
        }
        if self.m > self.d {
            return Err(Error::Config(format!(
                "m = {} orthonormal vectors do not fit in dimension d = {}",
                self.m, self.d
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config("mu must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Instance presets: types 0 and 2 use a single direction per client,
    /// types 1 and 3 use ten. The pairs share parameters and differ only in
    /// the derived seed.
    pub fn table_preset(ptype: usize, n: usize, d: usize, mu: f64, base_seed: u64) -> Result<Self> {
        let m = match ptype {
            0 | 2 => 1,
            1 | 3 => 10,
            _ => return Err(Error::Config(format!("unknown instance type {ptype}"))),
        };
        Ok(QuadraticSpec {
            n,
            m,
            d,
            mu,
            seed: base_seed
                .wrapping_mul(0x0100_0000_01b3)
                .wrapping_add(ptype as u64),
        })
    }
}

const ORTHO_RETRIES: usize = 64;

/// Draw `m` orthonormal vectors in dimension `d` by twice-applied modified
/// Gram-Schmidt on Gaussian draws, re-drawing a vector whenever the
/// projection leaves it numerically rank-deficient.
fn orthonormal_rows(m: usize, d: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let mut rows = vec![0.0f64; m * d];
    for j in 0..m {
        let mut ok = false;
        for _ in 0..ORTHO_RETRIES {
            let (head, tail) = rows.split_at_mut(j * d);
            let cand = &mut tail[..d];
            rng.fill_standard_normal(cand);
            for _pass in 0..2 {
                for i in 0..j {
                    let prev = &head[i * d..(i + 1) * d];
                    let proj = vecops::dot(cand, prev);
                    vecops::axpy(-proj, prev, cand);
                }
            }
            let nrm = vecops::norm(cand);
            if nrm > 1e-8 {
                vecops::scale(1.0 / nrm, cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::RankDeficient {
                retries: ORTHO_RETRIES,
            });
        }
    }
    Ok(rows)
}

fn quadratic_client(spec: &QuadraticSpec, rng: &mut StreamRng) -> Result<QuadraticClient> {
    let mut z = vec![0.0; spec.d];
    rng.fill_standard_normal(&mut z);
    let rows = orthonormal_rows(spec.m, spec.d, rng)?;
    Ok(QuadraticClient { z, rows })
}

/// Build the synthetic quadratic problem: client `i` holds
/// `f_i(x) = (mu/2)|x|^2 + ((1-mu)/2) (x - z_i)' P_i (x - z_i)` with
/// `P_i` the projector onto `m` orthonormal directions, split into `m`
/// components whose average recovers `f_i`. The exact optimum is solved
/// directly and attached.
pub fn make_quadratic(spec: &QuadraticSpec) -> Result<GlobalProblem> {
    spec.validate()?;
    let mut rng = StreamRng::new(spec.seed, StreamKind::Probe(1));
    let clients = (0..spec.n)
        .map(|_| quadratic_client(spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    GlobalProblem::from_quadratic(spec, clients)
}

/// Identical-data variant: one client is drawn and replicated `n` times, so
/// every local objective coincides and all heterogeneity measures vanish.
pub fn make_identical_quadratic(spec: &QuadraticSpec) -> Result<GlobalProblem> {
    spec.validate()?;
    let mut rng = StreamRng::new(spec.seed, StreamKind::Probe(1));
    let one = quadratic_client(spec, &mut rng)?;
    let clients = vec![one; spec.n];
    GlobalProblem::from_quadratic(spec, clients)
}

/// Build a regularized logistic-regression problem over a partitioned
/// dataset. Rows are scaled to norm 2 when `normalize` is set, putting the
/// worst component smoothness at `1 + mu`.
pub fn make_logistic(
    ds: &Dataset,
    part: &Partition,
    mu: f64,
    normalize: bool,
) -> Result<GlobalProblem> {
    let mut ds = ds.clone();
    if normalize {
        ds.normalize_rows_to(2.0);
    }
    let d = ds.dim;
    let clients: Vec<LogisticClient> = part
        .shards
        .iter()
        .map(|shard| {
            let mut labels = Vec::with_capacity(shard.len());
            let mut offsets = Vec::with_capacity(shard.len() + 1);
            let mut indices = Vec::new();
            let mut values = Vec::new();
            offsets.push(0usize);
            for &r in shard {
                let row = &ds.rows[r];
                labels.push(row.label);
                for &(idx, val) in &row.features {
                    indices.push(idx as usize - 1);
                    values.push(val);
                }
                offsets.push(indices.len());
            }
            LogisticClient {
                labels,
                offsets,
                indices,
                values,
            }
        })
        .collect();
    GlobalProblem::from_logistic(clients, d, mu)
}

/// Deterministic stand-in with the structure of the `mushrooms` corpus:
/// 8124 rows, 112 one-hot columns grouped into 22 categorical blocks (one
/// active value per block per row), labels decided by a single block so
/// the classes are linearly separable with a margin. Used by tests and
/// examples when the real file is not on disk.
pub fn synthetic_mushrooms_like(seed: u64) -> Dataset {
    let mut rng = StreamRng::new(seed, StreamKind::Probe(3));
    // 22 blocks over 112 columns: twenty of width 5, two of width 6
    let mut block_starts = Vec::new();
    let mut start = 0u32;
    for b in 0..22 {
        block_starts.push(start);
        start += if b < 20 { 5 } else { 6 };
    }
    debug_assert_eq!(start, 112);
    let mut rows = Vec::with_capacity(8124);
    for _ in 0..8124 {
        let mut features = Vec::with_capacity(22);
        let mut label = -1.0;
        for (b, &s) in block_starts.iter().enumerate() {
            let width = if b < 20 { 5 } else { 6 };
            let v = rng.uniform_index(width) as u32;
            if b == 0 && v < 3 {
                label = 1.0;
            }
            features.push((s + v + 1, 1.0));
        }
        rows.push(Row { label, features });
    }
    Dataset { rows, dim: 112 }
}

/// Random sparse binary dataset: every row activates `active` distinct
/// features with value 1, labels follow a planted linear rule plus noise.
pub fn synthetic_sparse_binary(count: usize, dim: usize, active: usize, seed: u64) -> Dataset {
    let mut rng = StreamRng::new(seed, StreamKind::Probe(2));
    let mut w = vec![0.0; dim];
    rng.fill_standard_normal(&mut w);
    let mut rows = Vec::with_capacity(count);
    for r in 0..count {
        let mut picked = std::collections::BTreeSet::new();
        // force dim coverage so the parsed dim matches exactly
        if r == 0 {
            picked.insert(dim as u32);
            picked.insert(1u32);
        }
        while picked.len() < active.min(dim) {
            picked.insert(rng.uniform_index(dim) as u32 + 1);
        }
        let features: Vec<(u32, f64)> = picked.into_iter().map(|i| (i, 1.0)).collect();
        let score: f64 = features
            .iter()
            .map(|&(i, v)| v * w[i as usize - 1])
            .sum::<f64>()
            + 0.5 * rng.standard_normal();
        rows.push(Row {
            label: canonical_label(score),
            features,
        });
    }
    Dataset { rows, dim }
}
