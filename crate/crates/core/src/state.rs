//! Mutable network state: weights, per-level representations, class-major
//! sample matrices, and per-iteration training records.

use ndarray::{Array2, CowArray, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::NetworkConfig;
use crate::error::{LpnError, Result};
use crate::linalg::Mat;

/// Forward matrices `A_0..A_{L-1}` and, unless tied, backward matrices
/// `B_1..B_{L-1}`. `forward[l]` is `A_l` with shape `M_{l+1} × M_l`;
/// `backward[l-1]` is `B_l` with shape `M_l × M_{l+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub forward: Vec<Mat>,
    pub backward: Option<Vec<Mat>>,
}

impl WeightSet {
    /// Forward weight `A_l` connecting level `l` to `l+1`.
    pub fn a(&self, l: usize) -> &Mat {
        &self.forward[l]
    }

    /// Backward weight `B_l` (level `l+1` back to `l`), materialized as
    /// `A_lᵀ` in tied mode.
    pub fn b(&self, l: usize) -> CowArray<'_, f64, Ix2> {
        match &self.backward {
            Some(bs) => CowArray::from(bs[l - 1].view()),
            None => CowArray::from(self.forward[l].t().to_owned()),
        }
    }

    pub fn levels(&self) -> usize {
        self.forward.len()
    }

    pub fn is_tied(&self) -> bool {
        self.backward.is_none()
    }

    /// A consistent copy for readers that must not observe in-place updates.
    pub fn snapshot(&self) -> WeightSet {
        self.clone()
    }

    pub fn all_finite(&self) -> bool {
        let fwd = self.forward.iter().all(|m| m.iter().all(|v| v.is_finite()));
        let bwd = self
            .backward
            .as_ref()
            .map(|bs| bs.iter().all(|m| m.iter().all(|v| v.is_finite())))
            .unwrap_or(true);
        fwd && bwd
    }
}

/// Draws every forward weight with i.i.d. standard normal entries from a
/// seeded generator; backward weights are tied or drawn independently
/// afterwards, in level order.
pub fn init_weights(config: &NetworkConfig, seed: u64) -> WeightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = config.levels();
    let mut forward = Vec::with_capacity(levels);
    for l in 0..levels {
        forward.push(gaussian_matrix(
            config.width(l + 1),
            config.width(l),
            &mut rng,
        ));
    }
    let backward = if config.tie_backward {
        None
    } else {
        let mut bs = Vec::with_capacity(levels.saturating_sub(1));
        for l in 1..levels {
            bs.push(gaussian_matrix(
                config.width(l),
                config.width(l + 1),
                &mut rng,
            ));
        }
        Some(bs)
    };
    WeightSet { forward, backward }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let mut m = Array2::<f64>::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    m
}

/// Per-level representations at node level `l`:
/// `u` from the plain forward pass, `y` from the corrective transform,
/// `g` the exact-goal representations (all-zero away from the goal node),
/// `q = A_{l-1} U_{l-1}`, and the cached deviations `te = y − q`,
/// `ge = u − g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub u: Mat,
    pub y: Mat,
    pub g: Mat,
    pub q: Mat,
    pub te: Mat,
    pub ge: Mat,
}

/// All representations for one batch: the input block `U_0 = Y_0` plus one
/// [`LevelState`] per node level. Levels are disjoint, so distinct levels
/// may be read and written concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub input: Mat,
    pub levels: Vec<LevelState>,
}

impl NodeState {
    /// State of node level `l` (1-based).
    pub fn level(&self, l: usize) -> &LevelState {
        &self.levels[l - 1]
    }

    pub fn level_mut(&mut self, l: usize) -> &mut LevelState {
        &mut self.levels[l - 1]
    }

    /// `U_l`, with `U_0` the input block.
    pub fn u(&self, l: usize) -> &Mat {
        if l == 0 {
            &self.input
        } else {
            &self.levels[l - 1].u
        }
    }

    /// Goal error at level `l`; the input node carries no goal, so `ge_0`
    /// is treated as zero and reads return `None` there.
    pub fn ge(&self, l: usize) -> Option<&Mat> {
        if l == 0 || l > self.levels.len() {
            None
        } else {
            Some(&self.levels[l - 1].ge)
        }
    }

    pub fn n_samples(&self) -> usize {
        self.input.ncols()
    }
}

/// Samples arranged class-major: column `(c, k)` lives at index `c·K + k`
/// with classes `0..C` and within-class indices `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatrix {
    pub data: Mat,
    pub classes: usize,
    pub per_class: usize,
}

impl ClassMatrix {
    pub fn new(data: Mat, classes: usize, per_class: usize) -> Result<Self> {
        if data.ncols() != classes * per_class {
            return Err(LpnError::ShapeMismatch {
                op: "ClassMatrix::new",
                expected: format!("{} columns", classes * per_class),
                got: format!("{}", data.ncols()),
            });
        }
        Ok(ClassMatrix {
            data,
            classes,
            per_class,
        })
    }

    pub fn col_index(&self, class: usize, k: usize) -> usize {
        class * self.per_class + k
    }

    pub fn class_of_col(&self, col: usize) -> usize {
        col / self.per_class
    }

    /// Column → class map in column order.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.data.ncols()).map(|j| self.class_of_col(j)).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }
}

/// Objective terms of one training iteration, per level plus aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub r3: Vec<f64>,
    pub r4: Vec<f64>,
    pub sparsity: Vec<f64>,
    pub total: f64,
    /// Discrimination value of the goal solver's output on this batch.
    pub goal_overlap: f64,
    /// Mean fraction of nonzero entries per column of `U_L`.
    pub mean_nnz_last: f64,
    /// Schedule mask used this iteration (+1 update, −1 hold).
    pub mask: Vec<i8>,
    pub wall_secs: f64,
    pub goal_failures: usize,
    /// Goal-propagation gap (raw, normalized) when probing is enabled.
    pub goal_gap: Option<(f64, f64)>,
}

impl IterationRecord {
    pub fn level_sum(&self) -> f64 {
        self.r1.iter().sum::<f64>()
            + self.r2.iter().sum::<f64>()
            + self.r3.iter().sum::<f64>()
            + self.r4.iter().sum::<f64>()
            + self.sparsity.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
}

impl TrainReport {
    /// Metrics CSV, schema `# lpn-metrics v1`. Wall time is excluded so two
    /// runs with the same seed emit byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# lpn-metrics v1\n");
        let levels = self
            .iterations
            .first()
            .map(|r| r.r1.len())
            .unwrap_or(0);
        out.push_str("iter,total,goal_overlap,u_last_nnz,goal_failures,gap_raw,gap_norm");
        for l in 1..=levels {
            out.push_str(&format!(",phi_l{l}"));
        }
        for l in 1..=levels {
            out.push_str(&format!(
                ",r1_l{l},r2_l{l},r3_l{l},r4_l{l},sparsity_l{l}"
            ));
        }
        out.push('\n');
        for rec in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{}",
                rec.iter, rec.total, rec.goal_overlap, rec.mean_nnz_last, rec.goal_failures
            ));
            match rec.goal_gap {
                Some((raw, norm)) => out.push_str(&format!(",{raw},{norm}")),
                None => out.push_str(",,"),
            }
            for &phi in &rec.mask {
                out.push_str(&format!(",{phi}"));
            }
            for l in 0..levels {
                out.push_str(&format!(
                    ",{},{},{},{},{}",
                    rec.r1[l], rec.r2[l], rec.r3[l], rec.r4[l], rec.sparsity[l]
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
// Magic bytes "LPNW", version u16 (little endian), then a sequence of
// matrices, each as: tag u16, rows u32, cols u32, rows·cols f64 values in
// row-major little-endian order. The tag packs a role in its high nibble and
// the level in the low 12 bits. Weight checkpoints carry roles 0 (forward
// A_level) and 1 (backward B_level); node-state files use roles 2..=8.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"LPNW";
const VERSION: u16 = 1;

const ROLE_FORWARD: u16 = 0;
const ROLE_BACKWARD: u16 = 1;
const ROLE_U: u16 = 2;
const ROLE_Y: u16 = 3;
const ROLE_G: u16 = 4;
const ROLE_Q: u16 = 5;
const ROLE_TE: u16 = 6;
const ROLE_GE: u16 = 7;
const ROLE_INPUT: u16 = 8;

fn tag(role: u16, level: usize) -> u16 {
    (role << 12) | (level as u16 & 0x0fff)
}

fn untag(t: u16) -> (u16, usize) {
    (t >> 12, (t & 0x0fff) as usize)
}

fn write_matrix<W: std::io::Write>(w: &mut W, t: u16, m: &Mat) -> Result<()> {
    w.write_all(&t.to_le_bytes())?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for row in m.rows() {
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct MatrixStream {
    entries: Vec<(u16, usize, Mat)>,
}

fn read_stream(path: &std::path::Path) -> Result<MatrixStream> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    if bytes.len() < 6 {
        return Err(LpnError::UnexpectedEof(name));
    }
    if &bytes[0..4] != MAGIC {
        return Err(LpnError::CorruptCheckpoint(format!(
            "{name}: bad magic bytes"
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(LpnError::CorruptCheckpoint(format!(
            "{name}: unsupported version {version}"
        )));
    }
    let mut pos = 6usize;
    let mut entries = Vec::new();
    while pos < bytes.len() {
        if pos + 10 > bytes.len() {
            return Err(LpnError::UnexpectedEof(name));
        }
        let t = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        let rows = u32::from_le_bytes(bytes[pos + 2..pos + 6].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[pos + 6..pos + 10].try_into().unwrap()) as usize;
        pos += 10;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| LpnError::CorruptCheckpoint(format!("{name}: matrix too large")))?;
        let byte_len = count
            .checked_mul(8)
            .ok_or_else(|| LpnError::CorruptCheckpoint(format!("{name}: matrix too large")))?;
        if pos + byte_len > bytes.len() {
            return Err(LpnError::UnexpectedEof(name));
        }
        let mut data = Vec::with_capacity(count);
        for chunk in bytes[pos..pos + byte_len].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        pos += byte_len;
        let m = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| LpnError::CorruptCheckpoint(format!("{name}: {e}")))?;
        let (role, level) = untag(t);
        entries.push((role, level, m));
    }
    Ok(MatrixStream { entries })
}

pub fn save_weights(path: &std::path::Path, weights: &WeightSet) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (l, a) in weights.forward.iter().enumerate() {
        write_matrix(&mut buf, tag(ROLE_FORWARD, l), a)?;
    }
    if let Some(bs) = &weights.backward {
        for (i, b) in bs.iter().enumerate() {
            write_matrix(&mut buf, tag(ROLE_BACKWARD, i + 1), b)?;
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(path: &std::path::Path) -> Result<WeightSet> {
    let stream = read_stream(path)?;
    let name = path.display().to_string();
    let mut forward: Vec<(usize, Mat)> = Vec::new();
    let mut backward: Vec<(usize, Mat)> = Vec::new();
    for (role, level, m) in stream.entries {
        match role {
            ROLE_FORWARD => forward.push((level, m)),
            ROLE_BACKWARD => backward.push((level, m)),
            other => {
                return Err(LpnError::CorruptCheckpoint(format!(
                    "{name}: unexpected role {other} in weight checkpoint"
                )))
            }
        }
    }
    forward.sort_by_key(|(l, _)| *l);
    backward.sort_by_key(|(l, _)| *l);
    if forward.is_empty() {
        return Err(LpnError::CorruptCheckpoint(format!(
            "{name}: no forward weights"
        )));
    }
    for (i, (l, _)) in forward.iter().enumerate() {
        if *l != i {
            return Err(LpnError::CorruptCheckpoint(format!(
                "{name}: forward levels not contiguous"
            )));
        }
    }
    let forward: Vec<Mat> = forward.into_iter().map(|(_, m)| m).collect();
    for w in forward.windows(2) {
        if w[1].ncols() != w[0].nrows() {
            return Err(LpnError::CorruptCheckpoint(format!(
                "{name}: inconsistent forward weight shapes"
            )));
        }
    }
    let backward = if backward.is_empty() {
        None
    } else {
        for (i, (l, _)) in backward.iter().enumerate() {
            if *l != i + 1 {
                return Err(LpnError::CorruptCheckpoint(format!(
                    "{name}: backward levels not contiguous"
                )));
            }
        }
        Some(backward.into_iter().map(|(_, m)| m).collect())
    };
    Ok(WeightSet { forward, backward })
}

pub fn save_node_state(path: &std::path::Path, state: &NodeState) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_matrix(&mut buf, tag(ROLE_INPUT, 0), &state.input)?;
    for (i, lv) in state.levels.iter().enumerate() {
        let l = i + 1;
        write_matrix(&mut buf, tag(ROLE_U, l), &lv.u)?;
        write_matrix(&mut buf, tag(ROLE_Y, l), &lv.y)?;
        write_matrix(&mut buf, tag(ROLE_G, l), &lv.g)?;
        write_matrix(&mut buf, tag(ROLE_Q, l), &lv.q)?;
        write_matrix(&mut buf, tag(ROLE_TE, l), &lv.te)?;
        write_matrix(&mut buf, tag(ROLE_GE, l), &lv.ge)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_node_state(path: &std::path::Path) -> Result<NodeState> {
    let stream = read_stream(path)?;
    let name = path.display().to_string();
    let mut input: Option<Mat> = None;
    let mut by_level: std::collections::BTreeMap<usize, [Option<Mat>; 6]> = Default::default();
    for (role, level, m) in stream.entries {
        if role == ROLE_INPUT {
            input = Some(m);
            continue;
        }
        let slot = match role {
            ROLE_U => 0,
            ROLE_Y => 1,
            ROLE_G => 2,
            ROLE_Q => 3,
            ROLE_TE => 4,
            ROLE_GE => 5,
            other => {
                return Err(LpnError::CorruptCheckpoint(format!(
                    "{name}: unexpected role {other} in node-state file"
                )))
            }
        };
        by_level.entry(level).or_default()[slot] = Some(m);
    }
    let input =
        input.ok_or_else(|| LpnError::CorruptCheckpoint(format!("{name}: missing input block")))?;
    let mut levels = Vec::new();
    for (expected, (level, mats)) in by_level.into_iter().enumerate() {
        if level != expected + 1 {
            return Err(LpnError::CorruptCheckpoint(format!(
                "{name}: node-state levels not contiguous"
            )));
        }
        let [u, y, g, q, te, ge] = mats;
        let missing = || LpnError::CorruptCheckpoint(format!("{name}: incomplete level {level}"));
        levels.push(LevelState {
            u: u.ok_or_else(missing)?,
            y: y.ok_or_else(missing)?,
            g: g.ok_or_else(missing)?,
            q: q.ok_or_else(missing)?,
            te: te.ok_or_else(missing)?,
            ge: ge.ok_or_else(missing)?,
        });
    }
    Ok(NodeState { input, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;

    #[test]
    fn seeded_init_is_reproducible() {
        let config = NetworkConfig::new(2, vec![3, 4], 2);
        let w1 = init_weights(&config, 7);
        let w2 = init_weights(&config, 7);
        assert_eq!(w1, w2);
        let w3 = init_weights(&config, 8);
        assert_ne!(w1, w3);
    }

    #[test]
    fn init_shapes_follow_dims() {
        let config = NetworkConfig::new(2, vec![3], 1);
        let w = init_weights(&config, 0);
        assert_eq!(w.forward[0].dim(), (3, 2));
        let mut untied = NetworkConfig::new(2, vec![3, 5], 1);
        untied.tie_backward = false;
        let w = init_weights(&untied, 0);
        assert_eq!(w.forward[0].dim(), (3, 2));
        assert_eq!(w.forward[1].dim(), (5, 3));
        let bs = w.backward.as_ref().unwrap();
        assert_eq!(bs[0].dim(), (3, 5));
    }

    #[test]
    fn gaussian_entries_have_zero_mean() {
        // Law-of-large-numbers check on the generator: 10^6 draws.
        let config = NetworkConfig::new(1000, vec![1000, 1000], 1);
        let w = init_weights(&config, 123);
        let a = &w.forward[0];
        let mean = a.sum() / a.len() as f64;
        assert!(mean.abs() < 0.01, "empirical mean {mean}");
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "empirical second moment {var}");
    }

    #[test]
    fn tied_backward_is_transpose() {
        let config = NetworkConfig::new(2, vec![3, 4], 1);
        let w = init_weights(&config, 5);
        assert!(w.is_tied());
        let b1 = w.b(1);
        assert_eq!(b1.dim(), (3, 4));
        assert_eq!(b1.to_owned(), w.forward[1].t().to_owned());
    }

    #[test]
    fn class_matrix_layout() {
        let data = Array2::from_shape_fn((2, 6), |(i, j)| (i * 10 + j) as f64);
        let cm = ClassMatrix::new(data, 3, 2).unwrap();
        assert_eq!(cm.col_index(0, 0), 0);
        assert_eq!(cm.col_index(1, 0), 2);
        assert_eq!(cm.col_index(2, 1), 5);
        assert_eq!(cm.labels(), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn weight_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lpnw");
        let mut config = NetworkConfig::new(3, vec![4, 5, 6], 2);
        config.tie_backward = false;
        let mut w = init_weights(&config, 99);
        // Exercise signed zero and subnormal round-tripping too.
        w.forward[0][[0, 0]] = -0.0;
        w.forward[0][[1, 1]] = f64::MIN_POSITIVE / 8.0;
        save_weights(&path, &w).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(w.forward.len(), loaded.forward.len());
        for (a, b) in w.forward.iter().zip(loaded.forward.iter()) {
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let (wb, lb) = (w.backward.as_ref().unwrap(), loaded.backward.as_ref().unwrap());
        for (a, b) in wb.iter().zip(lb.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lpnw");
        let config = NetworkConfig::new(2, vec![2, 2], 1);
        let w = init_weights(&config, 1);
        save_weights(&path, &w).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        match load_weights(&path) {
            Err(LpnError::CorruptCheckpoint(_)) => {}
            other => panic!("expected corrupt checkpoint, got {other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lpnw");
        let config = NetworkConfig::new(2, vec![2, 2], 1);
        let w = init_weights(&config, 1);
        save_weights(&path, &w).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_weights(&path) {
            Err(LpnError::UnexpectedEof(_)) => {}
            other => panic!("expected EOF error, got {other:?}"),
        }
    }

    #[test]
    fn csv_has_versioned_header_and_level_sum_matches_total() {
        let rec = IterationRecord {
            iter: 0,
            r1: vec![1.0, 2.0],
            r2: vec![0.5, 0.5],
            r3: vec![0.0, 0.0],
            r4: vec![0.0, 0.0],
            sparsity: vec![1.0, 1.0],
            total: 6.0,
            goal_overlap: 0.0,
            mean_nnz_last: 0.5,
            mask: vec![1, 1],
            wall_secs: 0.01,
            goal_failures: 0,
            goal_gap: None,
        };
        assert!((rec.level_sum() - rec.total).abs() <= 1e-9 * rec.total.abs());
        let report = TrainReport {
            iterations: vec![rec],
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("# lpn-metrics v1\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
