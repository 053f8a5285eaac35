//! Constraint reward from expert demonstration sets.
//!
//! A demonstration set keeps its full state matrix plus exact sufficient
//! statistics (mean vector and mean squared norm), which determine the RMS
//! set distance in O(dim) per query. The constraint reward compares a state's
//! distance to a reward-expert set against its distance to a safe-expert set
//! and maps the pair to a value strictly inside (0,1); shaping adds the value
//! to the reward and cost channels with independent coefficients.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample as index_sample;

use crate::cmdp::Trajectory;
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoLabel {
    RewardExpert,
    SafeExpert,
    Other,
}

impl DemoLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DemoLabel::RewardExpert => "reward_expert",
            DemoLabel::SafeExpert => "safe_expert",
            DemoLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<DemoLabel> {
        match s {
            "reward_expert" => Some(DemoLabel::RewardExpert),
            "safe_expert" => Some(DemoLabel::SafeExpert),
            "other" => Some(DemoLabel::Other),
            _ => None,
        }
    }
}

/// Action rows aligned 1:1 with a demo set's state rows; used by the
/// log-likelihood regularizer.
#[derive(Debug, Clone)]
pub struct DemoActions {
    pub act_dim: usize,
    rows: Vec<f64>,
}

impl DemoActions {
    pub fn count(&self) -> usize {
        if self.act_dim == 0 {
            0
        } else {
            self.rows.len() / self.act_dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.act_dim..(i + 1) * self.act_dim]
    }
}

/// Expert demonstration states with exact sufficient statistics.
#[derive(Debug, Clone)]
pub struct DemoSet {
    label: DemoLabel,
    dim: usize,
    count: usize,
    states: Vec<f64>,
    mean: Vec<f64>,
    mean_sq_norm: f64,
    actions: Option<DemoActions>,
}

impl DemoSet {
    pub fn from_rows(rows: Vec<Vec<f64>>, label: DemoLabel) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDemoSet);
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::Invalid {
                what: "DemoSet",
                why: "zero-dimensional states".into(),
            });
        }
        let mut states = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    context: "DemoSet row",
                    expected: dim,
                    actual: row.len(),
                });
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "DemoSet state",
                        index: i,
                        value: v,
                    });
                }
            }
            states.extend_from_slice(row);
        }
        let count = rows.len();
        let (mean, mean_sq_norm) = sufficient_stats(&states, count, dim);
        Ok(DemoSet {
            label,
            dim,
            count,
            states,
            mean,
            mean_sq_norm,
            actions: None,
        })
    }

    pub fn with_actions(mut self, actions: DemoActions) -> Result<Self> {
        if actions.count() != self.count {
            return Err(Error::DimMismatch {
                context: "DemoSet actions",
                expected: self.count,
                actual: actions.count(),
            });
        }
        self.actions = Some(actions);
        Ok(self)
    }

    pub fn label(&self) -> DemoLabel {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_sq_norm(&self) -> f64 {
        self.mean_sq_norm
    }

    pub fn state_row(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn actions(&self) -> Option<&DemoActions> {
        self.actions.as_ref()
    }
}

fn sufficient_stats(states: &[f64], count: usize, dim: usize) -> (Vec<f64>, f64) {
    let mut mean = vec![0.0; dim];
    let mut sq = 0.0;
    for r in 0..count {
        let row = &states[r * dim..(r + 1) * dim];
        let mut norm2 = 0.0;
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
            norm2 += v * v;
        }
        sq += norm2;
    }
    let n = count as f64;
    for m in &mut mean {
        *m /= n;
    }
    (mean, sq / n)
}

/// Shaping coefficients: CoR sensitivity `alpha`, reward coefficient
/// `lambda_r`, cost coefficient `lambda_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorParams {
    pub alpha: f64,
    pub lambda_r: f64,
    pub lambda_c: f64,
}

impl Default for CorParams {
    fn default() -> Self {
        CorParams {
            alpha: 3.0,
            lambda_r: 0.1,
            lambda_c: 0.01,
        }
    }
}

impl CorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Invalid {
                what: "CorParams.alpha",
                why: format!("alpha must be positive, got {}", self.alpha),
            });
        }
        if self.lambda_r < 0.0 || self.lambda_c < 0.0 {
            return Err(Error::Invalid {
                what: "CorParams.lambda",
                why: "shaping coefficients must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// RMS distance between a state and a demonstration set,
/// `sqrt(mean_a |s - s_a|^2)`, computed from the sufficient statistics.
pub fn set_distance(s: &[f64], set: &DemoSet) -> Result<f64> {
    if set.count == 0 {
        return Err(Error::EmptyDemoSet);
    }
    if s.len() != set.dim {
        return Err(Error::DimMismatch {
            context: "set_distance",
            expected: set.dim,
            actual: s.len(),
        });
    }
    let mut s_norm2 = 0.0;
    let mut dot = 0.0;
    for (&x, &m) in s.iter().zip(&set.mean) {
        s_norm2 += x * x;
        dot += x * m;
    }
    // Guard against negative round-off before the square root.
    let d2 = (s_norm2 - 2.0 * dot + set.mean_sq_norm).max(0.0);
    Ok(d2.sqrt())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Constraint reward from the two set distances:
/// `f(d_a) / (f(d_a) + f(d_b))` with `f(d) = (1 + d/alpha)^(-(alpha+1)/2)`,
/// evaluated in log space so extreme distances stay inside (0,1).
pub fn cor_from_distances(delta_a: f64, delta_b: f64, alpha: f64) -> f64 {
    let half_exp = (alpha + 1.0) / 2.0;
    let g_a = half_exp * (1.0 + delta_a / alpha).ln();
    let g_b = half_exp * (1.0 + delta_b / alpha).ln();
    sigmoid(g_b - g_a).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Constraint reward of a state relative to the reward-expert and safe-expert
/// demonstration sets.
pub fn cor(s: &[f64], reward_set: &DemoSet, safe_set: &DemoSet, params: &CorParams) -> Result<f64> {
    params.validate()?;
    let delta_a = set_distance(s, reward_set)?;
    let delta_b = set_distance(s, safe_set)?;
    Ok(cor_from_distances(delta_a, delta_b, params.alpha))
}

/// Returns a copy of the trajectory with every step annotated with its
/// constraint reward. Validation happens before any step is rewritten.
pub fn annotate_cor(
    traj: &Trajectory,
    reward_set: &DemoSet,
    safe_set: &DemoSet,
    params: &CorParams,
) -> Result<Trajectory> {
    let mut cors = Vec::with_capacity(traj.len());
    for step in traj.steps() {
        cors.push(cor(&step.state, reward_set, safe_set, params)?);
    }
    traj.with_cor(&cors)
}

/// Shapes the reward and cost channels of an annotated trajectory:
/// `r + lambda_r * cor` and `c + lambda_c * cor`. A channel with a zero
/// coefficient passes through unchanged.
pub fn augment(traj: &Trajectory, params: &CorParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let mut shaped_rewards = Vec::with_capacity(traj.len());
    let mut shaped_costs = Vec::with_capacity(traj.len());
    for (index, step) in traj.steps().iter().enumerate() {
        let c = step.cor.ok_or(Error::MissingCor { index })?;
        shaped_rewards.push(step.reward + params.lambda_r * c);
        shaped_costs.push(step.cost + params.lambda_c * c);
    }
    Ok((shaped_rewards, shaped_costs))
}

/// Builds a demonstration set from trajectories, keeping aligned actions.
/// When `max_states` is below the total count the rows are uniformly
/// subsampled without replacement using `subsample_seed`.
pub fn build_demo_set(
    trajectories: &[Trajectory],
    label: DemoLabel,
    max_states: Option<usize>,
    subsample_seed: u64,
) -> Result<DemoSet> {
    let total: usize = trajectories.iter().map(|t| t.len()).sum();
    if total == 0 {
        return Err(Error::EmptyDemoSet);
    }
    let mut state_rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut action_rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    for t in trajectories {
        for s in t.steps() {
            state_rows.push(s.state.to_vec());
            action_rows.push(s.action.to_vec());
        }
    }
    if let Some(k) = max_states {
        if k == 0 {
            return Err(Error::Invalid {
                what: "build_demo_set.max_states",
                why: "must be positive".into(),
            });
        }
        if k < state_rows.len() {
            let mut rng = stream_rng(subsample_seed, &[0x5e7]);
            let mut keep: Vec<usize> = index_sample(&mut rng, state_rows.len(), k).into_vec();
            keep.sort_unstable();
            state_rows = keep.iter().map(|&i| state_rows[i].clone()).collect();
            action_rows = keep.iter().map(|&i| action_rows[i].clone()).collect();
        }
    }
    let act_dim = action_rows[0].len();
    let mut flat_actions = Vec::with_capacity(action_rows.len() * act_dim);
    for row in &action_rows {
        flat_actions.extend_from_slice(row);
    }
    DemoSet::from_rows(state_rows, label)?.with_actions(DemoActions {
        act_dim,
        rows: flat_actions,
    })
}

fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the state rows as text: a `dim=.. count=.. label=..` header, then
/// one state per line with 17-significant-digit decimals. Reloading is
/// bit-exact.
pub fn save_demo_set(set: &DemoSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "dim={} count={} label={}\n",
        set.dim,
        set.count,
        set.label.as_str()
    ));
    for i in 0..set.count {
        let row = set.state_row(i);
        let line: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes the aligned action rows in the same format (dim is the action
/// dimension). Fails if the set carries no actions.
pub fn save_demo_actions(set: &DemoSet, path: &Path) -> Result<()> {
    let actions = set.actions.as_ref().ok_or_else(|| Error::Invalid {
        what: "save_demo_actions",
        why: "demo set carries no actions".into(),
    })?;
    let mut out = String::new();
    out.push_str(&format!(
        "dim={} count={} label={}\n",
        actions.act_dim,
        actions.count(),
        set.label.as_str()
    ));
    for i in 0..actions.count() {
        let line: Vec<String> = actions.row(i).iter().map(|&v| format_float(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

struct DemoHeader {
    dim: usize,
    count: usize,
    label: DemoLabel,
}

fn parse_header(line: &str, path: &Path) -> Result<DemoHeader> {
    let err = |why: String| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        why,
    };
    let mut dim = None;
    let mut count = None;
    let mut label = None;
    for field in line.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field `{field}`")))?;
        match key {
            "dim" => {
                dim = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| err(format!("bad dim: {e}")))?,
                )
            }
            "count" => {
                count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| err(format!("bad count: {e}")))?,
                )
            }
            "label" => {
                label = Some(
                    DemoLabel::parse(value)
                        .ok_or_else(|| err(format!("unknown label `{value}`")))?,
                )
            }
            other => return Err(err(format!("unknown header key `{other}`"))),
        }
    }
    Ok(DemoHeader {
        dim: dim.ok_or_else(|| err("missing dim".into()))?,
        count: count.ok_or_else(|| err("missing count".into()))?,
        label: label.ok_or_else(|| err("missing label".into()))?,
    })
}

fn load_rows(path: &Path) -> Result<(DemoHeader, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        why: "empty file".into(),
    })??;
    let header = parse_header(&header_line, path)?;
    let mut rows = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let mut row = Vec::with_capacity(header.dim);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                why: format!("bad float `{tok}`: {e}"),
            })?;
            row.push(v);
        }
        if row.len() != header.dim {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                why: format!("expected {} values, got {}", header.dim, row.len()),
            });
        }
        rows.push(row);
    }
    if rows.len() != header.count {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: rows.len() + 1,
            why: format!("header count {} but {} rows", header.count, rows.len()),
        });
    }
    Ok((header, rows))
}

/// Loads a demonstration file, recomputing the sufficient statistics from the
/// rows and verifying the header count.
pub fn load_demo_set(path: &Path) -> Result<DemoSet> {
    let (header, rows) = load_rows(path)?;
    DemoSet::from_rows(rows, header.label)
}

/// Loads an aligned action file written by [`save_demo_actions`].
pub fn load_demo_actions(path: &Path) -> Result<DemoActions> {
    let (header, rows) = load_rows(path)?;
    let mut flat = Vec::with_capacity(rows.len() * header.dim);
    for row in &rows {
        flat.extend_from_slice(row);
    }
    Ok(DemoActions {
        act_dim: header.dim,
        rows: flat,
    })
}

/// Optional observation preprocessing applied before distance queries:
/// a feature mask (indices into the raw observation) and per-dimension
/// standardization fitted on the demo sets.
#[derive(Debug, Clone, Default)]
pub struct ObsTransform {
    mask: Option<Vec<usize>>,
    standardize: Option<(Vec<f64>, Vec<f64>)>,
}

impl ObsTransform {
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = match &self.mask {
            Some(idx) => idx.iter().map(|&i| raw[i]).collect(),
            None => raw.to_vec(),
        };
        if let Some((center, scale)) = &self.standardize {
            for ((x, c), s) in v.iter_mut().zip(center).zip(scale) {
                *x = (*x - c) / s;
            }
        }
        v
    }

    pub fn is_identity(&self) -> bool {
        self.mask.is_none() && self.standardize.is_none()
    }
}

/// Bundles the two demonstration sets, the shaping parameters, and the
/// observation transform into one query object.
#[derive(Debug, Clone)]
pub struct CorEngine {
    reward_set: DemoSet,
    safe_set: DemoSet,
    params: CorParams,
    transform: ObsTransform,
    raw_dim: usize,
}

impl CorEngine {
    pub fn new(
        reward_set: &DemoSet,
        safe_set: &DemoSet,
        params: CorParams,
        feature_mask: Option<Vec<usize>>,
        standardize: bool,
    ) -> Result<Self> {
        params.validate()?;
        if reward_set.dim() != safe_set.dim() {
            return Err(Error::DimMismatch {
                context: "CorEngine demo sets",
                expected: reward_set.dim(),
                actual: safe_set.dim(),
            });
        }
        let raw_dim = reward_set.dim();
        if let Some(mask) = &feature_mask {
            if mask.is_empty() {
                return Err(Error::Invalid {
                    what: "CorEngine.feature_mask",
                    why: "mask must select at least one feature".into(),
                });
            }
            if let Some(&bad) = mask.iter().find(|&&i| i >= raw_dim) {
                return Err(Error::Invalid {
                    what: "CorEngine.feature_mask",
                    why: format!("index {bad} out of range for dim {raw_dim}"),
                });
            }
        }

        let mut transform = ObsTransform {
            mask: feature_mask,
            standardize: None,
        };
        let masked_rows = |set: &DemoSet| -> Vec<Vec<f64>> {
            (0..set.count())
                .map(|i| transform.apply(set.state_row(i)))
                .collect()
        };
        let mut rows_reward = masked_rows(reward_set);
        let mut rows_safe = masked_rows(safe_set);

        if standardize {
            let dim = rows_reward[0].len();
            let total = (rows_reward.len() + rows_safe.len()) as f64;
            let mut center = vec![0.0; dim];
            for row in rows_reward.iter().chain(rows_safe.iter()) {
                for (c, &v) in center.iter_mut().zip(row) {
                    *c += v;
                }
            }
            for c in &mut center {
                *c /= total;
            }
            let mut var = vec![0.0; dim];
            for row in rows_reward.iter().chain(rows_safe.iter()) {
                for ((v, &x), c) in var.iter_mut().zip(row).zip(&center) {
                    let d = x - c;
                    *v += d * d;
                }
            }
            let scale: Vec<f64> = var.iter().map(|&v| (v / total).sqrt().max(1e-8)).collect();
            for row in rows_reward.iter_mut().chain(rows_safe.iter_mut()) {
                for ((x, c), s) in row.iter_mut().zip(&center).zip(&scale) {
                    *x = (*x - c) / s;
                }
            }
            transform.standardize = Some((center, scale));
        }

        Ok(CorEngine {
            reward_set: DemoSet::from_rows(rows_reward, reward_set.label())?,
            safe_set: DemoSet::from_rows(rows_safe, safe_set.label())?,
            params,
            transform,
            raw_dim,
        })
    }

    pub fn params(&self) -> &CorParams {
        &self.params
    }

    pub fn raw_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn cor(&self, raw_state: &[f64]) -> Result<f64> {
        if raw_state.len() != self.raw_dim {
            return Err(Error::DimMismatch {
                context: "CorEngine::cor",
                expected: self.raw_dim,
                actual: raw_state.len(),
            });
        }
        if self.transform.is_identity() {
            cor(raw_state, &self.reward_set, &self.safe_set, &self.params)
        } else {
            let s = self.transform.apply(raw_state);
            cor(&s, &self.reward_set, &self.safe_set, &self.params)
        }
    }

    pub fn annotate(&self, traj: &Trajectory) -> Result<Trajectory> {
        let mut cors = Vec::with_capacity(traj.len());
        for step in traj.steps() {
            cors.push(self.cor(&step.state)?);
        }
        traj.with_cor(&cors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{ActionVec, StateVec, StepRecord};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(rows: Vec<Vec<f64>>) -> DemoSet {
        DemoSet::from_rows(rows, DemoLabel::Other).unwrap()
    }

    // Brute-force oracle: mean of squared distances over the stored rows.
    fn brute_force_distance(s: &[f64], set: &DemoSet) -> f64 {
        let mut acc = 0.0;
        for i in 0..set.count() {
            let row = set.state_row(i);
            let mut d2 = 0.0;
            for (&a, &b) in s.iter().zip(row) {
                d2 += (a - b) * (a - b);
            }
            acc += d2;
        }
        (acc / set.count() as f64).sqrt()
    }

    // Direct evaluation of the ratio form, independent of the log-space path.
    fn cor_oracle(delta_a: f64, delta_b: f64, alpha: f64) -> f64 {
        let f = |d: f64| (1.0 + d / alpha).powf(-(alpha + 1.0) / 2.0);
        f(delta_a) / (f(delta_a) + f(delta_b))
    }

    fn traj_from_states(states: Vec<Vec<f64>>) -> Trajectory {
        let steps: Vec<StepRecord> = states
            .into_iter()
            .map(|s| StepRecord {
                state: StateVec::new(s).unwrap(),
                action: ActionVec::new(vec![0.0]).unwrap(),
                reward: 1.0,
                cost: 0.0,
                cor: None,
                terminal: false,
                truncated: false,
            })
            .collect();
        Trajectory::new(steps, 0).unwrap()
    }

    #[test]
    fn symmetric_pair_distance_is_one() {
        let d = set_distance(&[0.0, 0.0], &set(vec![vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap();
        assert_relative_eq!(d, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn offset_pair_distance_matches_brute_force() {
        // mean of {1, 9} is 5
        let s = set(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let d = set_distance(&[2.0, 0.0], &s).unwrap();
        assert_relative_eq!(d, 5.0f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(d, brute_force_distance(&[2.0, 0.0], &s), max_relative = 1e-12);
    }

    #[test]
    fn singleton_identity_distance_is_zero() {
        let d = set_distance(&[0.5, -0.25], &set(vec![vec![0.5, -0.25]])).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = set(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            set_distance(&[1.0], &s),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn empty_set_cannot_be_built() {
        assert!(matches!(
            DemoSet::from_rows(vec![], DemoLabel::Other),
            Err(Error::EmptyDemoSet)
        ));
        assert!(matches!(
            build_demo_set(&[], DemoLabel::Other, None, 0),
            Err(Error::EmptyDemoSet)
        ));
    }

    #[test]
    fn midpoint_gives_half() {
        let a = set(vec![vec![1.0, 0.0]]);
        let b = set(vec![vec![-1.0, 0.0]]);
        let c = cor(&[0.0, 0.0], &a, &b, &CorParams::default()).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn known_distances_match_direct_evaluation() {
        let c = cor_from_distances(1.0, 2.0, 3.0);
        assert_relative_eq!(c, cor_oracle(1.0, 2.0, 3.0), max_relative = 1e-12);
        // f(1) = (4/3)^-2 = 0.5625, f(2) = (5/3)^-2 = 0.36
        assert!((c - 0.5625 / 0.9225).abs() < 1e-9);
        assert!((c - 0.609756).abs() < 1e-6);
    }

    #[test]
    fn near_reward_set_saturates_toward_one() {
        let c = cor_from_distances(0.0, 1e6, 3.0);
        assert!(c > 0.99 && c < 1.0);
        let tiny = cor_from_distances(1e6, 0.0, 3.0);
        assert!(tiny > 0.0 && tiny < 0.01);
    }

    #[test]
    fn annotate_fails_atomically_on_mismatch() {
        let a = set(vec![vec![1.0, 0.0]]);
        let b = set(vec![vec![-1.0, 0.0]]);
        let traj = traj_from_states(vec![vec![0.0, 0.0, 0.0]]);
        assert!(annotate_cor(&traj, &a, &b, &CorParams::default()).is_err());
        assert!(traj.steps().iter().all(|s| s.cor.is_none()));
    }

    #[test]
    fn states_near_reward_set_score_above_half() {
        let reward = set(vec![vec![0.0, 0.0], vec![0.2, 0.0], vec![-0.2, 0.0]]);
        let safe = set(vec![vec![10.0, 10.0], vec![10.2, 10.0]]);
        let traj = traj_from_states(vec![vec![0.1, 0.0], vec![-0.1, 0.05], vec![0.0, -0.05]]);
        let annotated = annotate_cor(&traj, &reward, &safe, &CorParams::default()).unwrap();
        for step in annotated.steps() {
            let c = step.cor.unwrap();
            assert!(c > 0.5, "expected cor above 0.5, got {c}");
            // cross-check against brute-force distances
            let da = brute_force_distance(&step.state, &reward);
            let db = brute_force_distance(&step.state, &safe);
            assert_relative_eq!(c, cor_oracle(da, db, 3.0), max_relative = 1e-9);
        }
    }

    #[test]
    fn discounted_cor_channel_matches_independent_evaluation() {
        let reward = set(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let safe = set(vec![vec![3.0, -2.0], vec![4.0, 0.5]]);
        let mut rng = crate::seeding::stream_rng(3, &[7]);
        let states: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let traj = traj_from_states(states.clone());
        let annotated = annotate_cor(&traj, &reward, &safe, &CorParams::default()).unwrap();
        let channel: Vec<f64> = annotated.steps().iter().map(|s| s.cor.unwrap()).collect();
        let got = crate::cmdp::discounted_sum(&channel, 0.99).unwrap();
        // independent evaluation: brute-force distances, ratio form, powi discounting
        let want: f64 = states
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let da = brute_force_distance(s, &reward);
                let db = brute_force_distance(s, &safe);
                0.99f64.powi(t as i32) * cor_oracle(da, db, 3.0)
            })
            .sum();
        assert_relative_eq!(got, want, max_relative = 1e-9);
    }

    #[test]
    fn zero_coefficients_leave_channels_unchanged() {
        let traj = traj_from_states(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let annotated = traj.with_cor(&[0.25, 0.75]).unwrap();
        let params = CorParams {
            alpha: 3.0,
            lambda_r: 0.0,
            lambda_c: 0.0,
        };
        let (r, c) = augment(&annotated, &params).unwrap();
        assert_eq!(r, traj.rewards());
        assert_eq!(c, traj.costs());
    }

    #[test]
    fn augment_applies_coefficients() {
        let traj = traj_from_states(vec![vec![0.0, 0.0]]);
        let annotated = traj.with_cor(&[0.5]).unwrap();
        let (r, c) = augment(&annotated, &CorParams::default()).unwrap();
        assert_relative_eq!(r[0], 1.05, max_relative = 1e-15);
        assert_relative_eq!(c[0], 0.005, max_relative = 1e-15);
    }

    #[test]
    fn augment_requires_annotation() {
        let traj = traj_from_states(vec![vec![0.0, 0.0]]);
        assert!(matches!(
            augment(&traj, &CorParams::default()),
            Err(Error::MissingCor { index: 0 })
        ));
    }

    #[test]
    fn shaped_return_decomposes_linearly() {
        let mut rng = crate::seeding::stream_rng(17, &[9]);
        let states: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let cors: Vec<f64> = (0..40).map(|_| rng.random_range(0.01..0.99)).collect();
        let traj = traj_from_states(states).with_cor(&cors).unwrap();
        let params = CorParams::default();
        let (shaped_r, _) = augment(&traj, &params).unwrap();
        let gamma = 0.99;
        let raw = crate::cmdp::discounted_sum(&traj.rewards(), gamma).unwrap();
        let cor_ret = crate::cmdp::discounted_sum(&cors, gamma).unwrap();
        let shaped = crate::cmdp::discounted_sum(&shaped_r, gamma).unwrap();
        assert_relative_eq!(shaped, raw + params.lambda_r * cor_ret, max_relative = 1e-12);
    }

    #[test]
    fn build_from_one_trajectory_keeps_all_rows() {
        let states: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let traj = traj_from_states(states);
        let set = build_demo_set(&[traj], DemoLabel::RewardExpert, None, 0).unwrap();
        assert_eq!(set.count(), 10);
        assert_relative_eq!(set.mean()[0], 4.5, max_relative = 1e-12);
        assert_eq!(set.mean()[1], 0.0);
        assert!(set.actions().is_some());
    }

    #[test]
    fn subsample_keeps_statistics_consistent() {
        let states: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64)]).collect();
        let traj = traj_from_states(states);
        let set = build_demo_set(&[traj], DemoLabel::SafeExpert, Some(5), 42).unwrap();
        assert_eq!(set.count(), 5);
        let rows: Vec<Vec<f64>> = (0..5).map(|i| set.state_row(i).to_vec()).collect();
        let (mean, m2) = sufficient_stats(&rows.concat(), 5, 2);
        assert_relative_eq!(set.mean()[0], mean[0], max_relative = 1e-12);
        assert_relative_eq!(set.mean_sq_norm(), m2, max_relative = 1e-12);
        assert_eq!(set.actions().unwrap().count(), 5);
    }

    #[test]
    fn sufficient_stats_match_brute_force_on_large_set() {
        let mut rng = crate::seeding::stream_rng(23, &[11]);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..8).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let s = set(rows);
        for _ in 0..100 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fast = set_distance(&q, &s).unwrap();
            let slow = brute_force_distance(&q, &s);
            assert_relative_eq!(fast, slow, max_relative = 1e-9);
        }
    }

    #[test]
    fn demo_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::seeding::stream_rng(31, &[13]);
        let states: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let traj = traj_from_states(states);
        let original = build_demo_set(&[traj], DemoLabel::RewardExpert, None, 0).unwrap();

        let states_path = dir.path().join("demo.txt");
        let actions_path = dir.path().join("demo_actions.txt");
        save_demo_set(&original, &states_path).unwrap();
        save_demo_actions(&original, &actions_path).unwrap();

        let loaded = load_demo_set(&states_path).unwrap();
        assert_eq!(loaded.count(), original.count());
        assert_eq!(loaded.label(), DemoLabel::RewardExpert);
        for i in 0..original.count() {
            assert_eq!(loaded.state_row(i), original.state_row(i));
        }
        assert_eq!(loaded.mean(), original.mean());
        assert_eq!(loaded.mean_sq_norm(), original.mean_sq_norm());

        let actions = load_demo_actions(&actions_path).unwrap();
        assert_eq!(actions.count(), original.count());

        // rewriting the loaded set reproduces the file bytes
        let second_path = dir.path().join("demo2.txt");
        save_demo_set(&loaded, &second_path).unwrap();
        assert_eq!(
            std::fs::read(&states_path).unwrap(),
            std::fs::read(&second_path).unwrap()
        );
    }

    #[test]
    fn loader_rejects_count_mismatch_and_bad_floats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "dim=2 count=3 label=other\n1.0 2.0\n").unwrap();
        assert!(load_demo_set(&p).is_err());
        std::fs::write(&p, "dim=2 count=1 label=other\n1.0 oops\n").unwrap();
        let err = load_demo_set(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn engine_feature_mask_restricts_distances() {
        let reward = set(vec![vec![0.0, 100.0], vec![0.0, -100.0]]);
        let safe = set(vec![vec![5.0, 100.0], vec![5.0, -100.0]]);
        let params = CorParams::default();
        // Masking to feature 0 makes the query close to the reward set only.
        let engine = CorEngine::new(&reward, &safe, params, Some(vec![0]), false).unwrap();
        let c = engine.cor(&[0.0, 42.0]).unwrap();
        assert!(c > 0.5);
        // Unmasked, the large second feature dominates both distances equally.
        let full = CorEngine::new(&reward, &safe, params, None, false).unwrap();
        let c_full = full.cor(&[0.0, 42.0]).unwrap();
        assert!(c_full > 0.5); // still closer to reward set, smaller margin
        assert!(c > c_full);
    }

    #[test]
    fn engine_standardization_rescales_features() {
        // Feature 1 has a huge spread; standardization keeps it from
        // dominating the distance.
        let reward = set(vec![vec![0.0, 1000.0], vec![0.2, -1000.0]]);
        let safe = set(vec![vec![1.0, 1000.0], vec![1.2, -1000.0]]);
        let params = CorParams::default();
        let engine = CorEngine::new(&reward, &safe, params, None, true).unwrap();
        let c = engine.cor(&[0.1, 0.0]).unwrap();
        let plain = CorEngine::new(&reward, &safe, params, None, false).unwrap();
        let c_plain = plain.cor(&[0.1, 0.0]).unwrap();
        assert!(c > c_plain, "standardized {c} <= raw {c_plain}");
        assert!(c > 0.5);
    }

    #[test]
    fn engine_rejects_bad_masks() {
        let a = set(vec![vec![1.0, 0.0]]);
        let b = set(vec![vec![-1.0, 0.0]]);
        assert!(CorEngine::new(&a, &b, CorParams::default(), Some(vec![2]), false).is_err());
        assert!(CorEngine::new(&a, &b, CorParams::default(), Some(vec![]), false).is_err());
    }

    proptest! {
        #[test]
        fn cor_stays_in_open_unit_interval(
            da in 0.0f64..1e4,
            db in 0.0f64..1e4,
            alpha in 0.1f64..10.0,
        ) {
            let c = cor_from_distances(da, db, alpha);
            prop_assert!(c > 0.0 && c < 1.0);
        }

        #[test]
        fn complement_identity_holds(
            da in 0.0f64..1e3,
            db in 0.0f64..1e3,
        ) {
            let c1 = cor_from_distances(da, db, 3.0);
            let c2 = cor_from_distances(db, da, 3.0);
            prop_assert!((c1 + c2 - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_both_distances(base in 0.0f64..50.0, fixed in 0.0f64..50.0) {
            // strictly decreasing in the first distance, increasing in the second
            let step = 0.5;
            let grid: Vec<f64> = (0..20).map(|i| base + step * i as f64).collect();
            for w in grid.windows(2) {
                prop_assert!(
                    cor_from_distances(w[1], fixed, 3.0) < cor_from_distances(w[0], fixed, 3.0)
                );
                prop_assert!(
                    cor_from_distances(fixed, w[1], 3.0) > cor_from_distances(fixed, w[0], 3.0)
                );
            }
        }

        #[test]
        fn stats_path_matches_brute_force(
            rows in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4), 1..40),
            query in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let s = set(rows);
            let fast = set_distance(&query, &s).unwrap();
            let slow = brute_force_distance(&query, &s);
            prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow));
        }
    }
}
