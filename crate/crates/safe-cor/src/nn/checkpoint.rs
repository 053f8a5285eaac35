//! Text checkpoints for the policy and the two value heads. Values are
//! written with 17 significant digits so save/load round-trips are bit-exact.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::mlp::{param_count, Mlp};
use crate::nn::policy::GaussianPolicy;

const MAGIC: &str = "safe-cor-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: GaussianPolicy,
    pub value_reward: Mlp,
    pub value_cost: Mlp,
}

impl Checkpoint {
    pub fn hidden_dims(&self) -> Vec<usize> {
        let dims = self.policy.mean_net().dims();
        dims[1..dims.len() - 1].to_vec()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let policy = &ckpt.policy;
    let hidden: Vec<String> = ckpt.hidden_dims().iter().map(|d| d.to_string()).collect();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!(
        "obs_dim={} act_dim={} hidden={} log_std_min={:.16e} log_std_max={:.16e}\n",
        policy.obs_dim(),
        policy.act_dim(),
        hidden.join(","),
        policy.log_std_min,
        policy.log_std_max,
    ));
    let section = |name: &str, values: &[f64], out: &mut String| {
        out.push_str(&format!("section={} count={}\n", name, values.len()));
        for v in values {
            out.push_str(&format!("{v:.16e}\n"));
        }
    };
    section("policy_mean", policy.mean_net().params(), &mut out);
    section("log_std", policy.log_std(), &mut out);
    section("value_reward", ckpt.value_reward.params(), &mut out);
    section("value_cost", ckpt.value_cost.params(), &mut out);
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

struct LineReader {
    path: String,
    lines: std::io::Lines<BufReader<std::fs::File>>,
    lineno: usize,
}

impl LineReader {
    fn next(&mut self) -> Result<String> {
        self.lineno += 1;
        match self.lines.next() {
            Some(line) => Ok(line?),
            None => Err(self.err("unexpected end of file".into())),
        }
    }

    fn err(&self, why: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.lineno,
            why,
        }
    }
}

fn parse_kv<'a>(field: &'a str, key: &str, r: &LineReader) -> Result<&'a str> {
    field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| r.err(format!("expected `{key}=...`, got `{field}`")))
}

fn read_section(r: &mut LineReader, name: &str, expected: usize) -> Result<Vec<f64>> {
    let header = r.next()?;
    let mut fields = header.split_whitespace();
    let sec = parse_kv(fields.next().unwrap_or(""), "section", r)?;
    if sec != name {
        return Err(r.err(format!("expected section `{name}`, got `{sec}`")));
    }
    let count: usize = parse_kv(fields.next().unwrap_or(""), "count", r)?
        .parse()
        .map_err(|e| r.err(format!("bad count: {e}")))?;
    if count != expected {
        return Err(r.err(format!(
            "section `{name}`: count {count} does not match shapes ({expected})"
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let line = r.next()?;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e| r.err(format!("bad float `{line}`: {e}")))?;
        values.push(v);
    }
    Ok(values)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut r = LineReader {
        path: path.display().to_string(),
        lines: BufReader::new(file).lines(),
        lineno: 0,
    };
    let magic = r.next()?;
    if magic != MAGIC {
        return Err(r.err(format!("bad magic line `{magic}`")));
    }
    let header = r.next()?;
    let mut obs_dim = None;
    let mut act_dim = None;
    let mut hidden: Option<Vec<usize>> = None;
    let mut log_std_min = None;
    let mut log_std_max = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| r.err(format!("malformed header field `{field}`")))?;
        let bad = |e: String| r.err(format!("bad {key}: {e}"));
        match key {
            "obs_dim" => obs_dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "act_dim" => act_dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "hidden" => {
                let dims: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|t| t.parse::<usize>()).collect();
                hidden = Some(dims.map_err(|e| bad(e.to_string()))?);
            }
            "log_std_min" => {
                log_std_min = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?)
            }
            "log_std_max" => {
                log_std_max = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?)
            }
            other => return Err(r.err(format!("unknown header key `{other}`"))),
        }
    }
    let obs_dim = obs_dim.ok_or_else(|| r.err("missing obs_dim".into()))?;
    let act_dim = act_dim.ok_or_else(|| r.err("missing act_dim".into()))?;
    let hidden = hidden.ok_or_else(|| r.err("missing hidden".into()))?;
    let log_std_min = log_std_min.ok_or_else(|| r.err("missing log_std_min".into()))?;
    let log_std_max = log_std_max.ok_or_else(|| r.err("missing log_std_max".into()))?;

    let mut policy_dims = Vec::with_capacity(hidden.len() + 2);
    policy_dims.push(obs_dim);
    policy_dims.extend_from_slice(&hidden);
    policy_dims.push(act_dim);
    let mut value_dims = policy_dims.clone();
    *value_dims.last_mut().unwrap() = 1;

    let mean_params = read_section(&mut r, "policy_mean", param_count(&policy_dims))?;
    let log_std = read_section(&mut r, "log_std", act_dim)?;
    let vr_params = read_section(&mut r, "value_reward", param_count(&value_dims))?;
    let vc_params = read_section(&mut r, "value_cost", param_count(&value_dims))?;

    let mut mean_net = Mlp::zeros("policy_mean", &policy_dims)?;
    mean_net.set_params(&mean_params)?;
    let mut value_reward = Mlp::zeros("value_reward", &value_dims)?;
    value_reward.set_params(&vr_params)?;
    let mut value_cost = Mlp::zeros("value_cost", &value_dims)?;
    value_cost.set_params(&vc_params)?;
    let policy = GaussianPolicy::from_parts(mean_net, log_std, log_std_min, log_std_max)?;
    Ok(Checkpoint {
        policy,
        value_reward,
        value_cost,
    })
}
