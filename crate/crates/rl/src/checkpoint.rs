//! Plain-text policy checkpoints.
//!
//! ```text
//! eestab-policy 1
//! sizes 95 64 64 2
//! history 5
//! action_scale 0.5
//! log_std -1.0 -1.0
//! obs_scale <one value per input>
//! layer 0 64 95
//! <64 lines of 95 weights, row-major>
//! bias 0
//! <64 values on one line>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so a load reproduces the
//! saved policy bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::RlError;
use crate::net::Mlp;
use crate::policy::PolicyNet;

pub const MAGIC: &str = "eestab-policy";
pub const VERSION: u32 = 1;

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

pub fn to_string(policy: &PolicyNet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let sizes: Vec<String> = policy.actor.sizes().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "sizes {}", sizes.join(" "));
    let _ = writeln!(s, "history {}", policy.history);
    let _ = writeln!(s, "action_scale {:?}", policy.action_scale);
    let _ = writeln!(s, "log_std {}", join(policy.log_std.iter().copied()));
    let _ = writeln!(s, "obs_scale {}", join(policy.obs_scale.iter().copied()));
    for (l, (w, b)) in policy.actor.layers().enumerate() {
        let _ = writeln!(s, "layer {l} {} {}", w.nrows(), w.ncols());
        for i in 0..w.nrows() {
            let _ = writeln!(s, "{}", join(w.row(i).iter().copied()));
        }
        let _ = writeln!(s, "bias {l}");
        let _ = writeln!(s, "{}", join(b.iter().copied()));
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> RlError {
        RlError::Checkpoint {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str, RlError> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                return Ok(l);
            }
        }
        Err(self.err("unexpected end of file"))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>, RlError> {
        let l = self.next_line()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn floats(&self, fields: &[&str], expected: usize) -> Result<Vec<f64>, RlError> {
        if fields.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| self.err(format!("bad number `{f}`: {e}"))))
            .collect()
    }

    fn usizes(&self, fields: &[&str]) -> Result<Vec<usize>, RlError> {
        fields
            .iter()
            .map(|f| f.parse::<usize>().map_err(|e| self.err(format!("bad integer `{f}`: {e}"))))
            .collect()
    }
}

pub fn from_str(text: &str) -> Result<PolicyNet, RlError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.keyed(MAGIC)?;
    if header != [VERSION.to_string().as_str()] {
        return Err(lines.err(format!("unsupported version {header:?}")));
    }
    let sizes = lines.keyed("sizes")?;
    let sizes = lines.usizes(&sizes)?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(lines.err("need at least two positive layer widths"));
    }
    let history = lines.keyed("history")?;
    let history = *lines.usizes(&history)?.first().ok_or_else(|| lines.err("missing history"))?;
    let scale = lines.keyed("action_scale")?;
    let action_scale = lines.floats(&scale, 1)?[0];
    let dof = *sizes.last().expect("checked");
    let log_std = lines.keyed("log_std")?;
    let log_std = lines.floats(&log_std, dof)?;
    let obs_scale = lines.keyed("obs_scale")?;
    let obs_scale = lines.floats(&obs_scale, sizes[0])?;

    let mut actor = Mlp::zeros(&sizes);
    let mut flat = Vec::with_capacity(actor.num_params());
    for (l, w) in sizes.windows(2).enumerate() {
        let head = lines.keyed("layer")?;
        if lines.usizes(&head)? != [l, w[1], w[0]] {
            return Err(lines.err(format!("expected `layer {l} {} {}`", w[1], w[0])));
        }
        for _ in 0..w[1] {
            let row: Vec<&str> = lines.next_line()?.split_whitespace().collect();
            flat.extend(lines.floats(&row, w[0])?);
        }
        let head = lines.keyed("bias")?;
        if lines.usizes(&head)? != [l] {
            return Err(lines.err(format!("expected `bias {l}`")));
        }
        let row: Vec<&str> = lines.next_line()?.split_whitespace().collect();
        flat.extend(lines.floats(&row, w[1])?);
    }
    actor.set_flat(&flat);
    let policy = PolicyNet {
        actor,
        log_std: DVector::from_vec(log_std),
        action_scale,
        obs_scale: DVector::from_vec(obs_scale),
        history,
    };
    if !policy.is_finite() || !(action_scale > 0.0) {
        return Err(lines.err("non-finite parameters or non-positive action scale"));
    }
    Ok(policy)
}

pub fn save(policy: &PolicyNet, path: &Path) -> Result<(), RlError> {
    Ok(std::fs::write(path, to_string(policy))?)
}

pub fn load(path: &Path) -> Result<PolicyNet, RlError> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PolicyNet::new(2, &[6, 5], 0.5, -1.0, &mut rng);
        let text = to_string(&p);
        assert_eq!(from_str(&text).unwrap(), p);
    }

    #[test]
    fn rejects_truncated_and_wrong_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PolicyNet::new(1, &[3], 0.5, -1.0, &mut rng);
        let text = to_string(&p);
        let cut: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_str(&cut), Err(RlError::Checkpoint { .. })));
        let bumped = text.replacen("eestab-policy 1", "eestab-policy 9", 1);
        assert!(matches!(from_str(&bumped), Err(RlError::Checkpoint { line: 1, .. })));
    }
}
