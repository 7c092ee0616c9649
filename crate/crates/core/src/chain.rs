//! Fixed-base serial chain description.
//!
//! A [`ChainModel`] is an ordered list of revolute joints, one rigid link per
//! joint, and a rigid end-effector offset on the last link. Joint `i` sits in
//! the frame of link `i - 1` (the base frame for `i = 0`):
//!
//! ```text
//! T_link(i) = T_link(i-1) * Trans(origin_translation) * Rot(origin_rotation) * Rot(axis, q_i)
//! T_ee      = T_link(n-1) * ee_offset
//! ```
//!
//! The on-disk format is documented in `docs/chain-format.md` and implemented
//! by [`parse_chain`] / [`serialize_chain`].

use std::fmt::{self, Write as _};

use nalgebra::{Isometry3, Matrix3, Quaternion, SymmetricEigen, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

const AXIS_TOL: f64 = 1e-9;
const QUAT_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// Rotation axis in the joint frame (unit).
    pub axis: Vector3<f64>,
    pub origin_translation: Vector3<f64>,
    pub origin_rotation: UnitQuaternion<f64>,
    /// `(lower, upper)` in rad.
    pub position_limits: (f64, f64),
    pub torque_limit: f64,
    pub viscous_damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub mass: f64,
    /// COM position in the link frame.
    pub com_offset: Vector3<f64>,
    /// Rotational inertia about the COM, link-frame axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    pub joints: Vec<JointSpec>,
    pub links: Vec<LinkSpec>,
    pub ee_offset: Isometry3<f64>,
}

impl ChainModel {
    /// Degrees of freedom.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of links (equal to the DoF count for a serial chain).
    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn torque_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.torque_limit).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }
}

/// A single failed invariant, reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Field path such as `joints[1].axis`.
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("semantic error at {path}: {message}")]
    Semantic { path: String, message: String },
    #[error("invalid chain model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("no builtin toy arm with {0} DoF (supported: 1, 2, 4)")]
    UnsupportedDof(usize),
}

/// Checks every type invariant and returns the list of violations (empty iff valid).
pub fn validate(model: &ChainModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, rule: &str| {
        out.push(Violation {
            field,
            rule: rule.to_string(),
        })
    };

    if model.joints.is_empty() {
        push("joints".into(), "at least one joint required");
    }
    if model.joints.len() != model.links.len() {
        push(
            "links".into(),
            "joint and link counts differ",
        );
    }

    for (i, j) in model.joints.iter().enumerate() {
        let p = |f: &str| format!("joints[{i}].{f}");
        if !finite3(&j.axis) {
            push(p("axis"), "non-finite value");
        } else if (j.axis.norm() - 1.0).abs() > AXIS_TOL {
            push(p("axis"), "axis not unit");
        }
        if !finite3(&j.origin_translation) {
            push(p("origin_translation"), "non-finite value");
        }
        let qn = j.origin_rotation.quaternion().norm();
        if !qn.is_finite() || (qn - 1.0).abs() > QUAT_TOL {
            push(p("origin_rotation"), "quaternion not unit");
        }
        let (lo, hi) = j.position_limits;
        if !(lo.is_finite() && hi.is_finite()) {
            push(p("position_limits"), "non-finite value");
        } else if lo >= hi {
            push(p("position_limits"), "lower limit not below upper limit");
        }
        if !(j.torque_limit.is_finite() && j.torque_limit > 0.0) {
            push(p("torque_limit"), "torque limit must be positive");
        }
        if !(j.viscous_damping.is_finite() && j.viscous_damping >= 0.0) {
            push(p("viscous_damping"), "damping must be non-negative");
        }
    }

    for (i, l) in model.links.iter().enumerate() {
        let p = |f: &str| format!("links[{i}].{f}");
        if !(l.mass.is_finite() && l.mass > 0.0) {
            push(p("mass"), "mass must be positive");
        }
        if !finite3(&l.com_offset) {
            push(p("com_offset"), "non-finite value");
        }
        for rule in inertia_violations(&l.inertia) {
            push(p("inertia"), rule);
        }
    }

    let ee_q = model.ee_offset.rotation.quaternion().norm();
    if !finite3(&model.ee_offset.translation.vector) || (ee_q - 1.0).abs() > QUAT_TOL {
        push("end_effector".into(), "invalid rigid transform");
    }
    out
}

fn finite3(v: &Vector3<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn inertia_violations(inertia: &Matrix3<f64>) -> Vec<&'static str> {
    if inertia.iter().any(|x| !x.is_finite()) {
        return vec!["non-finite value"];
    }
    let mut out = Vec::new();
    if (inertia - inertia.transpose()).abs().max() > SYMMETRY_TOL {
        out.push("inertia not symmetric");
        return out;
    }
    let eig = SymmetricEigen::new(*inertia).eigenvalues;
    if eig.iter().any(|&e| e <= 0.0) {
        out.push("inertia not positive definite");
        return out;
    }
    let (a, b, c) = (eig[0], eig[1], eig[2]);
    // Relative slack so that exact equality cases (thin rods, flat plates) pass.
    let slack = 1e-12 * (a + b + c);
    if a + b < c - slack || a + c < b - slack || b + c < a - slack {
        out.push("triangle inequality on principal moments violated");
    }
    out
}

/// Bent-elbow working configuration used for the builtin arms' benchmarks.
pub fn builtin_nominal_q(n: usize) -> Option<Vec<f64>> {
    match n {
        1 => Some(vec![0.3]),
        2 => Some(vec![0.4, 0.8]),
        4 => Some(vec![0.2, 0.5, -0.3, 0.9]),
        _ => None,
    }
}

/// Reference models used throughout tests and experiments.
///
/// * `n = 1`: pendulum about the base y-axis hanging along -z. Unit mass, 1 m
///   link, COM 0.5 m from the pivot.
/// * `n = 2`: planar arm in the base xy-plane, z-axes, unit masses, unit link
///   lengths, EE at the tip of link 2.
/// * `n = 4`: spatial arm with axes alternating z, y, z, y and 0.3 m links along x.
///
/// Links are uniform boxes with a 5 cm square cross-section.
pub fn builtin_toy_arm(n: usize) -> Result<ChainModel, ChainError> {
    match n {
        1 => {
            let joint = revolute(Vector3::y(), Vector3::zeros(), (-3.0, 3.0), 40.0);
            let link = LinkSpec {
                mass: 1.0,
                com_offset: Vector3::new(0.0, 0.0, -0.5),
                inertia: box_inertia(1.0, Vector3::new(0.05, 0.05, 1.0)),
            };
            Ok(ChainModel {
                joints: vec![joint],
                links: vec![link],
                ee_offset: Isometry3::translation(0.0, 0.0, -1.0),
            })
        }
        2 => {
            let j0 = revolute(Vector3::z(), Vector3::zeros(), (-3.0, 3.0), 80.0);
            let j1 = revolute(Vector3::z(), Vector3::new(1.0, 0.0, 0.0), (-2.8, 2.8), 80.0);
            let link = LinkSpec {
                mass: 1.0,
                com_offset: Vector3::new(0.5, 0.0, 0.0),
                inertia: box_inertia(1.0, Vector3::new(1.0, 0.05, 0.05)),
            };
            Ok(ChainModel {
                joints: vec![j0, j1],
                links: vec![link.clone(), link],
                ee_offset: Isometry3::translation(1.0, 0.0, 0.0),
            })
        }
        4 => {
            let len = 0.3;
            let axes = [Vector3::z(), Vector3::y(), Vector3::z(), Vector3::y()];
            let joints = axes
                .iter()
                .enumerate()
                .map(|(i, &axis)| {
                    let origin = if i == 0 {
                        Vector3::zeros()
                    } else {
                        Vector3::new(len, 0.0, 0.0)
                    };
                    revolute(axis, origin, (-2.8, 2.8), 40.0)
                })
                .collect();
            let masses = [0.8, 0.6, 0.4, 0.3];
            let links = masses
                .iter()
                .map(|&m| LinkSpec {
                    mass: m,
                    com_offset: Vector3::new(len / 2.0, 0.0, 0.0),
                    inertia: box_inertia(m, Vector3::new(len, 0.05, 0.05)),
                })
                .collect();
            Ok(ChainModel {
                joints,
                links,
                ee_offset: Isometry3::translation(len, 0.0, 0.0),
            })
        }
        other => Err(ChainError::UnsupportedDof(other)),
    }
}

fn revolute(axis: Vector3<f64>, origin: Vector3<f64>, limits: (f64, f64), torque_limit: f64) -> JointSpec {
    JointSpec {
        axis,
        origin_translation: origin,
        origin_rotation: UnitQuaternion::identity(),
        position_limits: limits,
        torque_limit,
        viscous_damping: 0.0,
    }
}

/// Inertia of a solid box with edge lengths `dims` about its centroid.
pub fn box_inertia(mass: f64, dims: Vector3<f64>) -> Matrix3<f64> {
    let (x2, y2, z2) = (dims.x * dims.x, dims.y * dims.y, dims.z * dims.z);
    Matrix3::from_diagonal(&Vector3::new(y2 + z2, x2 + z2, x2 + y2)) * (mass / 12.0)
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Joint,
    Link,
    EndEffector,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Joint => "joint",
            Section::Link => "link",
            Section::EndEffector => "end_effector",
        }
    }
}

struct Entry {
    key: String,
    values: Vec<f64>,
    line: usize,
    value_col: usize,
}

struct Block {
    section: Section,
    line: usize,
    entries: Vec<Entry>,
}

impl Block {
    fn take(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

/// Parses a chain description. See `docs/chain-format.md` for the grammar.
pub fn parse_chain(text: &str) -> Result<ChainModel, ChainError> {
    let blocks = tokenize(text)?;

    let mut joints = Vec::new();
    let mut links = Vec::new();
    let mut ee: Option<Isometry3<f64>> = None;
    let mut expect = Section::Joint;

    for block in &blocks {
        let syntax = |msg: String| ChainError::Syntax {
            line: block.line,
            column: 1,
            message: msg,
        };
        if ee.is_some() {
            return Err(syntax("no blocks allowed after [end_effector]".into()));
        }
        match (block.section, expect) {
            (Section::Joint, Section::Joint) => {
                joints.push(joint_from_block(block, joints.len())?);
                expect = Section::Link;
            }
            (Section::Link, Section::Link) => {
                links.push(link_from_block(block, links.len())?);
                expect = Section::Joint;
            }
            (Section::EndEffector, Section::Joint) if !joints.is_empty() => {
                ee = Some(ee_from_block(block)?);
            }
            (found, wanted) => {
                if joints.is_empty() && found == Section::EndEffector {
                    return Err(syntax("no joints defined".into()));
                }
                return Err(syntax(format!(
                    "unexpected [{}] block, expected [{}]",
                    found.name(),
                    wanted.name()
                )));
            }
        }
    }

    let last_line = text.lines().count().max(1);
    if joints.is_empty() {
        return Err(ChainError::Syntax {
            line: last_line,
            column: 1,
            message: "no joints defined".into(),
        });
    }
    if links.len() != joints.len() {
        return Err(ChainError::Syntax {
            line: last_line,
            column: 1,
            message: format!("[joint] #{} has no matching [link] block", joints.len() - 1),
        });
    }
    let Some(ee_offset) = ee else {
        return Err(ChainError::Syntax {
            line: last_line,
            column: 1,
            message: "missing [end_effector] block".into(),
        });
    };

    let model = ChainModel {
        joints,
        links,
        ee_offset,
    };
    if let Some(v) = validate(&model).into_iter().next() {
        return Err(ChainError::Semantic {
            path: v.field,
            message: v.rule,
        });
    }
    Ok(model)
}

fn tokenize(text: &str) -> Result<Vec<Block>, ChainError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        if trimmed.starts_with('[') {
            let section = match trimmed {
                "[joint]" => Section::Joint,
                "[link]" => Section::Link,
                "[end_effector]" => Section::EndEffector,
                other => {
                    return Err(ChainError::Syntax {
                        line: line_no,
                        column: indent + 1,
                        message: format!("unknown section {other}"),
                    })
                }
            };
            blocks.push(Block {
                section,
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some(eq) = content.find('=') else {
            return Err(ChainError::Syntax {
                line: line_no,
                column: indent + 1,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ChainError::Syntax {
                line: line_no,
                column: indent + 1,
                message: format!("invalid key `{key}`"),
            });
        }
        let Some(block) = blocks.last_mut() else {
            return Err(ChainError::Syntax {
                line: line_no,
                column: indent + 1,
                message: "key outside of any section".into(),
            });
        };
        if block.entries.iter().any(|e| e.key == key) {
            return Err(ChainError::Syntax {
                line: line_no,
                column: indent + 1,
                message: format!("duplicate key `{key}`"),
            });
        }

        let mut values = Vec::new();
        let mut offset = eq + 1;
        for part in content[eq + 1..].split(',') {
            let lead = part.len() - part.trim_start().len();
            let tok = part.trim();
            let col = offset + lead + 1;
            let v: f64 = tok.parse().map_err(|_| ChainError::Syntax {
                line: line_no,
                column: col,
                message: format!("invalid number `{tok}`"),
            })?;
            values.push(v);
            offset += part.len() + 1;
        }
        let value_col = eq + 2;
        block.entries.push(Entry {
            key: key.to_string(),
            values,
            line: line_no,
            value_col,
        });
    }
    Ok(blocks)
}

fn check_keys(block: &Block, allowed: &[&str]) -> Result<(), ChainError> {
    for e in &block.entries {
        if !allowed.contains(&e.key.as_str()) {
            return Err(ChainError::Syntax {
                line: e.line,
                column: 1,
                message: format!("unknown key `{}` in [{}]", e.key, block.section.name()),
            });
        }
    }
    Ok(())
}

fn arity(e: &Entry, n: usize) -> Result<&[f64], ChainError> {
    if e.values.len() != n {
        return Err(ChainError::Syntax {
            line: e.line,
            column: e.value_col,
            message: format!("`{}` expects {} values, found {}", e.key, n, e.values.len()),
        });
    }
    Ok(&e.values)
}

fn required<'a>(block: &'a Block, key: &str, path: &str) -> Result<&'a Entry, ChainError> {
    block.take(key).ok_or_else(|| ChainError::Semantic {
        path: format!("{path}.{key}"),
        message: "missing required field".into(),
    })
}

fn vec3_or(block: &Block, key: &str, default: Vector3<f64>) -> Result<Vector3<f64>, ChainError> {
    match block.take(key) {
        Some(e) => Ok(Vector3::from_column_slice(arity(e, 3)?)),
        None => Ok(default),
    }
}

fn quat_or_identity(block: &Block, key: &str, path: &str) -> Result<UnitQuaternion<f64>, ChainError> {
    match block.take(key) {
        Some(e) => {
            let v = arity(e, 4)?;
            let q = Quaternion::new(v[0], v[1], v[2], v[3]);
            if (q.norm() - 1.0).abs() > QUAT_TOL {
                return Err(ChainError::Semantic {
                    path: format!("{path}.{key}"),
                    message: "quaternion not unit".into(),
                });
            }
            Ok(UnitQuaternion::new_unchecked(q))
        }
        None => Ok(UnitQuaternion::identity()),
    }
}

fn joint_from_block(block: &Block, index: usize) -> Result<JointSpec, ChainError> {
    let path = format!("joints[{index}]");
    check_keys(
        block,
        &[
            "axis",
            "origin_translation",
            "origin_rotation",
            "position_limits",
            "torque_limit",
            "viscous_damping",
        ],
    )?;
    let axis = Vector3::from_column_slice(arity(required(block, "axis", &path)?, 3)?);
    let limits = arity(required(block, "position_limits", &path)?, 2)?;
    let torque_limit = arity(required(block, "torque_limit", &path)?, 1)?[0];
    let viscous_damping = match block.take("viscous_damping") {
        Some(e) => arity(e, 1)?[0],
        None => 0.0,
    };
    Ok(JointSpec {
        axis,
        origin_translation: vec3_or(block, "origin_translation", Vector3::zeros())?,
        origin_rotation: quat_or_identity(block, "origin_rotation", &path)?,
        position_limits: (limits[0], limits[1]),
        torque_limit,
        viscous_damping,
    })
}

fn link_from_block(block: &Block, index: usize) -> Result<LinkSpec, ChainError> {
    let path = format!("links[{index}]");
    check_keys(block, &["mass", "com_offset", "inertia"])?;
    let mass = arity(required(block, "mass", &path)?, 1)?[0];
    let inertia = arity(required(block, "inertia", &path)?, 9)?;
    Ok(LinkSpec {
        mass,
        com_offset: vec3_or(block, "com_offset", Vector3::zeros())?,
        inertia: Matrix3::from_row_slice(inertia),
    })
}

fn ee_from_block(block: &Block) -> Result<Isometry3<f64>, ChainError> {
    check_keys(block, &["translation", "rotation"])?;
    let t = vec3_or(block, "translation", Vector3::zeros())?;
    let r = quat_or_identity(block, "rotation", "end_effector")?;
    Ok(Isometry3::from_parts(Translation3::from(t), r))
}

/// Canonical text form; `parse_chain(&serialize_chain(m))` reproduces `m` exactly.
pub fn serialize_chain(model: &ChainModel) -> String {
    fn list(values: &[f64]) -> String {
        values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
    }
    fn quat(q: &UnitQuaternion<f64>) -> String {
        let q = q.quaternion();
        list(&[q.w, q.i, q.j, q.k])
    }

    let mut s = String::new();
    for (i, (j, l)) in model.joints.iter().zip(&model.links).enumerate() {
        if i > 0 {
            s.push('\n');
        }
        let _ = writeln!(s, "[joint]");
        let _ = writeln!(s, "axis = {}", list(j.axis.as_slice()));
        let _ = writeln!(s, "origin_translation = {}", list(j.origin_translation.as_slice()));
        let _ = writeln!(s, "origin_rotation = {}", quat(&j.origin_rotation));
        let _ = writeln!(s, "position_limits = {}", list(&[j.position_limits.0, j.position_limits.1]));
        let _ = writeln!(s, "torque_limit = {:?}", j.torque_limit);
        let _ = writeln!(s, "viscous_damping = {:?}", j.viscous_damping);
        let _ = writeln!(s, "\n[link]");
        let _ = writeln!(s, "mass = {:?}", l.mass);
        let _ = writeln!(s, "com_offset = {}", list(l.com_offset.as_slice()));
        let rows: Vec<f64> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| l.inertia[(r, c)])
            .collect();
        let _ = writeln!(s, "inertia = {}", list(&rows));
    }
    let _ = writeln!(s, "\n[end_effector]");
    let _ = writeln!(s, "translation = {}", list(model.ee_offset.translation.vector.as_slice()));
    let _ = writeln!(s, "rotation = {}", quat(&model.ee_offset.rotation));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    const TWO_JOINT: &str = include_str!("../../../docs/examples/two_link.chain");

    #[test]
    fn canonical_two_joint_document_parses() {
        let m = parse_chain(TWO_JOINT).unwrap();
        assert_eq!(m.dof(), 2);
        assert!(validate(&m).is_empty());
        assert_eq!(m, builtin_toy_arm(2).unwrap());
    }

    #[test]
    fn empty_document_is_rejected() {
        match parse_chain("") {
            Err(ChainError::Syntax { message, .. }) => assert_eq!(message, "no joints defined"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_chain("# only a comment\n\n") {
            Err(ChainError::Syntax { message, .. }) => assert_eq!(message, "no joints defined"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtins_validate() {
        for n in [1, 2, 4] {
            let m = builtin_toy_arm(n).unwrap();
            assert_eq!(m.dof(), n);
            assert!(validate(&m).is_empty(), "n={n}: {:?}", validate(&m));
        }
        assert_eq!(builtin_toy_arm(3), Err(ChainError::UnsupportedDof(3)));
    }

    #[test]
    fn unnormalized_axis_is_one_violation() {
        let mut m = builtin_toy_arm(2).unwrap();
        m.joints[1].axis = Vector3::new(1.0, 1.0, 0.0);
        let v = validate(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "joints[1].axis");
        assert_eq!(v[0].rule, "axis not unit");
    }

    #[test]
    fn rotated_thin_inertia_breaks_triangle_inequality() {
        // Principal moments (1, 1, 3) hidden behind a generic rotation.
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let r = rot.matrix();
        let mut inertia = r * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 3.0)) * r.transpose();
        inertia = (inertia + inertia.transpose()) * 0.5;
        let eig = SymmetricEigen::new(inertia).eigenvalues;
        let mut sorted: Vec<f64> = eig.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[0] + sorted[1] < sorted[2]);

        let mut m = builtin_toy_arm(2).unwrap();
        m.links[0].inertia = inertia;
        let v = validate(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "links[0].inertia");
        assert!(v[0].rule.contains("triangle inequality"));
    }

    #[test]
    fn every_invariant_has_a_failing_fixture() {
        type Breaker = fn(&mut ChainModel);
        let cases: Vec<(&str, &str, Breaker)> = vec![
            ("joints[0].axis", "axis not unit", |m| m.joints[0].axis *= 2.0),
            ("joints[0].position_limits", "lower limit", |m| {
                m.joints[0].position_limits = (1.0, 1.0)
            }),
            ("joints[1].torque_limit", "positive", |m| m.joints[1].torque_limit = 0.0),
            ("joints[0].viscous_damping", "non-negative", |m| {
                m.joints[0].viscous_damping = -0.1
            }),
            ("links[1].mass", "positive", |m| m.links[1].mass = 0.0),
            ("links[0].inertia", "symmetric", |m| m.links[0].inertia[(0, 1)] = 1e-3),
            ("links[0].inertia", "positive definite", |m| {
                m.links[0].inertia = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -0.5))
            }),
            ("links", "counts differ", |m| {
                m.links.pop();
            }),
            ("joints", "at least one", |m| {
                m.joints.clear();
                m.links.clear();
            }),
        ];
        for (field, rule, breaker) in cases {
            let mut m = builtin_toy_arm(2).unwrap();
            breaker(&mut m);
            let v = validate(&m);
            assert!(
                v.iter().any(|x| x.field == field && x.rule.contains(rule)),
                "expected {field}/{rule}, got {v:?}"
            );
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let doc = TWO_JOINT.replacen("mass = 1.0", "mass = 1.0\ncolour = 3", 1);
        match parse_chain(&doc) {
            Err(ChainError::Syntax { line, message, .. }) => {
                assert!(message.contains("colour"));
                let expected = doc.lines().position(|l| l.starts_with("colour")).unwrap() + 1;
                assert_eq!(line, expected);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_column() {
        let doc = "[joint]\naxis = 0, x0, 1\n";
        match parse_chain(doc) {
            Err(ChainError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_mass_names_the_field() {
        let doc = TWO_JOINT.replacen("mass = 1.0\n", "", 1);
        match parse_chain(&doc) {
            Err(ChainError::Semantic { path, .. }) => assert_eq!(path, "links[0].mass"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_unit_axis_in_document_is_semantic_error() {
        let doc = TWO_JOINT.replacen("axis = 0.0, 0.0, 1.0", "axis = 0.0, 0.0, 2.0", 1);
        match parse_chain(&doc) {
            Err(ChainError::Semantic { path, message }) => {
                assert_eq!(path, "joints[0].axis");
                assert_eq!(message, "axis not unit");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtins_round_trip() {
        for n in [1, 2, 4] {
            let m = builtin_toy_arm(n).unwrap();
            let text = serialize_chain(&m);
            assert_eq!(parse_chain(&text).unwrap(), m);
        }
    }
}
