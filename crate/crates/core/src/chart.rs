//! Named coordinate charts on tangent, jet and thickened tangent bundles.
//!
//! Layout of a chart with `l` leaf and `r` fiber coordinates:
//! `x_1..x_l, f_1..f_r, xdot.., fdot.., [t], [mu_1..mu_r, mudot_1..mudot_r]`.
//! The thickening block is a suffix, so the un-thickened chart is a prefix.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Leaf(usize),
    Fiber(usize),
    LeafVelocity(usize),
    FiberVelocity(usize),
    Time,
    Thickening(usize),
    ThickeningVelocity(usize),
}

impl Role {
    pub fn is_velocity(self) -> bool {
        matches!(self, Role::LeafVelocity(_) | Role::FiberVelocity(_) | Role::ThickeningVelocity(_))
    }

    pub fn is_base(self) -> bool {
        matches!(self, Role::Leaf(_) | Role::Fiber(_) | Role::Thickening(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    coords: Vec<Coordinate>,
    leaf: usize,
    fiber: usize,
    has_time: bool,
    thickened: bool,
}

pub fn velocity_name(base: &str) -> String {
    format!("{base}dot")
}

pub fn thickening_name(a: usize) -> String {
    format!("mu_{a}")
}

pub fn thickening_velocity_name(a: usize) -> String {
    format!("mudot_{a}")
}

fn valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl ChartSpec {
    /// Tangent chart (`has_time = false`) or first-jet chart (`has_time = true`)
    /// over base coordinates `leaf ++ fiber`.
    pub fn new<S: AsRef<str>>(leaf: &[S], fiber: &[S], has_time: bool) -> Result<Self> {
        let mut coords = Vec::new();
        for (a, n) in leaf.iter().enumerate() {
            coords.push(Coordinate { name: n.as_ref().to_string(), role: Role::Leaf(a) });
        }
        for (a, n) in fiber.iter().enumerate() {
            coords.push(Coordinate { name: n.as_ref().to_string(), role: Role::Fiber(a) });
        }
        for (a, n) in leaf.iter().enumerate() {
            coords.push(Coordinate { name: velocity_name(n.as_ref()), role: Role::LeafVelocity(a) });
        }
        for (a, n) in fiber.iter().enumerate() {
            coords.push(Coordinate { name: velocity_name(n.as_ref()), role: Role::FiberVelocity(a) });
        }
        if has_time {
            coords.push(Coordinate { name: "t".into(), role: Role::Time });
        }
        let chart = ChartSpec { coords, leaf: leaf.len(), fiber: fiber.len(), has_time, thickened: false };
        chart.validate()?;
        Ok(chart)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.coords {
            if !valid_identifier(&c.name) {
                return Err(Error::config("chart", format!("`{}` is not a valid identifier", c.name)));
            }
            if matches!(c.name.as_str(), "sin" | "cos" | "exp" | "log") {
                return Err(Error::config("chart", format!("`{}` is reserved", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config("chart", format!("duplicate coordinate `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// Chart with `mu_A`, `mudot_A` appended, one pair per fiber coordinate.
    pub fn thicken(&self) -> Result<Self> {
        if self.thickened {
            return Err(Error::ChartMismatch("chart is already thickened".into()));
        }
        let mut coords = self.coords.clone();
        for a in 0..self.fiber {
            coords.push(Coordinate { name: thickening_name(a + 1), role: Role::Thickening(a) });
        }
        for a in 0..self.fiber {
            coords.push(Coordinate { name: thickening_velocity_name(a + 1), role: Role::ThickeningVelocity(a) });
        }
        let chart = ChartSpec { coords, thickened: true, ..self.clone() };
        chart.validate()?;
        Ok(chart)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf
    }

    pub fn fiber_count(&self) -> usize {
        self.fiber
    }

    pub fn has_time(&self) -> bool {
        self.has_time
    }

    pub fn is_thickened(&self) -> bool {
        self.thickened
    }

    /// Number of configuration coordinates (half the non-time dimension).
    pub fn config_dim(&self) -> usize {
        self.leaf + self.fiber + if self.thickened { self.fiber } else { 0 }
    }

    pub fn coords(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn names(&self) -> Vec<&str> {
        self.coords.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn role(&self, i: usize) -> Role {
        self.coords[i].role
    }

    pub fn index_of_role(&self, role: Role) -> Option<usize> {
        self.coords.iter().position(|c| c.role == role)
    }

    fn base_roles(&self) -> Vec<Role> {
        let mut roles: Vec<Role> = (0..self.leaf).map(Role::Leaf).chain((0..self.fiber).map(Role::Fiber)).collect();
        if self.thickened {
            roles.extend((0..self.fiber).map(Role::Thickening));
        }
        roles
    }

    /// Indices of the configuration coordinates `q^i`.
    pub fn base_indices(&self) -> Vec<usize> {
        self.base_roles().into_iter().map(|r| self.index_of_role(r).unwrap()).collect()
    }

    /// Indices of the velocities, aligned with [`base_indices`](Self::base_indices).
    pub fn velocity_indices(&self) -> Vec<usize> {
        self.base_roles()
            .into_iter()
            .map(|r| {
                let v = match r {
                    Role::Leaf(a) => Role::LeafVelocity(a),
                    Role::Fiber(a) => Role::FiberVelocity(a),
                    Role::Thickening(a) => Role::ThickeningVelocity(a),
                    _ => unreachable!(),
                };
                self.index_of_role(v).unwrap()
            })
            .collect()
    }

    pub fn leaf_indices(&self) -> Vec<usize> {
        (0..self.leaf).collect()
    }

    pub fn fiber_indices(&self) -> Vec<usize> {
        (self.leaf..self.leaf + self.fiber).collect()
    }

    pub fn time_index(&self) -> Option<usize> {
        self.index_of_role(Role::Time)
    }

    /// Indices of `mu_A` and `mudot_A` (empty unless thickened).
    pub fn thickening_indices(&self) -> (Vec<usize>, Vec<usize>) {
        if !self.thickened {
            return (Vec::new(), Vec::new());
        }
        let mu = (0..self.fiber).map(|a| self.index_of_role(Role::Thickening(a)).unwrap()).collect();
        let mudot = (0..self.fiber).map(|a| self.index_of_role(Role::ThickeningVelocity(a)).unwrap()).collect();
        (mu, mudot)
    }

    /// Dimension of the un-thickened prefix.
    pub fn original_dim(&self) -> usize {
        self.dim() - if self.thickened { 2 * self.fiber } else { 0 }
    }

    /// True when `self` extends `other` positionally.
    pub fn has_prefix(&self, other: &ChartSpec) -> bool {
        other.coords.len() <= self.coords.len() && self.coords[..other.coords.len()] == other.coords[..]
    }

    /// Builds a point from `(name, value)` pairs; unnamed coordinates are zero.
    pub fn point(&self, values: &[(&str, f64)]) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.dim()];
        for (name, v) in values {
            let i = self.index_of(name).ok_or_else(|| Error::UnknownIdentifier(name.to_string()))?;
            p[i] = *v;
        }
        Ok(p)
    }
}
