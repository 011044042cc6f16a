//! Flat parameter vectors and the named-component registry.
//!
//! Every model stores all of its weights in one `Vec<f64>`; optimizers,
//! trajectory records, and kernel/influence vectors all index the same flat
//! space. The [`ComponentRegistry`] names contiguous ranges of that space
//! ("embedding", "linear2", ...) so that per-component analyses, pruning
//! masks, and parameter surgery can address architectural units without
//! knowing layout details.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named contiguous slice of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Component {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Ordered set of components that exactly tiles `0..d`.
///
/// Construction enforces the partition property: components are contiguous,
/// non-overlapping, in ascending order, uniquely named, and cover the whole
/// vector. Downstream code (per-component sums, pruning, swaps) relies on
/// this and never re-checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRegistry {
    components: Vec<Component>,
    d: usize,
}

impl ComponentRegistry {
    pub fn new(components: Vec<Component>, d: usize) -> Result<ComponentRegistry> {
        let mut cursor = 0usize;
        let mut seen = std::collections::HashSet::new();
        for c in &components {
            if c.start != cursor {
                return Err(Error::InvalidRegistry(format!(
                    "component '{}' starts at {} but previous range ends at {cursor}",
                    c.name, c.start
                )));
            }
            if c.end < c.start {
                return Err(Error::InvalidRegistry(format!(
                    "component '{}' has negative extent",
                    c.name
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::InvalidRegistry(format!(
                    "duplicate component name '{}'",
                    c.name
                )));
            }
            cursor = c.end;
        }
        if cursor != d {
            return Err(Error::InvalidRegistry(format!(
                "components cover 0..{cursor} but parameter dim is {d}"
            )));
        }
        Ok(ComponentRegistry { components, d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn names(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.components.iter().any(|c| c.name == name)
    }

    pub fn range_of(&self, name: &str) -> Result<Range<usize>> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.range())
            .ok_or_else(|| Error::UnknownComponent {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    /// Resolve a list of names to ranges, rejecting unknowns and duplicates.
    pub fn ranges_of(&self, names: &[String]) -> Result<Vec<(String, Range<usize>)>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            if !seen.insert(n.clone()) {
                return Err(Error::Data(format!("component '{n}' listed twice")));
            }
            out.push((n.clone(), self.range_of(n)?));
        }
        Ok(out)
    }
}

/// Parameter values plus the registry describing their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub registry: ComponentRegistry,
}

impl ParamVector {
    pub fn new(data: Vec<f64>, registry: ComponentRegistry) -> Result<ParamVector> {
        if data.len() != registry.d() {
            return Err(Error::InvalidRegistry(format!(
                "parameter vector has {} values, registry expects {}",
                data.len(),
                registry.d()
            )));
        }
        Ok(ParamVector { data, registry })
    }

    pub fn d(&self) -> usize {
        self.data.len()
    }

    pub fn component(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.data[self.registry.range_of(name)?])
    }

    pub fn component_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.registry.range_of(name)?;
        Ok(&mut self.data[r])
    }
}

/// Incremental layout builder used by model constructors: allocates named
/// blocks in declaration order and produces the registry. Several blocks may
/// share one component name (e.g. all per-head attention encoders), as long
/// as same-named blocks are declared back to back.
pub struct LayoutBuilder {
    blocks: Vec<(String, usize)>, // (component name, numel) in order
}

impl LayoutBuilder {
    pub fn new() -> LayoutBuilder {
        LayoutBuilder { blocks: Vec::new() }
    }

    /// Reserve `numel` parameters under `component`, returning their offset.
    pub fn block(&mut self, component: &str, numel: usize) -> usize {
        let offset = self.total();
        self.blocks.push((component.to_string(), numel));
        offset
    }

    pub fn total(&self) -> usize {
        self.blocks.iter().map(|(_, n)| n).sum()
    }

    pub fn registry(&self) -> Result<ComponentRegistry> {
        let mut components: Vec<Component> = Vec::new();
        let mut cursor = 0usize;
        for (name, numel) in &self.blocks {
            match components.last_mut() {
                Some(last) if last.name == *name => last.end += numel,
                _ => components.push(Component {
                    name: name.clone(),
                    start: cursor,
                    end: cursor + numel,
                }),
            }
            cursor += numel;
        }
        ComponentRegistry::new(components, cursor)
    }
}

impl Default for LayoutBuilder {
    fn default() -> Self {
        Self::new()
    }
}
