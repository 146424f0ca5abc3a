//! Shader programs as evolutionary individuals, and the fixed-size
//! population that holds them.
//!
//! A [`Population`] is a single-writer value: callers mutate it through
//! `&mut` and hand out clones as read-only snapshots. Slot order is stable
//! across generations; offspring overwrite the slot of the genome they
//! replace so a client grid never reshuffles.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glsl::{self, ValidationLimits, ValidationReport};
use crate::operators::TemplateId;

/// Default population size.
pub const DEFAULT_POPULATION_SIZE: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenomeError {
    #[error("seed list is empty")]
    EmptySeeds,
    #[error("seed #{index} is invalid: {diagnostics}")]
    InvalidSeed { index: usize, diagnostics: String },
    #[error("population size must be positive")]
    ZeroSize,
    #[error("unknown genome {0}")]
    UnknownGenome(GenomeId),
    #[error("population invariant violated: {0}")]
    Invariant(String),
}

/// Engine-assigned genome identifier. Never derived from code content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenomeId(String);

impl GenomeId {
    pub(crate) fn issue(generation: u64, serial: u64) -> Self {
        GenomeId(format!("g{generation}-{serial:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GenomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GenomeId {
    fn from(s: &str) -> Self {
        GenomeId(s.to_owned())
    }
}

impl From<String> for GenomeId {
    fn from(s: String) -> Self {
        GenomeId(s)
    }
}

/// How a genome came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Seed,
    Mutation,
    CrossoverThenMutation,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShaderGenome {
    pub id: GenomeId,
    /// Sanitized GLSL, before the uniform interface is wrapped around it.
    pub code: String,
    pub generation: u64,
    pub parent_ids: Vec<GenomeId>,
    pub operator: Operator,
    pub selected: bool,
    pub valid: bool,
}

impl ShaderGenome {
    fn check(&self, limits: &ValidationLimits) -> Result<(), String> {
        let len = self.code.chars().count();
        if len == 0 {
            return Err(format!("{} has empty code", self.id));
        }
        if len > limits.max_code_length {
            return Err(format!(
                "{} code length {len} exceeds cap {}",
                self.id, limits.max_code_length
            ));
        }
        if (self.operator == Operator::Seed) != self.parent_ids.is_empty() {
            return Err(format!(
                "{} operator {:?} inconsistent with {} parents",
                self.id,
                self.operator,
                self.parent_ids.len()
            ));
        }
        if self.operator == Operator::CrossoverThenMutation && self.parent_ids.len() < 2 {
            return Err(format!("{} is a crossover child with < 2 parents", self.id));
        }
        if !self.valid {
            return Err(format!("{} is not marked valid", self.id));
        }
        Ok(())
    }
}

/// Request to fill a population slot with a mutant of a seed, issued when the
/// seed bank is smaller than the population.
#[derive(Debug, Clone, PartialEq)]
pub struct TopUpRequest {
    pub slot: usize,
    pub parent_id: GenomeId,
    pub parent_code: String,
}

/// Elites (selected) and replaceables (the rest), both in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPartition {
    pub elites: Vec<GenomeId>,
    pub replaceables: Vec<GenomeId>,
}

/// Audit record for one genome entering a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub child_id: GenomeId,
    pub parent_ids: Vec<GenomeId>,
    pub operator: Operator,
    pub generation: u64,
    pub prompt_template_id: Option<TemplateId>,
    pub attempts_used: u32,
    pub fell_back: bool,
    /// Report of the candidate that was admitted.
    pub report: ValidationReport,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub total_tokens: Option<u64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PopulationRecord", into = "PopulationRecord")]
pub struct Population {
    genomes: Vec<ShaderGenome>,
    size: usize,
    generation: u64,
    next_serial: u64,
}

#[derive(Serialize, Deserialize)]
struct PopulationRecord {
    size: usize,
    generation: u64,
    next_serial: u64,
    genomes: Vec<ShaderGenome>,
}

impl TryFrom<PopulationRecord> for Population {
    type Error = GenomeError;

    fn try_from(r: PopulationRecord) -> Result<Self, Self::Error> {
        let pop = Population {
            genomes: r.genomes,
            size: r.size,
            generation: r.generation,
            next_serial: r.next_serial,
        };
        pop.check_shape()?;
        Ok(pop)
    }
}

impl From<Population> for PopulationRecord {
    fn from(p: Population) -> Self {
        PopulationRecord {
            size: p.size,
            generation: p.generation,
            next_serial: p.next_serial,
            genomes: p.genomes,
        }
    }
}

/// Builds the generation-0 population from the seed bank.
///
/// With at least `size` seeds the first `size` fill the population. Otherwise
/// every seed is used once and each remaining slot holds a provisional copy of
/// a randomly chosen seed (operator `Fallback`) together with a
/// [`TopUpRequest`] asking the caller to replace it with a mutant.
pub fn new_population<R: Rng + ?Sized>(
    seed_codes: &[String],
    size: usize,
    limits: &ValidationLimits,
    rng: &mut R,
) -> Result<(Population, Vec<TopUpRequest>), GenomeError> {
    if seed_codes.is_empty() {
        return Err(GenomeError::EmptySeeds);
    }
    if size == 0 {
        return Err(GenomeError::ZeroSize);
    }
    for (index, code) in seed_codes.iter().enumerate() {
        let report = glsl::check_source(code, limits);
        if !report.ok {
            return Err(GenomeError::InvalidSeed {
                index,
                diagnostics: report.diagnostics.join("; "),
            });
        }
    }

    let mut pop = Population {
        genomes: Vec::with_capacity(size),
        size,
        generation: 0,
        next_serial: 0,
    };
    for code in seed_codes.iter().take(size) {
        let id = pop.issue_id(0);
        pop.genomes.push(ShaderGenome {
            id,
            code: code.clone(),
            generation: 0,
            parent_ids: Vec::new(),
            operator: Operator::Seed,
            selected: false,
            valid: true,
        });
    }

    let seeded = pop.genomes.len();
    let mut requests = Vec::new();
    for slot in seeded..size {
        let parent = &pop.genomes[rng.gen_range(0..seeded)];
        let (parent_id, parent_code) = (parent.id.clone(), parent.code.clone());
        let id = pop.issue_id(0);
        pop.genomes.push(ShaderGenome {
            id,
            code: parent_code.clone(),
            generation: 0,
            parent_ids: vec![parent_id.clone()],
            operator: Operator::Fallback,
            selected: false,
            valid: true,
        });
        requests.push(TopUpRequest {
            slot,
            parent_id,
            parent_code,
        });
    }
    Ok((pop, requests))
}

impl Population {
    pub fn genomes(&self) -> &[ShaderGenome] {
        &self.genomes
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn get(&self, id: &GenomeId) -> Option<&ShaderGenome> {
        self.genomes.iter().find(|g| &g.id == id)
    }

    pub fn slot_of(&self, id: &GenomeId) -> Option<usize> {
        self.genomes.iter().position(|g| &g.id == id)
    }

    /// Sets one genome's selection flag. Returns whether the state changed.
    pub fn set_selected(&mut self, id: &GenomeId, flag: bool) -> Result<bool, GenomeError> {
        let genome = self
            .genomes
            .iter_mut()
            .find(|g| &g.id == id)
            .ok_or_else(|| GenomeError::UnknownGenome(id.clone()))?;
        let changed = genome.selected != flag;
        genome.selected = flag;
        Ok(changed)
    }

    /// Replaces the whole selection: exactly `ids` end up selected.
    pub fn select_only(&mut self, ids: &[GenomeId]) -> Result<(), GenomeError> {
        if let Some(missing) = ids.iter().find(|id| self.get(id).is_none()) {
            return Err(GenomeError::UnknownGenome(missing.clone()));
        }
        for g in &mut self.genomes {
            g.selected = ids.contains(&g.id);
        }
        Ok(())
    }

    pub fn partition(&self) -> SelectionPartition {
        let (elites, replaceables): (Vec<_>, Vec<_>) =
            self.genomes.iter().partition(|g| g.selected);
        SelectionPartition {
            elites: elites.into_iter().map(|g| g.id.clone()).collect(),
            replaceables: replaceables.into_iter().map(|g| g.id.clone()).collect(),
        }
    }

    pub fn selected(&self) -> impl Iterator<Item = &ShaderGenome> {
        self.genomes.iter().filter(|g| g.selected)
    }

    pub(crate) fn issue_id(&mut self, generation: u64) -> GenomeId {
        let id = GenomeId::issue(generation, self.next_serial);
        self.next_serial += 1;
        id
    }

    pub(crate) fn replace_slot(&mut self, slot: usize, genome: ShaderGenome) {
        self.genomes[slot] = genome;
    }

    pub(crate) fn advance_generation(&mut self) {
        self.generation += 1;
    }

    fn check_shape(&self) -> Result<(), GenomeError> {
        if self.size == 0 {
            return Err(GenomeError::ZeroSize);
        }
        if self.genomes.len() != self.size {
            return Err(GenomeError::Invariant(format!(
                "{} genomes in a population of size {}",
                self.genomes.len(),
                self.size
            )));
        }
        let mut seen = HashSet::new();
        for g in &self.genomes {
            if !seen.insert(&g.id) {
                return Err(GenomeError::Invariant(format!("duplicate id {}", g.id)));
            }
        }
        Ok(())
    }

    /// Checks every population and genome invariant, including that each
    /// member still passes structural validation under `limits`.
    pub fn check_invariants(&self, limits: &ValidationLimits) -> Result<(), GenomeError> {
        self.check_shape()?;
        for g in &self.genomes {
            g.check(limits).map_err(GenomeError::Invariant)?;
            let report = glsl::check_source(&g.code, limits);
            if !report.ok {
                return Err(GenomeError::Invariant(format!(
                    "{} fails validation: {}",
                    g.id,
                    report.diagnostics.join("; ")
                )));
            }
        }
        Ok(())
    }
}

/// Checks a lineage log: every parent must have been recorded before its
/// child (which also makes the graph acyclic), attempt counts must respect
/// `max_attempts`, and every admitted candidate must carry a passing report.
pub fn verify_lineage(records: &[LineageRecord], max_attempts: u32) -> Result<(), GenomeError> {
    let mut known: HashSet<&GenomeId> = HashSet::new();
    for r in records {
        let seeded = r.operator == Operator::Seed && r.attempts_used == 0;
        if !seeded && (r.attempts_used == 0 || r.attempts_used > max_attempts) {
            return Err(GenomeError::Invariant(format!(
                "{}: attempts_used {} outside 1..={max_attempts}",
                r.child_id, r.attempts_used
            )));
        }
        if r.fell_back && r.attempts_used != max_attempts {
            return Err(GenomeError::Invariant(format!(
                "{}: fell back after only {} attempts",
                r.child_id, r.attempts_used
            )));
        }
        if !r.report.ok {
            return Err(GenomeError::Invariant(format!(
                "{}: admitted with a failing report",
                r.child_id
            )));
        }
        if let Some(p) = r.parent_ids.iter().find(|p| !known.contains(p)) {
            return Err(GenomeError::Invariant(format!(
                "{}: parent {p} not recorded earlier",
                r.child_id
            )));
        }
        if !known.insert(&r.child_id) {
            return Err(GenomeError::Invariant(format!(
                "{} recorded twice",
                r.child_id
            )));
        }
    }
    Ok(())
}
