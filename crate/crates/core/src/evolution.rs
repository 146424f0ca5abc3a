//! The interactive generation step: selected genomes survive unchanged and
//! every other slot is refilled by semantic operators.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{
    new_population, GenomeError, GenomeId, LineageRecord, Operator, Population, ShaderGenome,
    DEFAULT_POPULATION_SIZE,
};
use crate::glsl::{self, CompileBackend, ValidationLimits};
use crate::operators::{
    build_mutation_prompt, fit_crossover_prompt, generate_valid_offspring, ConfigError,
    OffspringContext, OffspringResult, PromptError, Provider, ProviderConfig, TemplateId,
    DEFAULT_MAX_ATTEMPTS,
};
use crate::seed;

const TAG_INIT: u64 = 0x1;
const TAG_TOPUP: u64 = 0x2;
const TAG_OFFSPRING: u64 = 0x3;
const TAG_HYBRID: u64 = 0x4;
const TAG_FALLBACK: u64 = 0x5;
const TAG_POLICY: u64 = 0x6;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("evolve requires a non-empty selection")]
    EmptySelection,
    #[error("seed bank is empty")]
    EmptySeedBank,
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("selection policy chose unknown genome {0}")]
    PolicyUnknown(GenomeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    pub population_size: usize,
    pub max_attempts: u32,
    pub provider: ProviderConfig,
    pub limits: ValidationLimits,
    /// Root of every random decision in the session.
    pub rng_seed: u64,
    /// Offspring requested concurrently. Results do not depend on it.
    pub concurrency: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            population_size: DEFAULT_POPULATION_SIZE,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            provider: ProviderConfig::default(),
            limits: ValidationLimits::default(),
            rng_seed: 0,
            concurrency: 4,
        }
    }
}

/// The crossover intermediate of a multi-parent step. Never inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hybrid {
    pub code: String,
    pub parent_ids: Vec<GenomeId>,
    pub attempts_used: u32,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOutcome {
    pub population: Population,
    /// One record per replaced slot, in slot order.
    pub lineage: Vec<LineageRecord>,
    pub hybrid: Option<Hybrid>,
    pub warnings: Vec<String>,
}

/// Delivered as each offspring is admitted, in completion order.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringEvent {
    pub slot: usize,
    pub genome: ShaderGenome,
    pub record: LineageRecord,
}

/// Seed bank, provider and compile backend bound to a configuration.
#[derive(Clone)]
pub struct Engine {
    config: EvolveConfig,
    seed_bank: Arc<Vec<String>>,
    provider: Arc<dyn Provider>,
    backend: Arc<dyn CompileBackend>,
}

struct Job {
    slot: usize,
    template: TemplateId,
    prompt: String,
    request_seed: u64,
    fallback: String,
}

impl Engine {
    pub fn new(
        config: EvolveConfig,
        seed_bank: Vec<String>,
        provider: Arc<dyn Provider>,
        backend: Arc<dyn CompileBackend>,
    ) -> Result<Self, EvolveError> {
        if seed_bank.is_empty() {
            return Err(EvolveError::EmptySeedBank);
        }
        config.provider.validate()?;
        for (index, code) in seed_bank.iter().enumerate() {
            let report = glsl::check_source(code, &config.limits);
            if !report.ok {
                return Err(GenomeError::InvalidSeed {
                    index,
                    diagnostics: report.diagnostics.join("; "),
                }
                .into());
            }
        }
        Ok(Engine {
            config,
            seed_bank: Arc::new(seed_bank),
            provider,
            backend,
        })
    }

    pub fn config(&self) -> &EvolveConfig {
        &self.config
    }

    pub fn seed_bank(&self) -> &[String] {
        &self.seed_bank
    }

    fn random_seed_code(&self, parts: &[u64]) -> &str {
        let mut rng = seed::rng(self.config.rng_seed, parts);
        &self.seed_bank[rng.gen_range(0..self.seed_bank.len())]
    }

    fn context(&self) -> OffspringContext<'_> {
        OffspringContext {
            provider: self.provider.as_ref(),
            config: &self.config.provider,
            limits: &self.config.limits,
            backend: self.backend.as_ref(),
            max_attempts: self.config.max_attempts,
        }
    }

    fn job(&self, generation: u64, slot: usize, template: TemplateId, prompt: String) -> Job {
        let slot_key = slot as u64;
        Job {
            slot,
            template,
            prompt,
            request_seed: seed::derive(self.config.rng_seed, &[TAG_OFFSPRING, generation, slot_key]),
            fallback: self
                .random_seed_code(&[TAG_FALLBACK, generation, slot_key])
                .to_owned(),
        }
    }

    /// Runs jobs on up to `concurrency` threads, reporting each result as it
    /// lands. Returns results in job order.
    fn run_jobs(
        &self,
        jobs: &[Job],
        mut on_done: impl FnMut(usize, &OffspringResult),
    ) -> Vec<OffspringResult> {
        let ctx = self.context();
        let workers = self.config.concurrency.clamp(1, jobs.len().max(1));
        let next = AtomicUsize::new(0);
        let mut results: Vec<Option<OffspringResult>> = vec![None; jobs.len()];
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel();
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                let ctx = &ctx;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let r = generate_valid_offspring(
                        ctx,
                        job.template,
                        &job.prompt,
                        job.request_seed,
                        &job.fallback,
                    );
                    if tx.send((i, r)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (i, r) in rx {
                on_done(i, &r);
                results[i] = Some(r);
            }
        });
        results.into_iter().map(|r| r.expect("every job reports")).collect()
    }

    fn record(
        &self,
        child_id: GenomeId,
        parent_ids: Vec<GenomeId>,
        operator: Operator,
        generation: u64,
        r: &OffspringResult,
    ) -> LineageRecord {
        LineageRecord {
            child_id,
            parent_ids,
            operator: if r.fell_back { Operator::Fallback } else { operator },
            generation,
            prompt_template_id: Some(TemplateId::Mutation),
            attempts_used: r.attempts_used,
            fell_back: r.fell_back,
            report: r.final_report(&self.config.limits),
            latency_ms: r.latency_ms,
            total_tokens: r.total_tokens,
            warnings: Vec::new(),
        }
    }

    /// Generation 0. Seeds fill the population in bank order; if the bank is
    /// smaller than the population the remaining slots get mutants of random
    /// seeds. The returned lineage starts with one record per seed.
    pub fn initialize(&self) -> Result<(Population, Vec<LineageRecord>), EvolveError> {
        let mut rng = seed::rng(self.config.rng_seed, &[TAG_INIT]);
        let (mut pop, top_ups) = new_population(
            &self.seed_bank,
            self.config.population_size,
            &self.config.limits,
            &mut rng,
        )?;
        let mut lineage: Vec<LineageRecord> = pop
            .genomes()
            .iter()
            .filter(|g| g.operator == Operator::Seed)
            .map(|g| LineageRecord {
                child_id: g.id.clone(),
                parent_ids: Vec::new(),
                operator: Operator::Seed,
                generation: 0,
                prompt_template_id: None,
                attempts_used: 0,
                fell_back: false,
                report: glsl::check_source(&g.code, &self.config.limits),
                latency_ms: 0,
                total_tokens: None,
                warnings: Vec::new(),
            })
            .collect();

        let jobs = top_ups
            .iter()
            .map(|t| {
                Ok(Job {
                    request_seed: seed::derive(self.config.rng_seed, &[TAG_TOPUP, t.slot as u64]),
                    ..self.job(0, t.slot, TemplateId::Mutation, build_mutation_prompt(&t.parent_code)?)
                })
            })
            .collect::<Result<Vec<_>, PromptError>>()?;
        let results = self.run_jobs(&jobs, |_, _| {});
        for (t, r) in top_ups.iter().zip(&results) {
            let id = pop.genomes()[t.slot].id.clone();
            let record = self.record(id.clone(), vec![t.parent_id.clone()], Operator::Mutation, 0, r);
            pop.replace_slot(
                t.slot,
                ShaderGenome {
                    id,
                    code: r.genome_code.clone(),
                    generation: 0,
                    parent_ids: record.parent_ids.clone(),
                    operator: record.operator,
                    selected: false,
                    valid: true,
                },
            );
            lineage.push(record);
        }
        pop.check_invariants(&self.config.limits)?;
        Ok((pop, lineage))
    }

    /// One generation from the current selection. The input population is
    /// left untouched.
    ///
    /// With one selected parent every replaceable slot receives a mutant of
    /// it. With several, a single crossover call over all of them (slot
    /// order) yields a hybrid, and every replaceable slot receives a mutant
    /// of that hybrid. Selected genomes are carried over byte-identical and
    /// stay selected.
    pub fn evolve_step(
        &self,
        pop: &Population,
        mut on_offspring: impl FnMut(&OffspringEvent),
    ) -> Result<EvolveOutcome, EvolveError> {
        let partition = pop.partition();
        if partition.elites.is_empty() {
            return Err(EvolveError::EmptySelection);
        }
        if partition.replaceables.is_empty() {
            return Ok(EvolveOutcome {
                population: pop.clone(),
                lineage: Vec::new(),
                hybrid: None,
                warnings: vec!["nothing to replace".into()],
            });
        }

        let generation = pop.generation() + 1;
        let elites: Vec<&ShaderGenome> = pop.selected().collect();
        let mut warnings = Vec::new();
        let mut hybrid = None;

        let (parent_code, parent_ids, operator) = if elites.len() == 1 {
            (elites[0].code.clone(), vec![elites[0].id.clone()], Operator::Mutation)
        } else {
            let codes: Vec<&str> = elites.iter().map(|g| g.code.as_str()).collect();
            match fit_crossover_prompt(&codes, self.config.provider.prompt_token_budget) {
                Ok((prompt, used)) => {
                    if used < codes.len() {
                        warnings.push(format!(
                            "crossover prompt over budget; used the first {used} of {} parents",
                            codes.len()
                        ));
                    }
                    let job = Job {
                        slot: 0,
                        template: TemplateId::Crossover,
                        prompt,
                        request_seed: seed::derive(self.config.rng_seed, &[TAG_HYBRID, generation]),
                        fallback: self
                            .random_seed_code(&[TAG_HYBRID, TAG_FALLBACK, generation])
                            .to_owned(),
                    };
                    let r = self.run_jobs(std::slice::from_ref(&job), |_, _| {}).remove(0);
                    if r.fell_back {
                        warnings.push("crossover fell back to a seed shader".into());
                    }
                    let ids: Vec<GenomeId> = elites.iter().map(|g| g.id.clone()).collect();
                    hybrid = Some(Hybrid {
                        code: r.genome_code.clone(),
                        parent_ids: ids[..used].to_vec(),
                        attempts_used: r.attempts_used,
                        fell_back: r.fell_back,
                    });
                    (r.genome_code, ids, Operator::CrossoverThenMutation)
                }
                Err(PromptError::OverBudget { .. }) => {
                    warnings.push(
                        "crossover prompt over budget even for two parents; mutating the first selected shader".into(),
                    );
                    (elites[0].code.clone(), vec![elites[0].id.clone()], Operator::Mutation)
                }
                Err(e) => return Err(e.into()),
            }
        };

        let prompt = build_mutation_prompt(&parent_code)?;
        let slots: Vec<usize> = partition
            .replaceables
            .iter()
            .map(|id| pop.slot_of(id).expect("partition ids are members"))
            .collect();
        let jobs: Vec<Job> = slots
            .iter()
            .map(|&slot| self.job(generation, slot, TemplateId::Mutation, prompt.clone()))
            .collect();

        let mut next = pop.clone();
        let ids: Vec<GenomeId> = slots.iter().map(|_| next.issue_id(generation)).collect();
        let build = |i: usize, r: &OffspringResult| {
            let record = self.record(ids[i].clone(), parent_ids.clone(), operator, generation, r);
            let genome = ShaderGenome {
                id: ids[i].clone(),
                code: r.genome_code.clone(),
                generation,
                parent_ids: parent_ids.clone(),
                operator: record.operator,
                selected: false,
                valid: true,
            };
            (genome, record)
        };
        let results = self.run_jobs(&jobs, |i, r| {
            let (genome, record) = build(i, r);
            on_offspring(&OffspringEvent {
                slot: jobs[i].slot,
                genome,
                record,
            });
        });

        let mut lineage = Vec::with_capacity(results.len());
        for (i, r) in results.iter().enumerate() {
            let (genome, mut record) = build(i, r);
            if i == 0 {
                record.warnings = warnings.clone();
            }
            next.replace_slot(jobs[i].slot, genome);
            lineage.push(record);
        }
        next.advance_generation();
        next.check_invariants(&self.config.limits)?;
        Ok(EvolveOutcome {
            population: next,
            lineage,
            hybrid,
            warnings,
        })
    }

    /// Applies `policy` to choose the selection, then evolves.
    pub fn autopilot_step(
        &self,
        pop: &Population,
        policy: &dyn SelectionPolicy,
        on_offspring: impl FnMut(&OffspringEvent),
    ) -> Result<EvolveOutcome, EvolveError> {
        let chosen = policy.choose(pop, self.config.rng_seed);
        if chosen.is_empty() {
            return Err(EvolveError::EmptySelection);
        }
        if let Some(unknown) = chosen.iter().find(|id| pop.get(id).is_none()) {
            return Err(EvolveError::PolicyUnknown(unknown.clone()));
        }
        let mut selected = pop.clone();
        selected.select_only(&chosen)?;
        self.evolve_step(&selected, on_offspring)
    }
}

/// Stands in for the human during headless runs.
pub trait SelectionPolicy: Send + Sync {
    fn choose(&self, pop: &Population, session_seed: u64) -> Vec<GenomeId>;
}

/// The first `k` genomes in slot order.
#[derive(Debug, Clone, Copy)]
pub struct FirstPolicy {
    pub k: usize,
}

impl SelectionPolicy for FirstPolicy {
    fn choose(&self, pop: &Population, _session_seed: u64) -> Vec<GenomeId> {
        pop.genomes().iter().take(self.k).map(|g| g.id.clone()).collect()
    }
}

/// `k` distinct genomes drawn uniformly, seeded by session and generation.
#[derive(Debug, Clone, Copy)]
pub struct RandomKPolicy {
    pub k: usize,
}

impl SelectionPolicy for RandomKPolicy {
    fn choose(&self, pop: &Population, session_seed: u64) -> Vec<GenomeId> {
        let mut rng = seed::rng(session_seed, &[TAG_POLICY, pop.generation()]);
        let k = self.k.min(pop.size());
        let mut picked = rand::seq::index::sample(&mut rng, pop.size(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| pop.genomes()[i].id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::verify_lineage;
    use crate::glsl::AcceptingBackend;
    use crate::operators::{ScriptStep, ScriptedProvider, SeededMockProvider};
    use crate::seeds;

    fn engine(provider: Arc<dyn Provider>, seeds: Vec<String>) -> Engine {
        let config = EvolveConfig {
            rng_seed: 11,
            concurrency: 1,
            ..EvolveConfig::default()
        };
        Engine::new(config, seeds, provider, Arc::new(AcceptingBackend)).unwrap()
    }

    #[test]
    fn single_parent_mutates_every_slot() {
        let mock = Arc::new(SeededMockProvider::new(1, 0.0));
        let e = engine(mock.clone(), seeds::builtin());
        let (mut pop, _) = e.initialize().unwrap();
        let id = pop.genomes()[3].id.clone();
        pop.set_selected(&id, true).unwrap();
        let keep = pop.genomes()[3].clone();
        let mut events = 0;
        let out = e.evolve_step(&pop, |_| events += 1).unwrap();
        assert_eq!(events, 13);
        assert_eq!(mock.calls(TemplateId::Mutation), 13);
        assert_eq!(mock.calls(TemplateId::Crossover), 0);
        assert_eq!(out.population.genomes()[3], keep);
        assert_eq!(out.population.generation(), 1);
        assert!(out.hybrid.is_none());
        for r in &out.lineage {
            assert_eq!(r.parent_ids, vec![keep.id.clone()]);
            assert_eq!(r.operator, Operator::Mutation);
        }
    }

    #[test]
    fn multi_parent_crossover_once() {
        let mock = Arc::new(SeededMockProvider::new(1, 0.0));
        let e = engine(mock.clone(), seeds::builtin());
        let (mut pop, _) = e.initialize().unwrap();
        let ids: Vec<_> = [1, 4, 9].iter().map(|&i| pop.genomes()[i].id.clone()).collect();
        pop.select_only(&ids).unwrap();
        let out = e.evolve_step(&pop, |_| {}).unwrap();
        assert_eq!(mock.calls(TemplateId::Crossover), 1);
        assert_eq!(mock.calls(TemplateId::Mutation), 11);
        let hybrid = out.hybrid.unwrap();
        assert!(!out.population.genomes().iter().any(|g| g.code == hybrid.code));
        assert_eq!(out.population.selected().count(), 3);
        assert!(out.lineage.iter().all(|r| r.parent_ids == ids));
    }

    #[test]
    fn empty_selection_is_rejected() {
        let e = engine(Arc::new(SeededMockProvider::new(1, 0.0)), seeds::builtin());
        let (pop, _) = e.initialize().unwrap();
        let err = e.evolve_step(&pop, |_| {}).unwrap_err();
        assert_eq!(err.to_string(), "evolve requires a non-empty selection");
    }

    #[test]
    fn all_selected_is_a_no_op() {
        let e = engine(Arc::new(SeededMockProvider::new(1, 0.0)), seeds::builtin());
        let (mut pop, _) = e.initialize().unwrap();
        let all: Vec<_> = pop.genomes().iter().map(|g| g.id.clone()).collect();
        pop.select_only(&all).unwrap();
        let out = e.evolve_step(&pop, |_| {}).unwrap();
        assert_eq!(out.population, pop);
        assert_eq!(out.warnings, vec!["nothing to replace".to_owned()]);
    }

    #[test]
    fn exhausted_retries_fall_back_to_seed_bank() {
        let script = vec![ScriptStep::Respond("nope".into()); 5];
        let provider = Arc::new(ScriptedProvider::new(script));
        let bank = seeds::builtin();
        let e = engine(provider.clone(), bank.clone());
        let (mut pop, _) = e.initialize().unwrap();
        let ids: Vec<_> = pop.genomes()[..13].iter().map(|g| g.id.clone()).collect();
        pop.select_only(&ids).unwrap();
        // 13 selected: one crossover (5 failures), then one mutation slot.
        let out = e.evolve_step(&pop, |_| {}).unwrap();
        assert_eq!(provider.calls(), 10);
        let r = &out.lineage[0];
        assert!(r.fell_back);
        assert_eq!(r.attempts_used, 5);
        assert_eq!(r.operator, Operator::Fallback);
        assert!(bank.contains(&out.population.genomes()[13].code));
        assert!(out.hybrid.unwrap().fell_back);
    }

    #[test]
    fn small_seed_bank_is_topped_up() {
        let mock = Arc::new(SeededMockProvider::new(1, 0.0));
        let e = engine(mock.clone(), seeds::builtin()[..3].to_vec());
        let (pop, lineage) = e.initialize().unwrap();
        assert_eq!(pop.size(), 14);
        assert_eq!(mock.calls(TemplateId::Mutation), 11);
        assert_eq!(lineage.len(), 14);
        assert_eq!(
            pop.genomes().iter().filter(|g| g.operator == Operator::Mutation).count(),
            11
        );
        verify_lineage(&lineage, 5).unwrap();
    }

    #[test]
    fn concurrency_does_not_change_results() {
        let run = |concurrency| {
            let config = EvolveConfig {
                rng_seed: 5,
                concurrency,
                ..EvolveConfig::default()
            };
            let mock: Arc<dyn Provider> = Arc::new(SeededMockProvider::new(8, 0.4));
            let e = Engine::new(config, seeds::builtin(), mock, Arc::new(AcceptingBackend)).unwrap();
            let (mut pop, _) = e.initialize().unwrap();
            for _ in 0..5 {
                pop = e.autopilot_step(&pop, &RandomKPolicy { k: 2 }, |_| {}).unwrap().population;
            }
            pop
        };
        assert_eq!(run(1), run(6));
    }

    struct Bogus;
    impl SelectionPolicy for Bogus {
        fn choose(&self, _: &Population, _: u64) -> Vec<GenomeId> {
            vec![GenomeId::from("nope")]
        }
    }

    #[test]
    fn autopilot_rejects_bad_policies() {
        let e = engine(Arc::new(SeededMockProvider::new(1, 0.0)), seeds::builtin());
        let (pop, _) = e.initialize().unwrap();
        assert!(matches!(
            e.autopilot_step(&pop, &FirstPolicy { k: 0 }, |_| {}),
            Err(EvolveError::EmptySelection)
        ));
        assert!(matches!(
            e.autopilot_step(&pop, &Bogus, |_| {}),
            Err(EvolveError::PolicyUnknown(_))
        ));
    }
}
