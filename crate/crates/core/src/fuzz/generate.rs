use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::mutate::{applicable_mutations, mutate_case};
use super::values::valid_value;
use super::{Binding, BindingSource, FuzzCase, FuzzConfig, MutationDictionary, TestSequence};
use crate::api_model::{ApiModel, DependencyEdge, OperationDef, ParamLocation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FuzzConfigError {
    #[error("max_sequence_length must be at least 1")]
    ZeroSequenceLength,
    #[error("a positive budget_sequences or budget_seconds is required")]
    NoBudget,
    #[error("mutation_ratio {0} is outside [0, 1]")]
    BadMutationRatio(f64),
}

/// Deterministic stream of test sequences.
///
/// The first pass emits one unmutated sequence per operation (in model
/// order) so every operation is tried early; afterwards targets, producer
/// choices, values and mutations are drawn from the seeded RNG. The stream
/// ends once `budget_sequences` have been produced; a wall-clock budget is
/// enforced by whoever drives execution.
#[derive(Debug, Clone)]
pub struct SequenceGenerator {
    model: ApiModel,
    deps: Vec<DependencyEdge>,
    max_len: usize,
    budget: Option<u64>,
    mutation_ratio: f64,
    dictionary: MutationDictionary,
    rng: ChaCha8Rng,
    emitted: u64,
}

pub fn generate_sequences(
    model: &ApiModel,
    deps: &[DependencyEdge],
    cfg: &FuzzConfig,
    seed: u64,
) -> Result<SequenceGenerator, FuzzConfigError> {
    cfg.validate()?;
    Ok(SequenceGenerator {
        model: model.clone(),
        deps: deps.to_vec(),
        max_len: cfg.max_sequence_length,
        budget: cfg.budget_sequences,
        mutation_ratio: cfg.mutation_ratio,
        dictionary: MutationDictionary::with_oversize_length(cfg.oversize_length),
        rng: ChaCha8Rng::seed_from_u64(seed),
        emitted: 0,
    })
}

impl SequenceGenerator {
    pub fn with_dictionary(mut self, dictionary: MutationDictionary) -> Self {
        self.dictionary = dictionary;
        self
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    fn build(&mut self, target: usize, coverage_pass: bool) -> TestSequence {
        let chain = {
            let mut planner = Planner {
                model: &self.model,
                deps: &self.deps,
                max_len: self.max_len,
                rng: if coverage_pass { None } else { Some(&mut self.rng) },
            };
            planner.plan(target)
        };

        let mut cases = Vec::with_capacity(chain.len());
        for planned in &chain {
            let op = &self.model.operations[planned.op];
            let mut case = FuzzCase::new(&op.id);
            for param in &op.params {
                if let Some((pos, field)) = planned.fed_for(&param.name) {
                    case.bindings.insert(
                        param.name.clone(),
                        Binding {
                            value: Value::Null,
                            source: BindingSource::DependencyFed {
                                producer_case: pos,
                                producer_field: field.to_string(),
                            },
                        },
                    );
                    continue;
                }
                let include = op.is_required(&param.name)
                    || (!coverage_pass && self.rng.random_bool(0.5));
                if include {
                    let v = valid_value(&param.schema, &param.name, &mut self.rng, coverage_pass);
                    case.bindings.insert(param.name.clone(), Binding::generated(v));
                }
            }
            cases.push(case);
        }

        if !coverage_pass && self.rng.random_bool(self.mutation_ratio) {
            let op = &self.model.operations[target];
            let options = applicable_mutations(op);
            if let Some(descriptor) = options.choose(&mut self.rng).cloned() {
                let last = cases.len() - 1;
                cases[last] = mutate_case(&cases[last], op, &descriptor, &self.dictionary, &mut self.rng)
                    .expect("applicable mutations always apply");
            }
        }

        TestSequence {
            id: format!("seq-{:05}", self.emitted + 1),
            cases,
        }
    }
}

impl Iterator for SequenceGenerator {
    type Item = TestSequence;

    fn next(&mut self) -> Option<TestSequence> {
        let ops = self.model.operations.len();
        if ops == 0 || self.budget.is_some_and(|b| self.emitted >= b) {
            return None;
        }
        let seq = if (self.emitted as usize) < ops {
            self.build(self.emitted as usize, true)
        } else {
            let target = self.rng.random_range(0..ops);
            self.build(target, false)
        };
        self.emitted += 1;
        Some(seq)
    }
}

struct Planned {
    op: usize,
    /// (param, producer position, producer field)
    fed: Vec<(String, usize, String)>,
}

impl Planned {
    fn fed_for(&self, param: &str) -> Option<(usize, &str)> {
        self.fed
            .iter()
            .find(|(p, _, _)| p == param)
            .map(|(_, pos, field)| (*pos, field.as_str()))
    }
}

struct Planner<'a> {
    model: &'a ApiModel,
    deps: &'a [DependencyEdge],
    max_len: usize,
    /// `None` picks producers deterministically.
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Planner<'_> {
    fn plan(&mut self, target: usize) -> Vec<Planned> {
        let mut chain = Vec::new();
        let mut stack = Vec::new();
        self.place(target, &mut chain, &mut stack, 0);
        chain
    }

    fn index_of(&self, id: &str) -> usize {
        self.model
            .operations
            .iter()
            .position(|o| o.id == id)
            .expect("edges reference model operations")
    }

    /// Places `op` (after any producers it needs) and returns its position.
    /// `reserve` counts ancestors still waiting for a slot after this one.
    fn place(&mut self, op: usize, chain: &mut Vec<Planned>, stack: &mut Vec<usize>, reserve: usize) -> usize {
        stack.push(op);
        let def = &self.model.operations[op];
        let mut fed = Vec::new();
        for param in def.params.iter().filter(|p| feedable(def, &p.name, p.location)) {
            let edges: Vec<&DependencyEdge> = self
                .deps
                .iter()
                .filter(|e| e.consumer == def.id && e.consumer_param == param.name)
                .collect();
            if edges.is_empty() {
                continue;
            }
            let reuse = chain.iter().enumerate().rev().find_map(|(pos, c)| {
                let id = &self.model.operations[c.op].id;
                edges.iter().find(|e| &e.producer == id).map(|e| (pos, *e))
            });
            if let Some((pos, edge)) = reuse {
                fed.push((param.name.clone(), pos, edge.producer_field.clone()));
                continue;
            }
            if chain.len() + reserve + 2 > self.max_len {
                continue;
            }
            let candidates: Vec<&DependencyEdge> = edges
                .into_iter()
                .filter(|e| !stack.contains(&self.index_of(&e.producer)))
                .collect();
            let chosen = match self.rng.as_deref_mut() {
                Some(rng) => candidates.choose(rng).copied(),
                None => candidates
                    .iter()
                    .min_by_key(|e| path_params(&self.model.operations[self.index_of(&e.producer)]))
                    .copied(),
            };
            let Some(edge) = chosen else {
                continue;
            };
            let producer = self.index_of(&edge.producer);
            let pos = self.place(producer, chain, stack, reserve + 1);
            fed.push((param.name.clone(), pos, edge.producer_field.clone()));
        }
        stack.pop();
        chain.push(Planned { op, fed });
        chain.len() - 1
    }
}

fn feedable(op: &OperationDef, name: &str, location: ParamLocation) -> bool {
    location == ParamLocation::Path || op.is_required(name)
}

fn path_params(op: &OperationDef) -> usize {
    op.params
        .iter()
        .filter(|p| p.location == ParamLocation::Path)
        .count()
}
