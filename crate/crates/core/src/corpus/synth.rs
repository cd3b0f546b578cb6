//! Synthetic corpus generator with planted entity-type shortcuts.
//!
//! Each relation gets a surface template (filler words plus two entity slots)
//! and an entity-type signature `(head_type, tail_type)`. With probability
//! `shortcut_strength` an instance's entities are drawn from the signature's
//! type pools — the planted shortcut — and otherwise from the global pool.
//!
//! Analogous relations come in mutually-linked pairs that share one template
//! and the same per-slot type distribution. Pair members differ either by
//! swapped head/tail roles over the same slots ([`AnalogMode::RoleSwap`]) or
//! by a single discriminative filler token ([`AnalogMode::Token`]). In both
//! modes a classifier that only checks which entity types are present cannot
//! tell the members apart, while role-aware features (role-swap) or full
//! sentence evidence (token) can.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assign_splits, CorpusError, Dataset, Instance, RelId, Relation, Span};
use crate::seeding::{self, ns};

// Wide enough that a small replay memory cannot cover a type's tokens.
const ENTITIES_PER_TYPE: usize = 24;

/// How the two members of an analog pair differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnalogMode {
    /// Same template and per-slot types, head/tail roles swapped.
    #[default]
    RoleSwap,
    /// Same template and roles, one filler token differs.
    Token,
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_relations: u32,
    pub n_analog_pairs: u32,
    pub instances_per_relation: u32,
    /// Probability that an instance's entities follow the relation's
    /// type signature.
    pub shortcut_strength: f64,
    pub entity_type_vocab_size: u32,
    /// Inclusive template length range (filler words plus two entity slots).
    pub template_length: (u32, u32),
    pub symmetric_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub analog_mode: AnalogMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_relations: 40,
            n_analog_pairs: 10,
            instances_per_relation: 60,
            shortcut_strength: 0.95,
            entity_type_vocab_size: 12,
            template_length: (5, 9),
            symmetric_fraction: 0.10,
            seed: 20418,
            analog_mode: AnalogMode::RoleSwap,
        }
    }
}

impl SynthConfig {
    /// A quick corpus for unit tests: `n` relations, no analog pairs.
    pub fn default_small(seed: u64) -> Self {
        SynthConfig {
            n_relations: 6,
            n_analog_pairs: 1,
            instances_per_relation: 10,
            shortcut_strength: 0.9,
            entity_type_vocab_size: 4,
            template_length: (4, 6),
            symmetric_fraction: 0.2,
            seed,
            analog_mode: AnalogMode::RoleSwap,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::BadSynthConfig(msg));
        if self.n_relations == 0 {
            return bad("n_relations must be positive".into());
        }
        if 2 * self.n_analog_pairs > self.n_relations {
            return bad(format!(
                "2*n_analog_pairs = {} exceeds n_relations = {}",
                2 * self.n_analog_pairs,
                self.n_relations
            ));
        }
        if self.instances_per_relation == 0 {
            return bad("instances_per_relation must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.shortcut_strength) {
            return bad(format!(
                "shortcut_strength {} outside [0,1]",
                self.shortcut_strength
            ));
        }
        if !(0.0..=1.0).contains(&self.symmetric_fraction) {
            return bad(format!(
                "symmetric_fraction {} outside [0,1]",
                self.symmetric_fraction
            ));
        }
        if self.entity_type_vocab_size < 2 {
            return bad("entity_type_vocab_size must be at least 2".into());
        }
        if self.template_length.0 < 3 || self.template_length.0 > self.template_length.1 {
            return bad(format!(
                "template_length range ({}, {}) is invalid (need 3 <= min <= max)",
                self.template_length.0, self.template_length.1
            ));
        }
        Ok(())
    }
}

/// One relation's template: total length, the two entity slot positions, and
/// the filler word at every other position.
struct Template {
    len: usize,
    slot_a: usize,
    slot_b: usize,
    fillers: BTreeMap<usize, String>,
}

impl Template {
    fn sample(family: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Template {
        let len = rng.gen_range(cfg.template_length.0..=cfg.template_length.1) as usize;
        let slot_a = rng.gen_range(0..len);
        let slot_b = loop {
            let p = rng.gen_range(0..len);
            if p != slot_a {
                break p;
            }
        };
        let mut fillers = BTreeMap::new();
        for pos in 0..len {
            if pos != slot_a && pos != slot_b {
                fillers.insert(pos, format!("w{family:02}_{pos}"));
            }
        }
        Template {
            len,
            slot_a,
            slot_b,
            fillers,
        }
    }

    /// A filler position usable as the discriminative slot in token mode.
    fn disc_pos(&self) -> Option<usize> {
        self.fillers.keys().next().copied()
    }
}

/// Per-relation generation plan.
struct RelPlan {
    template_family: usize,
    head_type: usize,
    tail_type: usize,
    /// Head entity goes to slot_b instead of slot_a.
    head_at_b: bool,
    /// Token-mode override: (position, token).
    disc_token: Option<(usize, String)>,
}

fn entity_token(ty: usize, idx: usize) -> String {
    format!("ent{ty:02}_{idx:02}")
}

fn draw_entity(ty: usize, rng: &mut ChaCha8Rng) -> String {
    entity_token(ty, rng.gen_range(0..ENTITIES_PER_TYPE))
}

/// Generate a validated synthetic dataset, deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, CorpusError> {
    cfg.validate()?;
    let n = cfg.n_relations as usize;
    let n_pairs = cfg.n_analog_pairs as usize;
    let n_types = cfg.entity_type_vocab_size as usize;
    let mut rng = seeding::rng(cfg.seed, &[ns::SYNTH]);

    // Pair members take ids (0,1), (2,3), ... ; the rest are singles. Task
    // streams shuffle relations anyway, so id layout carries no signal.
    let mut relations = Vec::with_capacity(n);
    let mut plans: Vec<RelPlan> = Vec::with_capacity(n);
    let mut templates: Vec<Template> = Vec::new();

    // Pairs and singles draw their type signatures from disjoint halves of
    // the type vocabulary (when it is large enough to split), so the
    // augmentation constraints of singles do not crowd the directions the
    // analog pairs depend on.
    let pair_types = if n_pairs > 0 && n > 2 * n_pairs && n_types >= 4 {
        (3 * n_types).div_ceil(5).max(2)
    } else {
        n_types
    };
    for pair in 0..n_pairs {
        let family = templates.len();
        templates.push(Template::sample(family, cfg, &mut rng));
        let head_type = rng.gen_range(0..pair_types);
        let tail_type = loop {
            let t = rng.gen_range(0..pair_types);
            if t != head_type {
                break t;
            }
        };
        let (a, b) = (2 * pair as RelId, 2 * pair as RelId + 1);
        relations.push(Relation {
            rel_id: a,
            name: format!("pair{pair:02}_fwd"),
            symmetric: false,
            analog_of: Some(b),
        });
        relations.push(Relation {
            rel_id: b,
            name: format!("pair{pair:02}_rev"),
            symmetric: false,
            analog_of: Some(a),
        });
        match cfg.analog_mode {
            AnalogMode::RoleSwap => {
                // Same surface distribution; only the role labels change.
                plans.push(RelPlan {
                    template_family: family,
                    head_type,
                    tail_type,
                    head_at_b: false,
                    disc_token: None,
                });
                plans.push(RelPlan {
                    template_family: family,
                    head_type: tail_type,
                    tail_type: head_type,
                    head_at_b: true,
                    disc_token: None,
                });
            }
            AnalogMode::Token => {
                let pos = templates[family]
                    .disc_pos()
                    .expect("templates of length >= 3 have a filler slot");
                plans.push(RelPlan {
                    template_family: family,
                    head_type,
                    tail_type,
                    head_at_b: false,
                    disc_token: Some((pos, format!("w{family:02}_da"))),
                });
                plans.push(RelPlan {
                    template_family: family,
                    head_type,
                    tail_type,
                    head_at_b: false,
                    disc_token: Some((pos, format!("w{family:02}_db"))),
                });
            }
        }
    }

    // Symmetric flags go to single relations; a symmetric relation draws
    // head and tail from one type pool so reversal preserves its surface
    // distribution.
    let n_singles = n - 2 * n_pairs;
    let n_symmetric = ((cfg.symmetric_fraction * n as f64).round() as usize).min(n_singles);
    let mut single_ids: Vec<usize> = (0..n_singles).collect();
    single_ids.shuffle(&mut rng);
    let symmetric_singles: Vec<usize> = single_ids[..n_symmetric].to_vec();

    let single_base = if pair_types < n_types { pair_types } else { 0 };
    for s in 0..n_singles {
        let family = templates.len();
        templates.push(Template::sample(family, cfg, &mut rng));
        let symmetric = symmetric_singles.contains(&s);
        let head_type = rng.gen_range(single_base..n_types);
        let tail_type = if symmetric {
            head_type
        } else {
            loop {
                let t = rng.gen_range(single_base..n_types);
                if t != head_type {
                    break t;
                }
            }
        };
        let id = (2 * n_pairs + s) as RelId;
        relations.push(Relation {
            rel_id: id,
            name: format!("solo{s:02}"),
            symmetric,
            analog_of: None,
        });
        plans.push(RelPlan {
            template_family: family,
            head_type,
            tail_type,
            head_at_b: false,
            disc_token: None,
        });
    }

    let mut instances = Vec::with_capacity(n * cfg.instances_per_relation as usize);
    for rel in &relations {
        let plan = &plans[rel.rel_id as usize];
        let template = &templates[plan.template_family];
        let mut rng = seeding::rng(cfg.seed, &[ns::SYNTH, 1, rel.rel_id as u64]);
        for i in 0..cfg.instances_per_relation {
            let on_signature = rng.gen_bool(cfg.shortcut_strength);
            let (head_tok, tail_tok) = if on_signature {
                (
                    draw_entity(plan.head_type, &mut rng),
                    draw_entity(plan.tail_type, &mut rng),
                )
            } else {
                let ht = rng.gen_range(0..n_types);
                let tt = rng.gen_range(0..n_types);
                (draw_entity(ht, &mut rng), draw_entity(tt, &mut rng))
            };
            let (head_pos, tail_pos) = if plan.head_at_b {
                (template.slot_b, template.slot_a)
            } else {
                (template.slot_a, template.slot_b)
            };
            let mut tokens = Vec::with_capacity(template.len);
            for pos in 0..template.len {
                if pos == head_pos {
                    tokens.push(head_tok.clone());
                } else if pos == tail_pos {
                    tokens.push(tail_tok.clone());
                } else if let Some((dp, dt)) = &plan.disc_token {
                    if *dp == pos {
                        tokens.push(dt.clone());
                    } else {
                        tokens.push(template.fillers[&pos].clone());
                    }
                } else {
                    tokens.push(template.fillers[&pos].clone());
                }
            }
            instances.push(Instance {
                instance_id: format!("{}_{i:03}", rel.name),
                tokens,
                head_span: Span::new(head_pos, head_pos + 1),
                tail_span: Span::new(tail_pos, tail_pos + 1),
                relation: rel.rel_id,
            });
        }
    }

    let ds = Dataset {
        relations,
        instances,
        splits: BTreeMap::new(),
    };
    let ds = assign_splits(ds, (3, 1, 1), seeding::derive(cfg.seed, &[ns::SYNTH, 2]))?;
    Ok(ds)
}

/// Entity-type index of a generated entity token, if it is one.
pub fn entity_type_of(token: &str) -> Option<usize> {
    let rest = token.strip_prefix("ent")?;
    let (ty, _) = rest.split_once('_')?;
    ty.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_pairs_means_no_analog_links() {
        let cfg = SynthConfig {
            n_analog_pairs: 0,
            n_relations: 5,
            instances_per_relation: 6,
            ..SynthConfig::default_small(3)
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds.relations.iter().all(|r| r.analog_of.is_none()));
    }

    #[test]
    fn analog_links_are_an_involution() {
        let ds = generate_synthetic(&SynthConfig::default_small(9)).unwrap();
        for rel in &ds.relations {
            if let Some(other) = rel.analog_of {
                assert_eq!(ds.relations[other as usize].analog_of, Some(rel.rel_id));
                assert_ne!(other, rel.rel_id);
            }
        }
    }

    #[test]
    fn full_shortcut_strength_pins_entity_types() {
        let cfg = SynthConfig {
            shortcut_strength: 1.0,
            ..SynthConfig::default_small(5)
        };
        let ds = generate_synthetic(&cfg).unwrap();
        // Per relation, all head tokens share one type and all tail tokens
        // share one type.
        for rel in &ds.relations {
            let mut head_types = std::collections::BTreeSet::new();
            let mut tail_types = std::collections::BTreeSet::new();
            for inst in ds.instances.iter().filter(|i| i.relation == rel.rel_id) {
                head_types.insert(entity_type_of(&inst.tokens[inst.head_span.start]).unwrap());
                tail_types.insert(entity_type_of(&inst.tokens[inst.tail_span.start]).unwrap());
            }
            assert_eq!(head_types.len(), 1, "{}", rel.name);
            assert_eq!(tail_types.len(), 1, "{}", rel.name);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default_small(123);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = SynthConfig {
            n_relations: 0,
            ..SynthConfig::default_small(1)
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SynthConfig {
            n_relations: 3,
            n_analog_pairs: 2,
            ..SynthConfig::default_small(1)
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SynthConfig {
            shortcut_strength: 1.5,
            ..SynthConfig::default_small(1)
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn role_swap_pairs_share_surface_vocabulary() {
        let ds = generate_synthetic(&SynthConfig::default_small(17)).unwrap();
        let a = &ds.relations[0];
        let b = &ds.relations[1];
        assert_eq!(a.analog_of, Some(b.rel_id));
        // Fillers (non-entity tokens) of the two members coincide.
        let fillers = |rel: RelId| -> std::collections::BTreeSet<String> {
            ds.instances
                .iter()
                .filter(|i| i.relation == rel)
                .flat_map(|i| {
                    i.tokens
                        .iter()
                        .enumerate()
                        .filter(|(p, _)| {
                            *p != i.head_span.start && *p != i.tail_span.start
                        })
                        .map(|(_, t)| t.clone())
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert_eq!(fillers(a.rel_id), fillers(b.rel_id));
    }

    #[test]
    fn zero_shortcut_strength_spreads_types_uniformly() {
        // Chi-square sanity check at desk scale: with no planted shortcut,
        // per-relation head-type counts should not deviate wildly from the
        // uniform global pool.
        let cfg = SynthConfig {
            n_relations: 4,
            n_analog_pairs: 0,
            instances_per_relation: 400,
            shortcut_strength: 0.0,
            entity_type_vocab_size: 4,
            template_length: (4, 6),
            symmetric_fraction: 0.0,
            seed: 31,
            analog_mode: AnalogMode::RoleSwap,
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for rel in &ds.relations {
            let mut counts = vec![0usize; 4];
            let mut total = 0usize;
            for inst in ds.instances.iter().filter(|i| i.relation == rel.rel_id) {
                counts[entity_type_of(&inst.tokens[inst.head_span.start]).unwrap()] += 1;
                total += 1;
            }
            let expected = total as f64 / 4.0;
            let chi2: f64 = counts
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            // 3 degrees of freedom; 16.27 is the 0.1% critical value.
            assert!(chi2 < 16.27, "{}: chi2 = {chi2}", rel.name);
        }
    }
}
