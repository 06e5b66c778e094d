//! Dynamic behaviour of the simulator must stay inside the static model.

mod common;

use common::{fixture, FIXTURES};
use gfz::distance::{seed_distance, Analysis, TargetSite};
use gfz::engine::insert_call;
use gfz::graph::{CallGraph, Resolution};
use gfz::input::Input;
use gfz::scheduler::RandomSource;
use gfz::sim::execute;

fn random_inputs(sc: &gfz::sim::Scenario, seed: u64, count: usize) -> Vec<Input> {
    let names: Vec<String> = sc.callable_names().map(String::from).collect();
    let mut rng = RandomSource::new(seed);
    (0..count)
        .map(|_| {
            let mut input = Input::default();
            for _ in 0..1 + rng.below(6) {
                let name = names[rng.below(names.len())].clone();
                let at = rng.below(input.len() + 1);
                insert_call(sc, &mut input, at, &name, true, &mut rng);
            }
            input
        })
        .collect()
}

#[test]
fn taken_edges_exist_statically() {
    for name in FIXTURES {
        let sc = fixture(name);
        let cg = CallGraph::build(&sc.program, Resolution::Rta);
        for input in random_inputs(&sc, 7, 300) {
            input.validate().unwrap();
            let exec = execute(&sc, &input).unwrap();
            for &(a, b) in &exec.edges {
                assert_eq!(a.func, b.func);
                assert!(
                    sc.program.cfg(a.func).successors(a.index).contains(&b.index),
                    "{name}: edge {a:?}->{b:?} not in the CFG"
                );
            }
            for &(caller, callee) in &exec.call_edges {
                assert!(cg.contains(caller, callee), "{name}: call {caller:?}->{callee:?} not in the call graph");
            }
            for &b in &exec.covered {
                assert!(sc.program.contains_block(b));
            }
        }
    }
}

#[test]
fn hits_imply_finite_seed_distance() {
    for name in FIXTURES {
        let sc = fixture(name);
        let cg = CallGraph::build(&sc.program, Resolution::Rta);
        for t in sc.targets() {
            let an = Analysis::run(&sc.program, &cg, TargetSite::new(&sc.program, t.block).unwrap());
            for input in random_inputs(&sc, 11, 200) {
                let exec = execute(&sc, &input).unwrap();
                if exec.hit(t.block) {
                    assert_eq!(seed_distance(&an.distances, &exec.covered).finite(), Some(0), "{name}");
                }
            }
        }
    }
}

#[test]
fn execution_is_deterministic() {
    for name in FIXTURES {
        let sc = fixture(name);
        for input in random_inputs(&sc, 3, 50) {
            assert_eq!(execute(&sc, &input).unwrap(), execute(&sc, &input).unwrap());
        }
    }
}
