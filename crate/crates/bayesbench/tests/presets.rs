use bayesbench::{BAYESOPT1, BAYESOPT2};
use bayesopt::bench::{Benchmark, Preset};
use bayesopt::config::LearningType;

#[test]
fn bayesopt1_preset() {
    let p = Preset::parse(BAYESOPT1).unwrap();
    assert_eq!(p.params.l_type, LearningType::Map);
    assert_eq!(p.params.learn_frequency, 20);
    assert_eq!(p.params.crit_name, "cEI");
    assert_eq!(p.params.kernel_name, "kMaternISO5");
    let n: Vec<usize> = Benchmark::ALL
        .iter()
        .map(|b| p.params_for(*b, 200).unwrap().n_init_samples)
        .collect();
    assert_eq!(n, [5, 5, 10]);
}

#[test]
fn bayesopt2_preset() {
    let p = Preset::parse(BAYESOPT2).unwrap();
    assert_eq!(p.params.l_type, LearningType::Mcmc);
    assert_eq!((p.params.mcmc_particles, p.params.mcmc_burnin), (10, 100));
    assert_eq!(p.params.learn_frequency, 1);
    let c = p.params_for(Benchmark::Camelback, 100).unwrap();
    assert_eq!((c.n_init_samples, c.n_iterations), (2, 98));
}
