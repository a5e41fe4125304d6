use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rkstage::precond::{PreconditionerKind, StagePreconditioner, SystemForm};
use rkstage::sparsela::{fgmres, KrylovSettings, LinearOperator};
use rkstage::stepper::{StageFormulation, TimeStepper};
use rkstage::tableaux::{alexander_dirk, radau_iia};
use rkstage_bench::{heat_2d, heat_2d_mms, heat_stage_system, probe_vector};

const N: usize = 32;

fn kronecker_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("kronecker_apply");
    for s in 1..=4 {
        let (op, _) = heat_stage_system(&radau_iia(s).unwrap(), N, SystemForm::AI);
        let x = probe_vector(op.dim());
        group.bench_with_input(BenchmarkId::from_parameter(s), &s, |b, _| {
            b.iter(|| op.apply_checked(&x).unwrap())
        });
    }
    group.finish();
}

fn preconditioned_solve(c: &mut Criterion) {
    let (m, k) = heat_2d(N);
    let dt = 1.0 / N as f64;
    let tab = radau_iia(3).unwrap();
    let (op, rhs) = heat_stage_system(&tab, N, SystemForm::AI);
    let settings = KrylovSettings::default();
    let mut group = c.benchmark_group("fgmres_radau3");
    for kind in PreconditionerKind::ALL {
        let pc = StagePreconditioner::build(kind, &tab, m.clone(), k.clone(), dt, SystemForm::AI)
            .unwrap();
        group.bench_function(kind.flag(), |b| {
            b.iter(|| fgmres(&op, Some(&pc), &rhs, &settings).unwrap())
        });
    }
    group.finish();
}

fn preconditioner_setup(c: &mut Criterion) {
    let (m, k) = heat_2d(N);
    let tab = radau_iia(3).unwrap();
    c.bench_function("rana_ld_setup_radau3", |b| {
        b.iter(|| {
            StagePreconditioner::build(
                PreconditionerKind::RanaLD,
                &tab,
                m.clone(),
                k.clone(),
                1.0 / N as f64,
                SystemForm::IA,
            )
            .unwrap()
        })
    });
}

fn time_step(c: &mut Criterion) {
    let p = heat_2d_mms(N);
    let dt = 1.0 / N as f64;
    let mut group = c.benchmark_group("heat_step");
    let cases = [
        (
            "radau3_deriv_ai",
            radau_iia(3).unwrap(),
            StageFormulation::StageDerivativeAI,
        ),
        (
            "radau3_deriv_ia",
            radau_iia(3).unwrap(),
            StageFormulation::StageDerivativeIA,
        ),
        (
            "radau3_value",
            radau_iia(3).unwrap(),
            StageFormulation::StageValue,
        ),
        ("alexander_dirk", alexander_dirk(), StageFormulation::Dirk),
    ];
    for (name, tab, form) in cases {
        let mut st = TimeStepper::new(tab, form, 0.0, dt, p.initial.clone()).unwrap();
        st.step(&p.problem).unwrap();
        group.bench_function(name, |b| b.iter(|| st.step(&p.problem).unwrap()));
    }
    group.finish();
}

criterion_group!(
    benches,
    kronecker_apply,
    preconditioned_solve,
    preconditioner_setup,
    time_step
);
criterion_main!(benches);
