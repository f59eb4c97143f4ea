//! Randomized and library-wide property suites shared by the command-line
//! self-test and the acceptance target.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::amm::{Amount, AssetId, NumericMode, PoolState};
use crate::engine::{delta_of, execute_bundle, net_deltas, Address, Role};
use crate::graph::{attribute, build_graph, canonical_form, Quantization};
use crate::numeric::Scalar;
use crate::planner::{
    build_relocation_bundle, plan_relocation, relocation_world, ExtractionStyle, ExtractionTarget, FlashChoice,
    FundingPolicy, PlanRequest,
};
use crate::scenario::{build_benign_twin, build_peb_scenario, library, PebParams, PebVariant};
use crate::tracer::recover_migrations;

pub const DEFAULT_SEED: u64 = 0x5eed_2025;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteOutcome {
    fn new(name: &str) -> Self {
        SuiteOutcome {
            name: name.into(),
            cases: 0,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok && self.failures.len() < 20 {
            self.failures.push(what());
        }
    }
}

/// A zero-fee pool pair at a common price with independent depths, and a
/// principal below a quarter of the shallower pool.
fn random_zero_fee_case(rng: &mut ChaCha8Rng) -> (PoolState, PoolState, Amount) {
    let a_id = AssetId::new("A", 18).expect("asset");
    let b_id = AssetId::new("B", 18).expect("asset");
    let price = Scalar::from_ratio(rng.gen_range(1i64..=10_000), rng.gen_range(1i64..=1_000));
    let depth1 = Scalar::from_int(rng.gen_range(10i64..=1_000_000));
    let depth2 = Scalar::from_int(rng.gen_range(10i64..=1_000_000));
    let shallow = depth1.clone().min(depth2.clone());
    let a = &shallow * &Scalar::from_ratio(rng.gen_range(1i64..=250), 1000);
    let mk = |id: &str, d: &Scalar| {
        PoolState::new(
            id,
            a_id.clone(),
            b_id.clone(),
            Amount::new(d.clone()).expect("positive"),
            Amount::new(d * &price).expect("positive"),
            0,
            NumericMode::Exact,
        )
        .expect("pool")
    };
    (mk("P1", &depth1), mk("P2", &depth2), Amount::new(a).expect("positive"))
}

fn zero_fee_request(p1: PoolState, p2: PoolState, a: Amount, operator: &str) -> PlanRequest {
    PlanRequest {
        principal: Address::new("P"),
        beneficiary: Address::new("B"),
        operator: Address::new(operator),
        flash_provider: Address::new("F"),
        asset: p1.asset0.clone(),
        pool1: p1,
        pool2: p2,
        a,
        flash: FlashChoice::Solve,
        target: ExtractionTarget::ReturnPrincipal,
        funding_policy: FundingPolicy::default(),
        extraction_style: ExtractionStyle::default(),
    }
}

/// Zero-fee relocation moves exactly `a` from P to B, nets the operator and
/// flash provider to zero and restores both pools.
pub fn zero_fee_relocation(cases: usize, seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("zero_fee_relocation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        out.cases += 1;
        let (p1, p2, a) = random_zero_fee_case(&mut rng);
        let plan = match plan_relocation(&zero_fee_request(p1.clone(), p2.clone(), a.clone(), "O")) {
            Ok(p) => p,
            Err(e) => {
                out.check(false, || format!("case {i}: planning failed: {e}"));
                continue;
            }
        };
        let world = relocation_world(&plan);
        let bundle = build_relocation_bundle(&plan, &format!("zero-fee-{i}"));
        let (after, trace) = match execute_bundle(&world, &bundle) {
            Ok(r) => r,
            Err(e) => {
                out.check(false, || format!("case {i}: execution failed: {e}"));
                continue;
            }
        };
        let d = net_deltas(&trace);
        let av = a.value();
        out.check(delta_of(&d, &plan.principal, "A") == -av.clone(), || format!("case {i}: principal delta"));
        out.check(&delta_of(&d, &plan.beneficiary, "A") == av, || format!("case {i}: beneficiary delta"));
        for who in [&plan.operator, &plan.flash_provider] {
            for sym in ["A", "B"] {
                out.check(delta_of(&d, who, sym).is_zero(), || format!("case {i}: {who} nets non-zero {sym}"));
            }
        }
        for (before, id) in [(&p1, "P1"), (&p2, "P2")] {
            let now = after.pool(id).expect("pool");
            out.check(
                now.reserve0 == before.reserve0 && now.reserve1 == before.reserve1,
                || format!("case {i}: {id} not restored"),
            );
        }
    }
    out
}

/// With the principal as its own operator the transfer layer still cannot
/// attribute the migration, while the execution layer recovers it exactly.
pub fn operator_is_principal(cases: usize, seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("operator_is_principal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        out.cases += 1;
        let (p1, p2, a) = random_zero_fee_case(&mut rng);
        let Ok(plan) = plan_relocation(&zero_fee_request(p1, p2, a.clone(), "P")) else {
            out.check(false, || format!("case {i}: planning failed"));
            continue;
        };
        let world = relocation_world(&plan);
        let Ok((after, trace)) = execute_bundle(&world, &build_relocation_bundle(&plan, "o-is-p")) else {
            out.check(false, || format!("case {i}: execution failed"));
            continue;
        };
        let g = build_graph(&trace, &plan.asset).with_world_balances(&world);
        match attribute(&g, &plan.principal, &plan.beneficiary, &Quantization::Auto) {
            Ok(r) => out.check(!r.recoverable && r.p_to_b_min.is_zero(), || format!("case {i}: attributable {r:?}")),
            Err(e) => out.check(false, || format!("case {i}: attribution error {e}")),
        }
        match recover_migrations(&trace, &world, &after, &[]) {
            Ok(r) => out.check(
                r.has_migration(&plan.principal, &plan.beneficiary, "A").map(|m| &m.amount) == Some(a.value()),
                || format!("case {i}: migration not recovered"),
            ),
            Err(e) => out.check(false, || format!("case {i}: tracer error {e}")),
        }
    }
    out
}

/// Parameterizations of the limit-order case, varied over size, price,
/// depth, fee, numeric mode, routing and receiver.
pub fn peb_parameterizations() -> Vec<PebParams> {
    let base = PebParams::default();
    let mut v = Vec::new();
    let sizes = [("1000", "995"), ("250", "248.75"), ("5000", "4975"), ("38.2", "38")];
    let depths = [("5000000", "5000000"), ("2000000", "2010000"), ("800000", "805000")];
    let fees = [1u32, 5, 30];
    let mut k = 0;
    for (making, taking) in sizes {
        for (dm, dt) in depths {
            let fee = fees[k % fees.len()];
            v.push(PebParams {
                name: format!("peb-{k}"),
                making: making.into(),
                taking: taking.into(),
                pool_maker_reserve: dm.into(),
                pool_taker_reserve: dt.into(),
                fee_bps: fee,
                mode: if k % 2 == 0 { NumericMode::Integer } else { NumericMode::Exact },
                route_via_settlement: k % 3 != 1,
                receiver_is_maker: k % 5 == 4,
                ..base.clone()
            });
            k += 1;
        }
    }
    v
}

/// Flash-loan and flash-swap executions of the same order leave identical
/// net deltas.
pub fn peb_variant_equivalence() -> SuiteOutcome {
    let mut out = SuiteOutcome::new("peb_variant_equivalence");
    for params in peb_parameterizations() {
        out.cases += 1;
        let loan = build_peb_scenario(&params).and_then(|s| Ok(s.run()?));
        let swap = build_peb_scenario(&PebParams {
            variant: PebVariant::FlashSwap,
            ..params.clone()
        })
        .and_then(|s| Ok(s.run()?));
        match (loan, swap) {
            (Ok((_, t1)), Ok((_, t2))) => {
                out.check(net_deltas(&t1) == net_deltas(&t2), || format!("{}: deltas differ", params.name))
            }
            (a, b) => out.check(false, || format!("{}: {:?} / {:?}", params.name, a.err(), b.err())),
        }
    }
    out
}

/// Every library relocation has the same label-erased graph as its twin,
/// and one extra edge breaks the equality.
pub fn twin_indistinguishability() -> SuiteOutcome {
    let mut out = SuiteOutcome::new("twin_indistinguishability");
    let scenarios = match library() {
        Ok(s) => s,
        Err(e) => {
            out.check(false, || format!("library: {e}"));
            return out;
        }
    };
    for s in scenarios.iter().filter(|s| s.is_relocation()) {
        out.cases += 1;
        let twin = build_benign_twin(s);
        let (Ok((_, t1)), Ok((_, t2))) = (s.run(), twin.run()) else {
            out.check(false, || format!("{}: execution failed", s.name));
            continue;
        };
        let asset = &s.plan.as_ref().expect("relocation plan").asset;
        let (g1, g2) = (build_graph(&t1, asset), build_graph(&t2, asset));
        out.check(canonical_form(&g1) == canonical_form(&g2), || format!("{}: twin differs", s.name));
        let anyone: BTreeSet<&Address> = g2.nodes.iter().filter(|n| g2.labels.get(*n) == Some(&Role::Unlabeled)).collect();
        if let Some(n) = anyone.iter().next() {
            let perturbed = g2.with_extra_edge(n, n, Amount::from_int(1));
            out.check(canonical_form(&g1) != canonical_form(&perturbed), || format!("{}: perturbation undetected", s.name));
        }
    }
    out
}

pub fn run_all(cases: usize, seed: u64) -> Vec<SuiteOutcome> {
    vec![
        zero_fee_relocation(cases, seed),
        operator_is_principal(cases.min(200), seed ^ 1),
        peb_variant_equivalence(),
        twin_indistinguishability(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_samples() {
        for o in run_all(25, 7) {
            assert!(o.passed(), "{o:?}");
        }
    }

    #[test]
    fn enough_peb_parameterizations() {
        let p = peb_parameterizations();
        assert!(p.len() >= 10);
        assert!(p.iter().any(|x| x.mode == NumericMode::Exact) && p.iter().any(|x| !x.route_via_settlement));
    }
}
