//! Execution-layer observer: recovers value migrations and role assignments
//! from call records and state deltas rather than transfer connectivity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{Amount, NumericMode, BPS_DENOM};
use crate::engine::{delta_of, net_deltas, Address, CallDetail, Deltas, ExecutionTrace, LimitOrderIntent, WorldState};
use crate::numeric::Scalar;
use crate::planner::RelocationPlan;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("asset {asset}: {losers:?} lose and {gainers:?} gain; pairing is not unique")]
    AmbiguousPairing {
        asset: String,
        losers: Vec<Address>,
        gainers: Vec<Address>,
    },
    #[error("trace and world states disagree on {address}/{asset}")]
    StateMismatch { address: Address, asset: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticRole {
    Principal,
    Executor,
    Beneficiary,
    Operator,
}

/// Value leaving `principal` in `source_asset` and realized by
/// `beneficiary` in `asset` within one bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub principal: Address,
    pub beneficiary: Address,
    pub asset: String,
    pub amount: Scalar,
    pub source_asset: String,
    pub source_amount: Scalar,
    /// `"intent"` when paired through a signed order, `"deltas"` otherwise.
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub bundle_id: String,
    pub migrations: Vec<Migration>,
    pub roles: BTreeMap<Address, BTreeSet<SemanticRole>>,
    /// Beneficiary gain over principal loss for the first same-asset
    /// migration.
    pub efficiency: Option<Scalar>,
    /// Net deltas of the initiator when it is not itself a principal.
    pub executor_profit: BTreeMap<String, Scalar>,
    pub atomic: bool,
}

impl MigrationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn has_migration(&self, principal: &Address, beneficiary: &Address, asset: &str) -> Option<&Migration> {
        self.migrations
            .iter()
            .find(|m| &m.principal == principal && &m.beneficiary == beneficiary && m.asset == asset)
    }

    /// One line per migration, amounts in token units.
    pub fn summary(&self, trace: &ExecutionTrace) -> String {
        let mut s = String::new();
        if self.migrations.is_empty() {
            s.push_str("no migration\n");
        }
        for m in &self.migrations {
            let _ = write!(s, "MIGRATION {} -> {} {} {}", m.principal, m.beneficiary, fmt_tokens(trace, &m.asset, &m.amount), m.asset);
            if m.asset != m.source_asset {
                let _ = write!(s, " (for {} {})", fmt_tokens(trace, &m.source_asset, &m.source_amount), m.source_asset);
            }
            s.push('\n');
        }
        if let Some(eta) = &self.efficiency {
            let _ = writeln!(s, "efficiency {}", eta.to_decimal_string(6));
        }
        s
    }
}

/// A raw trace amount of `symbol` in token units.
pub fn fmt_tokens(trace: &ExecutionTrace, symbol: &str, v: &Scalar) -> String {
    match (trace.numeric_mode, trace.asset(symbol)) {
        (NumericMode::Integer, Some(a)) => v.scale_pow10(-(a.decimals as i32)).to_decimal_string(a.decimals as u32),
        _ => v.to_decimal_string(6),
    }
}

/// Recovers migrations after checking that the trace explains the change
/// from `before` to `after`.
pub fn recover_migrations(
    trace: &ExecutionTrace,
    before: &WorldState,
    after: &WorldState,
    intents: &[LimitOrderIntent],
) -> Result<MigrationReport, TraceError> {
    let deltas = net_deltas(trace);
    let mut addrs: BTreeSet<&Address> = trace.labels.keys().collect();
    addrs.extend(deltas.keys().map(|(a, _)| a));
    for addr in addrs {
        for asset in &trace.assets {
            let observed = after.holdings(addr, &asset.symbol).value() - before.holdings(addr, &asset.symbol).value();
            if observed != delta_of(&deltas, addr, &asset.symbol) {
                return Err(TraceError::StateMismatch {
                    address: addr.clone(),
                    asset: asset.symbol.clone(),
                });
            }
        }
    }
    recover_from_trace(trace, intents)
}

/// Recovers migrations from a trace alone, using its role labels to set
/// contracts aside.
pub fn recover_from_trace(trace: &ExecutionTrace, intents: &[LimitOrderIntent]) -> Result<MigrationReport, TraceError> {
    let deltas = net_deltas(trace);
    let initiator = &trace.initiator;
    let is_contract = |a: &Address| trace.label(a).is_contract();
    let mut migrations = Vec::new();
    let mut roles: BTreeMap<Address, BTreeSet<SemanticRole>> = BTreeMap::new();
    let mut role = |a: &Address, r: SemanticRole| {
        roles.entry(a.clone()).or_default().insert(r);
    };

    // Signed orders pair maker and receiver directly.
    let mut explained: BTreeSet<(Address, String)> = BTreeSet::new();
    let mut pulled: BTreeSet<Address> = BTreeSet::new();
    let mut filled = false;
    for call in &trace.calls {
        match &call.detail {
            CallDetail::Pull { owner } => {
                pulled.insert(owner.clone());
            }
            CallDetail::Fill {
                order_id,
                maker,
                receiver,
                maker_asset,
                taker_asset,
                ..
            } => {
                filled = true;
                let known = intents.is_empty() || intents.iter().any(|o| &o.order_id == order_id);
                if !known {
                    continue;
                }
                pulled.insert(maker.clone());
                let gain = delta_of(&deltas, receiver, taker_asset);
                let loss = -delta_of(&deltas, maker, maker_asset);
                if gain.is_positive() && loss.is_positive() {
                    migrations.push(Migration {
                        principal: maker.clone(),
                        beneficiary: receiver.clone(),
                        asset: taker_asset.clone(),
                        amount: gain,
                        source_asset: maker_asset.clone(),
                        source_amount: loss,
                        evidence: "intent".into(),
                    });
                    explained.insert((maker.clone(), maker_asset.clone()));
                    explained.insert((receiver.clone(), taker_asset.clone()));
                    role(maker, SemanticRole::Principal);
                    role(receiver, SemanticRole::Beneficiary);
                }
            }
            _ => {}
        }
    }

    // Same-asset pairing of the remaining strict losers and gainers.
    let mut initiator_is_principal = false;
    for asset in &trace.assets {
        let sym = &asset.symbol;
        let mut losers = Vec::new();
        let mut gainers = Vec::new();
        for ((addr, a), v) in &deltas {
            if a != sym || is_contract(addr) || explained.contains(&(addr.clone(), sym.clone())) {
                continue;
            }
            if v.is_negative() {
                losers.push(addr.clone());
            } else if v.is_positive() {
                gainers.push(addr.clone());
            }
        }
        let pulled_losers: Vec<Address> = losers.iter().filter(|a| pulled.contains(*a)).cloned().collect();
        let principals = if pulled_losers.is_empty() { losers.clone() } else { pulled_losers };
        let initiator_principal = principals.contains(initiator);
        let beneficiaries: Vec<Address> = gainers
            .into_iter()
            .filter(|g| (initiator_principal || g != initiator) && !principals.contains(g))
            .collect();
        let principals: Vec<Address> = if principals.len() > 1 && !initiator_principal {
            principals.into_iter().filter(|p| p != initiator).collect()
        } else {
            principals
        };
        match (principals.as_slice(), beneficiaries.as_slice()) {
            ([p], [b]) => {
                initiator_is_principal |= p == initiator;
                migrations.push(Migration {
                    principal: p.clone(),
                    beneficiary: b.clone(),
                    asset: sym.clone(),
                    amount: delta_of(&deltas, b, sym),
                    source_asset: sym.clone(),
                    source_amount: -delta_of(&deltas, p, sym),
                    evidence: "deltas".into(),
                });
                role(p, SemanticRole::Principal);
                role(b, SemanticRole::Beneficiary);
            }
            ([], _) | (_, []) => {}
            (ps, bs) => {
                return Err(TraceError::AmbiguousPairing {
                    asset: sym.clone(),
                    losers: ps.to_vec(),
                    gainers: bs.to_vec(),
                })
            }
        }
    }

    let executor_profit: BTreeMap<String, Scalar> = if initiator_is_principal {
        BTreeMap::new()
    } else {
        trace
            .assets
            .iter()
            .map(|a| (a.symbol.clone(), delta_of(&deltas, initiator, &a.symbol)))
            .filter(|(_, v)| !v.is_zero())
            .collect()
    };
    if !initiator_is_principal && !migrations.is_empty() {
        role(initiator, if filled { SemanticRole::Executor } else { SemanticRole::Operator });
    }
    let efficiency = migrations
        .iter()
        .find(|m| m.asset == m.source_asset)
        .map(|m| &m.amount / &m.source_amount);
    Ok(MigrationReport {
        bundle_id: trace.bundle_id.clone(),
        migrations,
        roles,
        efficiency,
        executor_profit,
        atomic: trace.events.iter().all(|e| e.bundle_id == trace.bundle_id),
    })
}

/// Split of a relocation's cost into pool fees and the remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossDecomposition {
    pub asset: String,
    pub principal_loss: Scalar,
    pub beneficiary_gain: Scalar,
    pub total_loss: Scalar,
    /// Sum over trades of `amount_in · fee`, valued in the migrated asset
    /// at each trade's execution price.
    pub protocol_fees: Scalar,
    /// `total_loss − protocol_fees`; negative when fees exceed the loss.
    pub slippage_imbalance: Scalar,
    /// Sum of the per-trade fee rates.
    pub nominal_fee_rate: Scalar,
    /// Operator's net outlay in the migrated asset.
    pub operator_subsidy: Scalar,
}

/// All quantities are in the trace's raw units.
pub fn loss_decomposition(trace: &ExecutionTrace, plan: &RelocationPlan) -> LossDecomposition {
    let deltas: Deltas = net_deltas(trace);
    let sym = &plan.asset.symbol;
    let mut fees = Scalar::zero();
    let mut rate = Scalar::zero();
    for call in &trace.calls {
        if let CallDetail::Trade {
            input_asset,
            amount_in,
            output_asset,
            amount_out,
            fee_bps,
            ..
        } = &call.detail
        {
            let f = Scalar::from_ratio(*fee_bps as i64, BPS_DENOM as i64);
            let fee_in = amount_in.value() * &f;
            let valued = if input_asset == sym {
                fee_in
            } else if output_asset == sym && !amount_in.is_zero() {
                &(&fee_in * amount_out.value()) / amount_in.value()
            } else {
                continue;
            };
            fees = &fees + &valued;
            rate = &rate + &f;
        }
    }
    let a: &Amount = &plan.a;
    let gain = delta_of(&deltas, &plan.beneficiary, sym);
    let total = a.value() - &gain;
    let subsidy = if plan.operator == plan.principal {
        Scalar::zero()
    } else {
        -delta_of(&deltas, &plan.operator, sym)
    };
    LossDecomposition {
        asset: sym.clone(),
        principal_loss: a.value().clone(),
        beneficiary_gain: gain,
        slippage_imbalance: &total - &fees,
        total_loss: total,
        protocol_fees: fees,
        nominal_fee_rate: rate,
        operator_subsidy: subsidy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::execute_bundle;
    use crate::scenario::{build_peb_scenario, builtin, PebParams};

    fn report(name: &str) -> (MigrationReport, crate::scenario::Scenario, ExecutionTrace) {
        let s = builtin(name).unwrap();
        let (after, trace) = execute_bundle(&s.world, &s.bundle).unwrap();
        (recover_migrations(&trace, &s.world, &after, &s.intents).unwrap(), s, trace)
    }

    #[test]
    fn zero_fee_relocation_has_unit_efficiency() {
        let (r, _, _) = report("relocation_sym");
        let m = r.has_migration(&Address::new("P"), &Address::new("B"), "A").unwrap();
        assert_eq!(m.amount, Scalar::from_int(10));
        assert_eq!(r.efficiency, Some(Scalar::one()));
        assert!(r.executor_profit.is_empty());
        assert!(r.roles[&Address::new("O")].contains(&SemanticRole::Operator));
        assert!(r.atomic);
    }

    #[test]
    fn operator_as_principal_still_migrates() {
        let (r, _, _) = report("relocation_operator_is_principal");
        assert!(r.has_migration(&Address::new("P"), &Address::new("B"), "A").is_some());
        assert_eq!(r.efficiency, Some(Scalar::one()));
    }

    #[test]
    fn peb_roles_and_cross_asset_migration() {
        let (r, s, _) = report("peb_limit_order");
        let (p, e, b) = (Address::new("P"), Address::new("E"), Address::new("B"));
        let m = r.has_migration(&p, &b, "DAI").unwrap();
        assert_eq!(m.source_asset, "USDC");
        assert_eq!(&m.amount, s.ground_truth.unwrap().amount.value());
        assert_eq!(r.roles[&p], [SemanticRole::Principal].into());
        assert_eq!(r.roles[&e], [SemanticRole::Executor].into());
        assert_eq!(r.roles[&b], [SemanticRole::Beneficiary].into());
        assert!(r.executor_profit["DAI"].is_positive());
    }

    #[test]
    fn receiver_equal_to_maker() {
        let s = build_peb_scenario(&PebParams {
            receiver_is_maker: true,
            ..PebParams::default()
        })
        .unwrap();
        let (_, trace) = s.run().unwrap();
        let r = recover_from_trace(&trace, &s.intents).unwrap();
        assert_eq!(r.migrations[0].beneficiary, Address::new("P"));
    }

    #[test]
    fn benign_routes_have_no_migration() {
        for name in ["benign_arbitrage", "benign_routing"] {
            let (r, _, _) = report(name);
            assert!(r.migrations.is_empty(), "{name}");
        }
    }

    #[test]
    fn state_mismatch_is_detected() {
        let s = builtin("relocation_sym").unwrap();
        let (_, trace) = s.run().unwrap();
        assert!(matches!(
            recover_migrations(&trace, &s.world, &s.world, &[]),
            Err(TraceError::StateMismatch { .. })
        ));
    }

    #[test]
    fn two_losers_are_ambiguous() {
        let mut s = builtin("relocation_sym").unwrap();
        // Replace the pull with a plain transfer and add a second loser.
        let q = Address::new("Q");
        s.world.label(&q, crate::engine::Role::Unlabeled);
        let a = s.world.assets["A"].clone();
        s.world.set_balance(&q, &a, Amount::from_int(1));
        s.bundle.actions.push(crate::engine::Action::Transfer {
            from: q,
            to: Address::new("B"),
            asset: a,
            amount: Amount::from_int(1),
        });
        let (_, mut trace) = s.run().unwrap();
        trace.calls.retain(|c| !matches!(c.detail, CallDetail::Pull { .. }));
        assert!(matches!(recover_from_trace(&trace, &[]), Err(TraceError::AmbiguousPairing { .. })));
    }

    #[test]
    fn zero_fee_has_no_losses() {
        let (_, s, trace) = report("relocation_sym");
        let d = loss_decomposition(&trace, s.plan.as_ref().unwrap());
        assert!(d.protocol_fees.is_zero() && d.slippage_imbalance.is_zero() && d.total_loss.is_zero());
    }
}
